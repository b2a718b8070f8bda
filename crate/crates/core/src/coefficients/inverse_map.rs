//! The inverse temperature map `h`: `phi(p, h(p, s, x), x) = s`.

use super::PotentialModel;
use crate::error::{Error, Result};

pub const DEFAULT_INVERSION_TOL: f64 = 1e-12;
pub const MAX_DOUBLINGS: usize = 200;
const MAX_REFINE: usize = 200;

/// Solves `phi(p, t, x) = s` for `t`.
///
/// Starts at `s / lambda`, doubles a step outward until the root is
/// bracketed, then runs Newton steps that fall back to bisection whenever
/// they leave the bracket.
pub fn invert_temperature(phi: &PotentialModel, p: &[f64], s: f64, x: &[f64], tol: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot invert non-finite s={s}")));
    }
    let f = |t: f64| phi.eval(p, t, x) - s;
    let t0 = s / phi.ds_lower;
    let f0 = f(t0);
    if f0.abs() <= tol {
        return Ok(t0);
    }
    // phi is increasing in t, so the root lies on the side where f changes sign.
    let dir = if f0 < 0.0 { 1.0 } else { -1.0 };
    let mut step = t0.abs().max(1.0);
    let (mut near, mut f_near) = (t0, f0);
    let mut doublings = 0;
    let (mut lo, mut hi, mut f_lo, mut f_hi);
    loop {
        let far = t0 + dir * step;
        let f_far = f(far);
        if !f_far.is_finite() {
            return Err(Error::BracketExpansion { target: s, doublings });
        }
        if f_far.abs() <= tol {
            return Ok(far);
        }
        if f_far.signum() != f_near.signum() {
            if dir > 0.0 {
                (lo, f_lo, hi, f_hi) = (near, f_near, far, f_far);
            } else {
                (lo, f_lo, hi, f_hi) = (far, f_far, near, f_near);
            }
            break;
        }
        (near, f_near) = (far, f_far);
        step *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::BracketExpansion { target: s, doublings });
        }
    }

    let mut t = if f_lo.abs() < f_hi.abs() { lo } else { hi };
    let mut ft = if t == lo { f_lo } else { f_hi };
    for _ in 0..MAX_REFINE {
        let slope = phi.d_s(p, t, x);
        let newton = t - ft / slope;
        let mut next = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == t {
            next = 0.5 * (lo + hi);
        }
        let fn_ = f(next);
        if fn_.abs() <= tol {
            return Ok(next);
        }
        if fn_ < 0.0 {
            (lo, f_lo) = (next, fn_);
        } else {
            (hi, f_hi) = (next, fn_);
        }
        (t, ft) = (next, fn_);
        if hi - lo <= 2.0 * f64::EPSILON * t.abs().max(1.0) {
            let best = if f_lo.abs() < f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
            return Err(Error::InvalidArgument(format!(
                "inversion tolerance {tol:e} below floating-point resolution at s={s} (residual {:e})",
                best.1.abs()
            )));
        }
    }
    Err(Error::InvalidArgument(format!("inversion did not reach tolerance {tol:e} at s={s}")))
}

/// `d h / d s = 1 / (d phi / d s)(p, h(p, s, x), x)`.
pub fn h_partial_s(phi: &PotentialModel, p: &[f64], s: f64, x: &[f64], tol: f64) -> Result<f64> {
    let t = invert_temperature(phi, p, s, x, tol)?;
    Ok(1.0 / phi.d_s(p, t, x))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coefficients::laws::{fn_law, Affine, Sinusoidal, SpatialPoly};

    fn affine(a: Vec<f64>, b: f64) -> PotentialModel {
        PotentialModel::new(Arc::new(Affine { a, b, c: SpatialPoly::default() }), b.min(1.0), 1.0)
    }

    fn wiggly() -> PotentialModel {
        let law = Sinusoidal { base: Affine { a: vec![], b: 1.0, c: SpatialPoly::default() }, amp: 0.1, freq: 1.0 };
        PotentialModel::new(Arc::new(law), 0.9, 1.1)
    }

    #[test]
    fn linear_inversions() {
        let t = invert_temperature(&affine(vec![], 2.0), &[], 4.0, &[0.0, 0.0], 1e-12).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        let t = invert_temperature(&affine(vec![1.0], 1.0), &[3.0], 5.0, &[0.0, 0.0], 1e-12).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sinusoidal_round_trip() {
        let phi = wiggly();
        let t = invert_temperature(&phi, &[], 1.0, &[0.5, 0.5], 1e-12).unwrap();
        assert!((t + 0.1 * t.sin() - 1.0).abs() <= 1e-12);
        let dh = h_partial_s(&phi, &[], 1.0, &[0.5, 0.5], 1e-12).unwrap();
        assert!((dh - 1.0 / (1.0 + 0.1 * t.cos())).abs() < 1e-12);
    }

    #[test]
    fn h_partial_matches_centred_difference() {
        let phi = wiggly();
        for s in [-3.0, 0.2, 4.5] {
            let d = 1e-4;
            let hp = invert_temperature(&phi, &[], s + d, &[], 1e-13).unwrap();
            let hm = invert_temperature(&phi, &[], s - d, &[], 1e-13).unwrap();
            let fd = (hp - hm) / (2.0 * d);
            let an = h_partial_s(&phi, &[], s, &[], 1e-13).unwrap();
            assert!((fd - an).abs() < 1e-7, "s={s}: {fd} vs {an}");
        }
    }

    #[test]
    fn far_targets_need_many_doublings() {
        // slope 1 with a declared bound of 1e-3: the initial guess is far too large
        let phi = PotentialModel::new(Arc::new(Affine { a: vec![], b: 1.0, c: SpatialPoly::constant(0.0) }), 1e-3, 1.0);
        let t = invert_temperature(&phi, &[], 1e3, &[], 1e-9).unwrap();
        assert!((t - 1e3).abs() < 1e-9);
    }

    #[test]
    fn bounded_potential_fails_to_bracket() {
        let phi = PotentialModel::new(fn_law(|_, s, _| s.atan()), 1.0, 1.0);
        assert!(matches!(
            invert_temperature(&phi, &[], 2.0, &[], 1e-12),
            Err(Error::BracketExpansion { .. })
        ));
    }

    #[test]
    fn shift_covariance() {
        let phi = wiggly();
        let shifted = phi.shifted(7.0);
        for s in [-1.0, 0.0, 2.5] {
            let a = invert_temperature(&shifted, &[], s, &[], 1e-12).unwrap();
            let b = invert_temperature(&phi, &[], s - 7.0, &[], 1e-12).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }
}
