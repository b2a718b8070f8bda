//! Scalar laws `f(p, s, x)` with optional analytic partials, and the
//! built-in catalogue.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use crate::error::{Error, Result};

/// Absolute step of the centred finite-difference fallback.
pub const FD_STEP: f64 = 1e-6;

/// A scalar function of state `(p, s)` and position `x`.
pub trait StateFn: Send + Sync + fmt::Debug {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64;

    fn d_s(&self, _p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        None
    }

    fn d_p(&self, _i: usize, _p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        None
    }

    fn d_x(&self, _k: usize, _p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        None
    }
}

pub type Law = Arc<dyn StateFn>;

pub fn fd_partial_s(f: &dyn StateFn, p: &[f64], s: f64, x: &[f64]) -> f64 {
    (f.eval(p, s + FD_STEP, x) - f.eval(p, s - FD_STEP, x)) / (2.0 * FD_STEP)
}

pub fn fd_partial_p(f: &dyn StateFn, i: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
    let mut hi = p.to_vec();
    let mut lo = p.to_vec();
    hi[i] += FD_STEP;
    lo[i] -= FD_STEP;
    (f.eval(&hi, s, x) - f.eval(&lo, s, x)) / (2.0 * FD_STEP)
}

pub fn fd_partial_x(f: &dyn StateFn, k: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[k] += FD_STEP;
    lo[k] -= FD_STEP;
    (f.eval(p, s, &hi) - f.eval(p, s, &lo)) / (2.0 * FD_STEP)
}

/// `d f / d s`, analytic when available.
pub fn partial_s(f: &dyn StateFn, p: &[f64], s: f64, x: &[f64]) -> f64 {
    f.d_s(p, s, x).unwrap_or_else(|| fd_partial_s(f, p, s, x))
}

pub fn partial_p(f: &dyn StateFn, i: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
    f.d_p(i, p, s, x).unwrap_or_else(|| fd_partial_p(f, i, p, s, x))
}

pub fn partial_x(f: &dyn StateFn, k: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
    f.d_x(k, p, s, x).unwrap_or_else(|| fd_partial_x(f, k, p, s, x))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Spatial part `c0 + sum cx_k x_k + sum cxx_k x_k^2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpatialPoly {
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub cx: Vec<f64>,
    #[serde(default)]
    pub cxx: Vec<f64>,
}

impl SpatialPoly {
    pub fn constant(c0: f64) -> Self {
        Self { c0, ..Self::default() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.cxx.iter().zip(x).map(|(c, x)| c * x * x).sum();
        self.c0 + dot(&self.cx, x) + quad
    }

    pub fn d_x(&self, k: usize, x: &[f64]) -> f64 {
        let lin = self.cx.get(k).copied().unwrap_or(0.0);
        let quad = self.cxx.get(k).copied().unwrap_or(0.0);
        lin + 2.0 * quad * x.get(k).copied().unwrap_or(0.0)
    }
}

/// `a . p + b s + c(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: Vec<f64>,
    pub b: f64,
    pub c: SpatialPoly,
}

impl StateFn for Affine {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        dot(&self.a, p) + self.b * s + self.c.eval(x)
    }
    fn d_s(&self, _p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        Some(self.b)
    }
    fn d_p(&self, i: usize, _p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        Some(self.a.get(i).copied().unwrap_or(0.0))
    }
    fn d_x(&self, k: usize, _p: &[f64], _s: f64, x: &[f64]) -> Option<f64> {
        Some(self.c.d_x(k, x))
    }
}

/// Affine law plus `amp sin(freq s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoidal {
    pub base: Affine,
    pub amp: f64,
    pub freq: f64,
}

impl StateFn for Sinusoidal {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.base.eval(p, s, x) + self.amp * (self.freq * s).sin()
    }
    fn d_s(&self, _p: &[f64], s: f64, _x: &[f64]) -> Option<f64> {
        Some(self.base.b + self.amp * self.freq * (self.freq * s).cos())
    }
    fn d_p(&self, i: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        self.base.d_p(i, p, s, x)
    }
    fn d_x(&self, k: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        self.base.d_x(k, p, s, x)
    }
}

/// Separable product `s (a0 + a . p) + c(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub a0: f64,
    pub a: Vec<f64>,
    pub c: SpatialPoly,
}

impl StateFn for Product {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        s * (self.a0 + dot(&self.a, p)) + self.c.eval(x)
    }
    fn d_s(&self, p: &[f64], _s: f64, _x: &[f64]) -> Option<f64> {
        Some(self.a0 + dot(&self.a, p))
    }
    fn d_p(&self, i: usize, _p: &[f64], s: f64, _x: &[f64]) -> Option<f64> {
        Some(s * self.a.get(i).copied().unwrap_or(0.0))
    }
    fn d_x(&self, k: usize, _p: &[f64], _s: f64, x: &[f64]) -> Option<f64> {
        Some(self.c.d_x(k, x))
    }
}

/// `lo + (hi - lo) (1 + tanh(a . p + b s + c(x))) / 2`: bounded and Lipschitz.
#[derive(Debug, Clone, PartialEq)]
pub struct Saturating {
    pub lo: f64,
    pub hi: f64,
    pub inner: Affine,
}

impl Saturating {
    fn slope(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        let th = self.inner.eval(p, s, x).tanh();
        0.5 * (self.hi - self.lo) * (1.0 - th * th)
    }
}

impl StateFn for Saturating {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.lo + 0.5 * (self.hi - self.lo) * (1.0 + self.inner.eval(p, s, x).tanh())
    }
    fn d_s(&self, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(self.slope(p, s, x) * self.inner.b)
    }
    fn d_p(&self, i: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(self.slope(p, s, x) * self.inner.a.get(i).copied().unwrap_or(0.0))
    }
    fn d_x(&self, k: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(self.slope(p, s, x) * self.inner.c.d_x(k, x))
    }
}

/// Law given by an expression string; partials by finite differences.
#[derive(Debug, Clone)]
pub struct ExprLaw(pub Expr);

impl StateFn for ExprLaw {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.0.eval(p, s, x)
    }
}

/// `f + r` for a constant `r`.
#[derive(Debug, Clone)]
pub struct Shifted {
    pub inner: Law,
    pub r: f64,
}

impl StateFn for Shifted {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.inner.eval(p, s, x) + self.r
    }
    fn d_s(&self, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(partial_s(&*self.inner, p, s, x))
    }
    fn d_p(&self, i: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(partial_p(&*self.inner, i, p, s, x))
    }
    fn d_x(&self, k: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        Some(partial_x(&*self.inner, k, p, s, x))
    }
}

/// Smooth bump `amp * prod_k b((x_k - centre_k) / radius)` with
/// `b(u) = exp(1 - 1 / (1 - u^2))` on `|u| < 1`, so the peak value is `amp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub centre: Vec<f64>,
    pub radius: f64,
    pub amp: f64,
}

impl Bump {
    fn factor(u: f64) -> (f64, f64) {
        if u.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let w = 1.0 - u * u;
        let v = (1.0 - 1.0 / w).exp();
        (v, v * (-2.0 * u / (w * w)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centre
            .iter()
            .zip(x)
            .map(|(c, x)| Self::factor((x - c) / self.radius).0)
            .product::<f64>()
            * self.amp
    }

    pub fn d_x(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = self.amp;
        for (j, (c, xj)) in self.centre.iter().zip(x).enumerate() {
            let (v, dv) = Self::factor((xj - c) / self.radius);
            acc *= if j == k { dv / self.radius } else { v };
        }
        acc
    }

    /// True when the bump vanishes at `x`.
    pub fn outside(&self, x: &[f64]) -> bool {
        self.centre.iter().zip(x).any(|(c, x)| ((x - c) / self.radius).abs() >= 1.0)
    }
}

/// `base + psi(x) * tilde` with `psi` a compactly supported bump.
#[derive(Debug, Clone)]
pub struct BumpModified {
    pub base: Law,
    pub bump: Bump,
    pub tilde: Law,
}

impl StateFn for BumpModified {
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        let psi = self.bump.eval(x);
        let extra = if psi == 0.0 { 0.0 } else { psi * self.tilde.eval(p, s, x) };
        self.base.eval(p, s, x) + extra
    }
    fn d_s(&self, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        let psi = self.bump.eval(x);
        let extra = if psi == 0.0 { 0.0 } else { psi * partial_s(&*self.tilde, p, s, x) };
        Some(partial_s(&*self.base, p, s, x) + extra)
    }
    fn d_p(&self, i: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        let psi = self.bump.eval(x);
        let extra = if psi == 0.0 { 0.0 } else { psi * partial_p(&*self.tilde, i, p, s, x) };
        Some(partial_p(&*self.base, i, p, s, x) + extra)
    }
    fn d_x(&self, k: usize, p: &[f64], s: f64, x: &[f64]) -> Option<f64> {
        let psi = self.bump.eval(x);
        let dpsi = self.bump.d_x(k, x);
        let mut extra = dpsi * self.tilde.eval(p, s, x);
        if psi != 0.0 {
            extra += psi * partial_x(&*self.tilde, k, p, s, x);
        }
        Some(partial_x(&*self.base, k, p, s, x) + extra)
    }
}

/// Wraps a closure as a law; partials fall back to finite differences.
pub struct FnLaw<F>(pub F);

impl<F> fmt::Debug for FnLaw<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnLaw")
    }
}

impl<F> StateFn for FnLaw<F>
where
    F: Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        (self.0)(p, s, x)
    }
}

pub fn fn_law(f: impl Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static) -> Law {
    Arc::new(FnLaw(f))
}

/// Configuration form of a law, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSpec {
    Constant {
        value: f64,
    },
    Affine {
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: f64,
        #[serde(default, flatten)]
        c: SpatialPoly,
    },
    Sinusoidal {
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: f64,
        amp: f64,
        freq: f64,
        #[serde(default, flatten)]
        c: SpatialPoly,
    },
    Product {
        a0: f64,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default, flatten)]
        c: SpatialPoly,
    },
    Saturating {
        lo: f64,
        hi: f64,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: f64,
        #[serde(default, flatten)]
        c: SpatialPoly,
    },
    Expr {
        expr: String,
    },
    Shifted {
        inner: Box<LawSpec>,
        r: f64,
    },
    BumpModified {
        base: Box<LawSpec>,
        bump: Bump,
        tilde: Box<LawSpec>,
    },
}

impl LawSpec {
    pub fn build(&self) -> Result<Law> {
        Ok(match self {
            LawSpec::Constant { value } => Arc::new(Affine { a: vec![], b: 0.0, c: SpatialPoly::constant(*value) }),
            LawSpec::Affine { a, b, c } => Arc::new(Affine { a: a.clone(), b: *b, c: c.clone() }),
            LawSpec::Sinusoidal { a, b, amp, freq, c } => Arc::new(Sinusoidal {
                base: Affine { a: a.clone(), b: *b, c: c.clone() },
                amp: *amp,
                freq: *freq,
            }),
            LawSpec::Product { a0, a, c } => Arc::new(Product { a0: *a0, a: a.clone(), c: c.clone() }),
            LawSpec::Saturating { lo, hi, a, b, c } => {
                if !(hi >= lo) {
                    return Err(Error::InvalidArgument(format!("saturating law needs lo <= hi, got {lo} > {hi}")));
                }
                Arc::new(Saturating { lo: *lo, hi: *hi, inner: Affine { a: a.clone(), b: *b, c: c.clone() } })
            }
            LawSpec::Expr { expr } => Arc::new(ExprLaw(Expr::parse(expr)?)),
            LawSpec::Shifted { inner, r } => Arc::new(Shifted { inner: inner.build()?, r: *r }),
            LawSpec::BumpModified { base, bump, tilde } => {
                if !(bump.radius > 0.0) {
                    return Err(Error::InvalidArgument("bump radius must be positive".into()));
                }
                Arc::new(BumpModified { base: base.build()?, bump: bump.clone(), tilde: tilde.build()? })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine() -> Affine {
        Affine { a: vec![0.5, -0.25], b: 2.0, c: SpatialPoly { c0: 1.0, cx: vec![0.3, 0.0], cxx: vec![0.0, 0.7] } }
    }

    fn check_partials(law: &dyn StateFn, p: &[f64], s: f64, x: &[f64]) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1.0);
        let ds = law.d_s(p, s, x).unwrap();
        assert!(close(ds, fd_partial_s(law, p, s, x)));
        for i in 0..p.len() {
            assert!(close(law.d_p(i, p, s, x).unwrap(), fd_partial_p(law, i, p, s, x)));
        }
        for k in 0..x.len() {
            assert!(close(law.d_x(k, p, s, x).unwrap(), fd_partial_x(law, k, p, s, x)));
        }
    }

    #[test]
    fn catalogue_partials_agree_with_differences() {
        let p = [0.4, 1.3];
        let x = [0.2, 0.6];
        check_partials(&affine(), &p, 0.8, &x);
        check_partials(&Sinusoidal { base: affine(), amp: 0.1, freq: 3.0 }, &p, 0.8, &x);
        check_partials(&Product { a0: 1.0, a: vec![0.2, 0.1], c: SpatialPoly::constant(0.0) }, &p, 0.8, &x);
        check_partials(&Saturating { lo: 0.5, hi: 2.0, inner: affine() }, &p, -0.3, &x);
        let bumped = BumpModified {
            base: Arc::new(affine()),
            bump: Bump { centre: vec![0.5, 0.5], radius: 0.4, amp: 0.8 },
            tilde: Arc::new(Product { a0: 1.0, a: vec![1.0, 0.0], c: SpatialPoly::constant(0.0) }),
        };
        check_partials(&bumped, &p, 0.8, &[0.45, 0.6]);
    }

    #[test]
    fn bump_is_compact_with_peak_amp() {
        let b = Bump { centre: vec![0.5, 0.5], radius: 0.25, amp: 2.0 };
        assert_eq!(b.eval(&[0.5, 0.5]), 2.0);
        assert_eq!(b.eval(&[0.75, 0.5]), 0.0);
        assert_eq!(b.eval(&[0.1, 0.5]), 0.0);
        assert!(b.outside(&[0.0, 0.5]));
        assert!(b.eval(&[0.6, 0.55]) > 0.0);
    }

    #[test]
    fn shifted_adds_constant() {
        let base: Law = Arc::new(affine());
        let sh = Shifted { inner: base.clone(), r: 7.0 };
        assert_eq!(sh.eval(&[1.0, 2.0], 0.3, &[0.1, 0.1]), base.eval(&[1.0, 2.0], 0.3, &[0.1, 0.1]) + 7.0);
        assert_eq!(sh.d_s(&[1.0, 2.0], 0.3, &[0.1, 0.1]), Some(2.0));
    }

    #[test]
    fn spec_round_trip_and_build() {
        let spec = LawSpec::Sinusoidal { a: vec![0.2], b: 1.0, amp: 0.1, freq: 1.0, c: SpatialPoly { c0: 0.0, cx: vec![1.0], cxx: vec![] } };
        let json = serde_json::to_string(&spec).unwrap();
        let back: LawSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let law = back.build().unwrap();
        let v = law.eval(&[2.0], 1.0, &[0.5, 0.0]);
        assert!((v - (0.4 + 1.0 + 0.1 * 1f64.sin() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn expression_spec_reports_parse_errors() {
        let bad = LawSpec::Expr { expr: "s + ".into() };
        assert!(matches!(bad.build(), Err(Error::Expression { .. })));
        let good = LawSpec::Expr { expr: "2*s + p1".into() }.build().unwrap();
        assert!((partial_s(&*good, &[1.0], 0.5, &[]) - 2.0).abs() < 1e-8);
    }
}
