//! The linearised Dirichlet-to-Neumann map around constant concentrations,
//! and the experiment measuring how fast `flux(mu + t f) / t` approaches it.

use serde::{Deserialize, Serialize};

use crate::coefficients::{diffusion_field, temperature_from_sigma, ModelBundle};
use crate::elliptic::{boundary_flux, dn_map, l_eps_inverse};
use crate::error::{Error, Result};
use crate::forward::{forward_solve, PicardOptions};
use crate::mesh::{BoundaryField, ScalarField};

/// Frozen coefficients `nu_i(A(mu)) = D_i(mu, h(mu, L_eps^{-1}(q . mu; eta0), x), x)`.
pub fn frozen_coefficients(
    bundle: &ModelBundle,
    mu: &[f64],
    eta0: &BoundaryField,
    tol: f64,
    inversion_tol: f64,
) -> Result<Vec<ScalarField>> {
    if !bundle.is_source_free() {
        return Err(Error::SourcesPresent);
    }
    if mu.len() != bundle.species() {
        return Err(Error::InvalidArgument(format!("{} background values for {} species", mu.len(), bundle.species())));
    }
    let grid = eta0.grid().clone();
    let eps = bundle.permittivity.field(&grid)?;
    let sigma = l_eps_inverse(&eps, &ScalarField::constant(grid.clone(), bundle.charge(mu)), eta0, tol)?;
    let c: Vec<ScalarField> = mu.iter().map(|&m| ScalarField::constant(grid.clone(), m)).collect();
    let t = temperature_from_sigma(&bundle.potential, &c, &sigma, inversion_tol)?;
    bundle.diffusion.iter().map(|d| diffusion_field(d, &c, &t)).collect()
}

/// `Lambda[nu_i(A(mu))] f_i` for each species.
pub fn linearised_dn(
    bundle: &ModelBundle,
    mu: &[f64],
    eta0: &BoundaryField,
    f: &[BoundaryField],
    tol: f64,
) -> Result<Vec<BoundaryField>> {
    if f.len() != bundle.species() {
        return Err(Error::InvalidArgument(format!("{} directions for {} species", f.len(), bundle.species())));
    }
    let nu = frozen_coefficients(bundle, mu, eta0, tol, crate::coefficients::DEFAULT_INVERSION_TOL)?;
    nu.iter().zip(f).map(|(a, fi)| dn_map(a, fi, tol)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    /// Positive, strictly decreasing.
    pub t_list: Vec<f64>,
    pub picard: PicardOptions,
    /// Number of trailing converged points used for the slope fit.
    pub fit_points: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            t_list: (1..=8).map(|k| 0.5f64.powi(k)).collect(),
            picard: PicardOptions {
                fixed_point_tol: 1e-12,
                inner_tol: 1e-13,
                pde_residual_tol: 1e-9,
                inversion_tol: 1e-13,
                ..PicardOptions::default()
            },
            fit_points: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub t: Vec<f64>,
    /// Boundary L2 norm of `flux(t) / t - linearised flux`; `None` where the forward solve failed.
    pub errors: Vec<Option<f64>>,
    pub failures: Vec<String>,
    /// Least-squares slope of `log error` against `log t` on the trailing points.
    pub slope: Option<f64>,
    /// Boundary L2 norm of the linearised flux.
    pub linearised_norm: f64,
    /// Error bound `K t` per `t` from the declared Lipschitz constants.
    pub bound: Vec<f64>,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Forward-solves with `gamma = mu + t f` and `tau = h(gamma, eta0, x)` (so the
/// substituted potential keeps boundary data `eta0`), and compares the scaled
/// species fluxes with the linearised map.
pub fn linearisation_rate(
    bundle: &ModelBundle,
    mu: &[f64],
    eta0: &BoundaryField,
    f: &[BoundaryField],
    opts: &RateOptions,
) -> Result<RateReport> {
    let t_list = &opts.t_list;
    if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0)) || t_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("t values must be positive and strictly decreasing".into()));
    }
    let grid = eta0.grid().clone();
    let dim = grid.dim();
    let tol = opts.picard.inner_tol;
    let lin = linearised_dn(bundle, mu, eta0, f, tol)?;
    let norm = |fields: &[BoundaryField]| fields.iter().map(|b| b.l2_norm().powi(2)).sum::<f64>().sqrt();
    let linearised_norm = norm(&lin);

    let mut errors = Vec::with_capacity(t_list.len());
    let mut failures = Vec::new();
    for &t in t_list {
        let outcome = (|| -> Result<f64> {
            let gamma: Vec<BoundaryField> =
                mu.iter().zip(f).map(|(&m, fi)| fi.map(|v| m + t * v)).collect();
            let tau_vals = grid
                .boundary_ids()
                .iter()
                .enumerate()
                .map(|(b, &id)| {
                    let p: Vec<f64> = gamma.iter().map(|g| g.values()[b]).collect();
                    bundle.potential.h(&p, eta0.values()[b], &grid.point(id)[..dim], opts.picard.inversion_tol)
                })
                .collect::<Result<Vec<_>>>()?;
            let tau = BoundaryField::new(grid.clone(), tau_vals)?;
            let state = forward_solve(bundle, &gamma, &tau, &opts.picard)?;
            let diffs = bundle
                .diffusion
                .iter()
                .zip(&state.c)
                .zip(&lin)
                .map(|((d, ci), li)| {
                    let a = diffusion_field(d, &state.c, &state.temperature)?;
                    let flux = boundary_flux(&a, ci);
                    let vals = flux.values().iter().zip(li.values()).map(|(fl, l)| fl / t - l).collect();
                    BoundaryField::new(grid.clone(), vals)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(norm(&diffs))
        })();
        match outcome {
            Ok(e) => errors.push(Some(e)),
            Err(e) => {
                failures.push(format!("t={t:e}: {e}"));
                errors.push(None);
            }
        }
    }

    let converged: Vec<(f64, f64)> = t_list
        .iter()
        .zip(&errors)
        .filter_map(|(&t, e)| e.filter(|&e| e > 0.0).map(|e| (t.ln(), e.ln())))
        .collect();
    let tail = &converged[converged.len().saturating_sub(opts.fit_points)..];
    let (lx, ly): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
    let slope = if tail.len() >= 2 { fit_slope(&lx, &ly) } else { None };

    // nu changes by at most L_D (1 + L_h) t |f|_inf when the data move by t f,
    // and the flux responds in proportion to the relative coefficient change.
    let f_inf = f.iter().map(BoundaryField::max_abs).fold(0.0, f64::max);
    let l_d = bundle.diffusion.iter().map(|d| d.lipschitz).fold(0.0, f64::max);
    let k = l_d * (1.0 + bundle.potential.h_lipschitz()) * f_inf * linearised_norm / bundle.lambda;
    let bound = t_list.iter().map(|t| k * t).collect();

    Ok(RateReport { t: t_list.clone(), errors, failures, slope, linearised_norm, bound })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coefficients::{DiffusionModel, LawSpec, PermittivityField, PotentialModel, SpatialPoly};
    use crate::mesh::Grid;

    fn bundle(d: LawSpec, lip: f64) -> ModelBundle {
        ModelBundle::source_free(
            vec![1.0],
            PotentialModel::new(LawSpec::Affine { a: vec![0.5], b: 1.0, c: SpatialPoly::default() }.build().unwrap(), 1.0, 1.0),
            vec![DiffusionModel::new(d.build().unwrap(), 0.5, 3.0, lip)],
            PermittivityField::constant(1.0),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn slope_of_a_line() {
        assert!((fit_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn constant_direction_gives_zero_flux() {
        let g = Arc::new(Grid::unit(2, 9).unwrap());
        let b = bundle(LawSpec::Affine { a: vec![0.3], b: 0.2, c: SpatialPoly::constant(1.0) }, 0.3);
        let eta0 = BoundaryField::from_fn(g.clone(), |x| x[0]).unwrap();
        let out = linearised_dn(&b, &[1.0], &eta0, &[BoundaryField::constant(g, 2.0)], 1e-12).unwrap();
        assert!(out[0].max_abs() < 1e-9);
    }

    #[test]
    fn state_independent_diffusion_freezes_trivially() {
        let g = Arc::new(Grid::unit(2, 9).unwrap());
        let spatial = LawSpec::Affine { a: vec![], b: 0.0, c: SpatialPoly { c0: 1.0, cx: vec![0.5, 0.0], cxx: vec![] } };
        let b = bundle(spatial, 0.0);
        let eta0 = BoundaryField::from_fn(g.clone(), |x| x[1]).unwrap();
        let f = BoundaryField::from_fn(g.clone(), |x| x[0] * x[1]).unwrap();
        let out = linearised_dn(&b, &[0.7], &eta0, &[f.clone()], 1e-12).unwrap();
        let a = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0]).unwrap();
        assert!(out[0].max_abs_diff(&dn_map(&a, &f, 1e-12).unwrap()) < 1e-12);
    }

    #[test]
    fn neutral_background_with_constant_potential() {
        // q . mu = 0 and constant eta0 give a constant background sigma = s0
        let g = Arc::new(Grid::unit(2, 9).unwrap());
        let d = LawSpec::Affine { a: vec![0.2, 0.0], b: 0.3, c: SpatialPoly { c0: 1.0, cx: vec![0.1, 0.0], cxx: vec![] } };
        let b = ModelBundle::source_free(
            vec![1.0, -1.0],
            PotentialModel::new(LawSpec::Product { a0: 1.0, a: vec![0.1, 0.1], c: SpatialPoly::default() }.build().unwrap(), 1.0, 1.0),
            vec![DiffusionModel::new(d.build().unwrap(), 0.5, 3.0, 0.3), DiffusionModel::constant(1.0)],
            PermittivityField::constant(1.0),
            0.5,
        )
        .unwrap();
        let mu = [2.0, 2.0];
        let s0 = 1.5;
        let eta0 = BoundaryField::constant(g.clone(), s0);
        let f = BoundaryField::from_fn(g.clone(), |x| x[0] - x[1] * x[1]).unwrap();
        let out = linearised_dn(&b, &mu, &eta0, &[f.clone(), f.clone()], 1e-12).unwrap();
        let t0 = b.potential.h(&mu, s0, &[0.0, 0.0], 1e-13).unwrap();
        let a = ScalarField::from_fn(g.clone(), |x| b.diffusion[0].eval(&mu, t0, x)).unwrap();
        assert!(out[0].max_abs_diff(&dn_map(&a, &f, 1e-12).unwrap()) < 1e-10);
    }

    #[test]
    fn linearised_map_is_nearly_symmetric() {
        let g = Arc::new(Grid::unit(2, 17).unwrap());
        let b = bundle(LawSpec::Affine { a: vec![0.3], b: 0.2, c: SpatialPoly::constant(1.0) }, 0.3);
        let eta0 = BoundaryField::from_fn(g.clone(), |x| x[0] + x[1]).unwrap();
        let f = BoundaryField::from_fn(g.clone(), |x| x[0] * x[1]).unwrap();
        let h = BoundaryField::from_fn(g.clone(), |x| (x[0] - 2.0 * x[1]).cos()).unwrap();
        let lf = linearised_dn(&b, &[1.0], &eta0, &[f.clone()], 1e-12).unwrap();
        let lh = linearised_dn(&b, &[1.0], &eta0, &[h.clone()], 1e-12).unwrap();
        let gap = (lf[0].pairing(&h) - f.pairing(&lh[0])).abs();
        assert!(gap < 2e-2, "{gap}");
    }

    #[test]
    fn exact_for_state_independent_diffusion() {
        let g = Arc::new(Grid::unit(2, 9).unwrap());
        let spatial = LawSpec::Affine { a: vec![], b: 0.0, c: SpatialPoly { c0: 1.0, cx: vec![0.0, 0.5], cxx: vec![] } };
        let b = bundle(spatial, 0.0);
        let eta0 = BoundaryField::from_fn(g.clone(), |x| 0.5 * x[0]).unwrap();
        let f = BoundaryField::from_fn(g.clone(), |x| x[0] * x[0] - x[1]).unwrap();
        let opts = RateOptions { t_list: vec![0.25, 0.125, 0.0625], ..RateOptions::default() };
        let r = linearisation_rate(&b, &[1.0], &eta0, &[f], &opts).unwrap();
        assert!(r.errors.iter().all(|e| e.unwrap() <= 1e-8), "{:?}", r.errors);
        assert!(r.bound.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn rejects_unordered_t() {
        let g = Arc::new(Grid::unit(2, 5).unwrap());
        let b = bundle(LawSpec::Constant { value: 1.0 }, 0.0);
        let eta0 = BoundaryField::constant(g.clone(), 0.0);
        let f = BoundaryField::constant(g, 1.0);
        let opts = RateOptions { t_list: vec![0.1, 0.2], ..RateOptions::default() };
        assert!(linearisation_rate(&b, &[1.0], &eta0, &[f], &opts).is_err());
    }
}
