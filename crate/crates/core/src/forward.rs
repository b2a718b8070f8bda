//! Forward solves of the static coupled system
//!
//! ```text
//! -div(D_i(c, T, x) grad c_i) = g_i(c, T, x),   div(eps grad phi(c, T, x)) = q . c
//! ```
//!
//! with `(c, T) = (gamma, tau)` on the boundary. Substituting
//! `sigma = phi(c, T, x)` turns the potential equation into a linear one in
//! `sigma`, and `T = h(c, sigma, x)` is recovered afterwards. The coupled
//! problem in `(c, sigma)` is solved by damped Picard iteration on the
//! frozen-coefficient problems.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    diffusion_field, fn_law, state_at, temperature_from_sigma, DiffusionModel, ModelBundle, PermittivityField,
    PotentialModel, SourceModel,
};
use crate::elliptic::{l_eps_inverse, relative_residual, solve_dirichlet_from, LinearEllipticProblem};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryField, Grid, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardOptions {
    pub max_outer_iterations: usize,
    /// Relative change between successive iterates, over all coordinates.
    pub fixed_point_tol: f64,
    pub damping: f64,
    pub min_damping: f64,
    pub inner_tol: f64,
    /// Relative residual of the discrete equations at the final state.
    pub pde_residual_tol: f64,
    pub inversion_tol: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            fixed_point_tol: 1e-8,
            damping: 1.0,
            min_damping: 1.0 / 16.0,
            inner_tol: 1e-10,
            pde_residual_tol: 1e-6,
            inversion_tol: 1e-12,
        }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.fixed_point_tol, self.inner_tol, self.pde_residual_tol, self.inversion_tol];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) || !(self.min_damping > 0.0 && self.min_damping <= self.damping) {
            return Err(Error::InvalidArgument(format!(
                "damping {} / minimum {} must lie in (0, 1] with minimum <= damping",
                self.damping, self.min_damping
            )));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidArgument("max_outer_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Number of frozen-coefficient sweeps performed.
    pub outer_iterations: usize,
    /// Fixed-point residual at each accepted iterate.
    pub history: Vec<f64>,
    /// Damping factor in force at each accepted iterate.
    pub damping: Vec<f64>,
    pub rejected_steps: usize,
    /// Relative residual of each of the `M + 1` discrete equations.
    pub pde_residuals: Vec<f64>,
    /// Largest `|sigma - phi(c, T, x)|` over the nodes.
    pub substitution_error: f64,
}

/// One forward solution.
#[derive(Debug, Clone)]
pub struct SystemState {
    pub c: Vec<ScalarField>,
    pub temperature: ScalarField,
    pub sigma: ScalarField,
    pub gamma: Vec<BoundaryField>,
    pub tau: BoundaryField,
    pub report: ConvergenceReport,
}

impl SystemState {
    pub fn grid(&self) -> &Arc<Grid> {
        self.temperature.grid()
    }

    /// Writes one CSV per field plus `report.json` and `grid.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let csv = |name: String, f: &ScalarField| -> Result<()> {
            f.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
        };
        for (i, ci) in self.c.iter().enumerate() {
            csv(format!("c{}.csv", i + 1), ci)?;
        }
        csv("temperature.csv".into(), &self.temperature)?;
        csv("sigma.csv".into(), &self.sigma)?;
        for (i, g) in self.gamma.iter().enumerate() {
            g.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(format!("gamma{}.csv", i + 1)))?))?;
        }
        self.tau.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("tau.csv"))?))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        fs::write(dir.join("grid.json"), serde_json::to_string_pretty(&self.grid().spec())?)?;
        Ok(())
    }
}

/// `eta0 = phi(gamma, tau, x)` on the boundary.
pub fn boundary_potential(phi: &PotentialModel, gamma: &[BoundaryField], tau: &BoundaryField) -> BoundaryField {
    let grid = tau.grid().clone();
    let dim = grid.dim();
    let values = grid
        .boundary_ids()
        .iter()
        .enumerate()
        .map(|(b, &id)| {
            let p: Vec<f64> = gamma.iter().map(|g| g.values()[b]).collect();
            phi.eval(&p, tau.values()[b], &grid.point(id)[..dim])
        })
        .collect();
    BoundaryField::from_raw(grid, values)
}

fn check_boundary(bundle: &ModelBundle, gamma: &[BoundaryField], tau: &BoundaryField) -> Result<()> {
    if gamma.len() != bundle.species() {
        return Err(Error::InvalidArgument(format!(
            "{} concentration boundary fields for {} species",
            gamma.len(),
            bundle.species()
        )));
    }
    if gamma.iter().any(|g| **g.grid() != **tau.grid()) {
        return Err(Error::FieldMismatch("boundary data on different grids".into()));
    }
    Ok(())
}

/// Frozen-coefficient data shared by every sweep.
struct Frozen<'a> {
    bundle: &'a ModelBundle,
    gamma: &'a [BoundaryField],
    eta0: BoundaryField,
    eps: ScalarField,
    opts: &'a PicardOptions,
}

impl Frozen<'_> {
    /// Coefficient and right-hand side of coordinate `i` frozen at `v`.
    fn coordinate_problem(&self, i: usize, v: &[ScalarField], t: &ScalarField) -> Result<LinearEllipticProblem> {
        let m = self.bundle.species();
        let grid = t.grid().clone();
        let dim = grid.dim();
        let c = &v[..m];
        if i < m {
            let a = diffusion_field(&self.bundle.diffusion[i], c, t)?;
            let g = &self.bundle.sources[i];
            let f = if g.is_zero() {
                ScalarField::constant(grid.clone(), 0.0)
            } else {
                let vals = (0..grid.node_count())
                    .map(|id| g.eval(&state_at(c, id), t.values()[id], &grid.point(id)[..dim]))
                    .collect();
                ScalarField::new(grid.clone(), vals)?
            };
            LinearEllipticProblem::new(a, f, self.gamma[i].clone(), self.bundle.lambda)
        } else {
            let f = (0..grid.node_count()).map(|id| -self.bundle.charge(&state_at(c, id))).collect();
            LinearEllipticProblem::new(
                self.eps.clone(),
                ScalarField::new(grid, f)?,
                self.eta0.clone(),
                self.bundle.lambda,
            )
        }
    }

    fn temperature(&self, v: &[ScalarField]) -> Result<ScalarField> {
        let m = self.bundle.species();
        temperature_from_sigma(&self.bundle.potential, &v[..m], &v[m], self.opts.inversion_tol)
    }

    fn step(&self, v: &[ScalarField]) -> Result<Vec<ScalarField>> {
        let t = self.temperature(v)?;
        (0..v.len())
            .into_par_iter()
            .map(|i| {
                let problem = self.coordinate_problem(i, v, &t)?;
                Ok(solve_dirichlet_from(&problem, self.opts.inner_tol, Some(&v[i]))?.0)
            })
            .collect()
    }

    fn pde_residuals(&self, v: &[ScalarField]) -> Result<Vec<f64>> {
        let t = self.temperature(v)?;
        (0..v.len())
            .map(|i| {
                let problem = self.coordinate_problem(i, v, &t)?;
                Ok(relative_residual(&problem.a, &problem.f, &v[i]))
            })
            .collect()
    }
}

fn frozen<'a>(
    bundle: &'a ModelBundle,
    gamma: &'a [BoundaryField],
    tau: &BoundaryField,
    opts: &'a PicardOptions,
) -> Result<Frozen<'a>> {
    check_boundary(bundle, gamma, tau)?;
    let eta0 = boundary_potential(&bundle.potential, gamma, tau);
    let eps = bundle.permittivity.field(tau.grid())?;
    Ok(Frozen { bundle, gamma, eta0, eps, opts })
}

/// One frozen-coefficient sweep: `v = (c_1, .., c_M, sigma)` maps to the
/// solutions `w` of `-div(nu_i(v) grad w_i) = G_i(v)`, `w_i = gamma_i` and
/// `div(eps grad w_{M+1}) = q . c`, `w_{M+1} = phi(gamma, tau, x)`.
pub fn picard_step(
    bundle: &ModelBundle,
    v: &[ScalarField],
    gamma: &[BoundaryField],
    tau: &BoundaryField,
    opts: &PicardOptions,
) -> Result<Vec<ScalarField>> {
    if v.len() != bundle.species() + 1 {
        return Err(Error::InvalidArgument(format!("iterate has {} coordinates, expected {}", v.len(), bundle.species() + 1)));
    }
    frozen(bundle, gamma, tau, opts)?.step(v)
}

fn relative_change(v: &[ScalarField], w: &[ScalarField]) -> f64 {
    let mut diff = 0.0;
    let mut size = 0.0;
    for (a, b) in v.iter().zip(w) {
        for (x, y) in a.values().iter().zip(b.values()) {
            diff += (x - y) * (x - y);
            size += y * y;
        }
    }
    if size == 0.0 {
        diff.sqrt()
    } else {
        (diff / size).sqrt()
    }
}

fn blend(v: &[ScalarField], w: &[ScalarField], theta: f64) -> Vec<ScalarField> {
    v.iter()
        .zip(w)
        .map(|(a, b)| {
            let vals = a.values().iter().zip(b.values()).map(|(x, y)| x + theta * (y - x)).collect();
            ScalarField::from_raw(a.grid().clone(), vals)
        })
        .collect()
}

fn extension(a: &ScalarField, g: &BoundaryField, tol: f64) -> Result<ScalarField> {
    let zero = ScalarField::constant(a.grid().clone(), 0.0);
    let problem = LinearEllipticProblem::with_min_bound(a.clone(), zero, g.clone())?;
    Ok(solve_dirichlet_from(&problem, tol, None)?.0)
}

/// Solves the coupled system by damped Picard iteration.
///
/// A trial iterate `v + theta (A(v) - v)` is accepted only if its fixed-point
/// residual does not exceed the current one; otherwise `theta` is halved.
/// Falling below the minimum damping, or running out of sweeps, is an error
/// carrying the residual history.
pub fn forward_solve(
    bundle: &ModelBundle,
    gamma: &[BoundaryField],
    tau: &BoundaryField,
    opts: &PicardOptions,
) -> Result<SystemState> {
    opts.validate()?;
    let fz = frozen(bundle, gamma, tau, opts)?;
    let grid = tau.grid().clone();
    let m = bundle.species();

    let ones = ScalarField::constant(grid.clone(), 1.0);
    let mut v = gamma
        .iter()
        .map(|g| extension(&ones, g, opts.inner_tol))
        .chain(std::iter::once(extension(&fz.eps, &fz.eta0, opts.inner_tol)))
        .collect::<Result<Vec<_>>>()?;

    let mut report = ConvergenceReport::default();
    let mut w = fz.step(&v)?;
    report.outer_iterations = 1;
    let mut r = relative_change(&v, &w);
    let mut theta = opts.damping;
    report.history.push(r);
    report.damping.push(theta);

    loop {
        if r <= opts.fixed_point_tol {
            let residuals = fz.pde_residuals(&w)?;
            if residuals.iter().all(|&x| x <= opts.pde_residual_tol) {
                report.pde_residuals = residuals;
                break;
            }
            // change is small but the equations are not yet met: keep sweeping
            report.pde_residuals = residuals;
        }
        if report.outer_iterations >= opts.max_outer_iterations {
            return Err(Error::PicardNotConverged {
                iterations: report.outer_iterations,
                last_change: r,
                history: report.history,
            });
        }
        let trial = blend(&v, &w, theta);
        let w_trial = fz.step(&trial)?;
        report.outer_iterations += 1;
        let r_trial = relative_change(&trial, &w_trial);
        if r_trial <= r || r_trial <= opts.fixed_point_tol {
            v = trial;
            w = w_trial;
            r = r_trial;
            report.history.push(r);
            report.damping.push(theta);
        } else {
            report.rejected_steps += 1;
            theta *= 0.5;
            if theta < opts.min_damping {
                return Err(Error::PicardNotConverged {
                    iterations: report.outer_iterations,
                    last_change: r,
                    history: report.history,
                });
            }
        }
    }

    let c: Vec<ScalarField> = w[..m].to_vec();
    let sigma = w[m].clone();
    let temperature = pin_boundary(temperature_from_sigma(&bundle.potential, &c, &sigma, opts.inversion_tol)?, tau);
    report.substitution_error = substitution_error(&bundle.potential, &c, &temperature, &sigma);
    report.converged = true;
    Ok(SystemState { c, temperature, sigma, gamma: gamma.to_vec(), tau: tau.clone(), report })
}

fn pin_boundary(field: ScalarField, data: &BoundaryField) -> ScalarField {
    let grid = field.grid().clone();
    let mut vals = field.into_values();
    for (&id, &v) in grid.boundary_ids().iter().zip(data.values()) {
        vals[id] = v;
    }
    ScalarField::from_raw(grid, vals)
}

/// Largest `|sigma - phi(c, T, x)|` over the nodes.
pub fn substitution_error(phi: &PotentialModel, c: &[ScalarField], t: &ScalarField, sigma: &ScalarField) -> f64 {
    let grid = t.grid();
    let dim = grid.dim();
    (0..grid.node_count())
        .map(|id| (sigma.values()[id] - phi.eval(&state_at(c, id), t.values()[id], &grid.point(id)[..dim])).abs())
        .fold(0.0, f64::max)
}

/// Closed-form solution for constant concentrations in the source-free
/// case: `c = gamma`, `sigma = L_eps^{-1}(q . gamma; phi(gamma, tau, x))`,
/// `T = h(gamma, sigma, x)`.
pub fn forward_constant_bc(bundle: &ModelBundle, gamma: &[f64], tau: &BoundaryField, tol: f64) -> Result<SystemState> {
    if !bundle.is_source_free() {
        return Err(Error::SourcesPresent);
    }
    if gamma.len() != bundle.species() {
        return Err(Error::InvalidArgument(format!("{} concentrations for {} species", gamma.len(), bundle.species())));
    }
    let grid = tau.grid().clone();
    let gamma_b: Vec<BoundaryField> = gamma.iter().map(|&g| BoundaryField::constant(grid.clone(), g)).collect();
    let c: Vec<ScalarField> = gamma.iter().map(|&g| ScalarField::constant(grid.clone(), g)).collect();
    let eta0 = boundary_potential(&bundle.potential, &gamma_b, tau);
    let eps = bundle.permittivity.field(&grid)?;
    let source = ScalarField::constant(grid.clone(), bundle.charge(gamma));
    let sigma = l_eps_inverse(&eps, &source, &eta0, tol)?;
    let inversion_tol = crate::coefficients::DEFAULT_INVERSION_TOL;
    let temperature = pin_boundary(temperature_from_sigma(&bundle.potential, &c, &sigma, inversion_tol)?, tau);
    let report = ConvergenceReport {
        converged: true,
        substitution_error: substitution_error(&bundle.potential, &c, &temperature, &sigma),
        ..ConvergenceReport::default()
    };
    Ok(SystemState { c, temperature, sigma, gamma: gamma_b, tau: tau.clone(), report })
}

/// Cut-off equal to 1 on `|eta| <= 1.5`, 0 on `|eta| >= 2.5`, smooth between.
pub fn cutoff(eta: f64) -> f64 {
    let u = eta.abs() - 1.5;
    if u <= 0.0 {
        return 1.0;
    }
    if u >= 1.0 {
        return 0.0;
    }
    let bump = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    bump(1.0 - u) / (bump(1.0 - u) + bump(u))
}

/// The first Dirichlet eigenvalue `dim * pi^2` of the unit box.
pub fn unit_box_eigenvalue(dim: usize) -> f64 {
    dim as f64 * std::f64::consts::PI * std::f64::consts::PI
}

/// Single-species bundle with `D = 1`, `g(p) = lambda_D p rho(p)`, `q = 0`,
/// `phi = s`, `eps = 1`.
pub fn source_demo_bundle(dim: usize) -> ModelBundle {
    let lam = unit_box_eigenvalue(dim);
    let g = SourceModel { law: Some(fn_law(move |p, _, _| lam * p[0] * cutoff(p[0]))), c1: 2.5 * lam, c2: 0.0 };
    let phi = PotentialModel::new(fn_law(|_, s, _| s), 1.0, 1.0);
    ModelBundle::new(
        vec![0.0],
        phi,
        vec![DiffusionModel::constant(1.0)],
        vec![g],
        PermittivityField::constant(1.0),
        1.0,
    )
    .expect("demo bundle is well formed")
}

#[derive(Debug, Clone)]
pub struct SourceDemoState {
    pub state: SystemState,
    /// Largest interior residual of `-lap(eta) - G(eta)`.
    pub residual_max: f64,
    /// Volume-weighted L2 norm of the same residual.
    pub residual_l2: f64,
}

/// Two solutions with identical zero boundary data of the problem with
/// source `G(eta) = lambda_D eta rho(eta)`: `eta = 0` and the first
/// eigenfunction `prod_k sin(pi x_k)`.
pub fn nonuniqueness_with_sources(grid: &Arc<Grid>) -> Result<(SourceDemoState, SourceDemoState)> {
    let unit = grid.lower().iter().all(|&v| v == 0.0) && grid.upper().iter().all(|&v| v == 1.0);
    if !unit {
        return Err(Error::InvalidGrid("source non-uniqueness demo requires the unit box".into()));
    }
    let dim = grid.dim();
    let bundle = source_demo_bundle(dim);
    let pi = std::f64::consts::PI;
    let zero = ScalarField::constant(grid.clone(), 0.0);
    let eigen = pin_boundary(
        ScalarField::from_fn(grid.clone(), |x| x.iter().map(|v| (pi * v).sin()).product())?,
        &BoundaryField::constant(grid.clone(), 0.0),
    );
    let make = |eta: ScalarField| -> Result<SourceDemoState> {
        let ones = ScalarField::constant(grid.clone(), 1.0);
        let lap = crate::elliptic::apply_operator(&ones, &eta);
        let res: Vec<f64> = (0..grid.node_count())
            .map(|id| {
                if grid.is_boundary(id) {
                    0.0
                } else {
                    lap.values()[id] - bundle.sources[0].eval(&[eta.values()[id]], 0.0, &[])
                }
            })
            .collect();
        let res = ScalarField::new(grid.clone(), res)?;
        let boundary = BoundaryField::constant(grid.clone(), 0.0);
        let state = SystemState {
            c: vec![eta],
            temperature: zero.clone(),
            sigma: zero.clone(),
            gamma: vec![boundary.clone()],
            tau: boundary,
            report: ConvergenceReport { converged: true, ..ConvergenceReport::default() },
        };
        Ok(SourceDemoState { state, residual_max: res.max_abs(), residual_l2: res.l2_norm() })
    };
    Ok((make(zero.clone())?, make(eigen)?))
}
