//! Scalar linear Dirichlet problems `-div(a grad u) = f`, `u = g` on the boundary.
//!
//! The operator uses the standard 5/7-point stencil with arithmetic face
//! averages `a_{i+1/2} = (a_i + a_{i+1}) / 2`:
//!
//! ```text
//! (-div(a grad u))_i = sum_axes [ a_{i+1/2} (u_i - u_{i+1}) + a_{i-1/2} (u_i - u_{i-1}) ] / h^2
//! ```
//!
//! Restricted to interior unknowns this is a symmetric M-matrix, solved with
//! Jacobi-preconditioned conjugate gradients. Boundary fluxes are taken as
//! normal traces of `a grad u` with the second-order one-sided gradient.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{gradient, normal_trace, BoundaryField, Grid, ScalarField};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest grid accepted by the dense direct solver.
pub const DENSE_NODE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub tolerance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LinearEllipticProblem {
    pub a: ScalarField,
    pub f: ScalarField,
    pub g: BoundaryField,
    pub lambda: f64,
}

impl LinearEllipticProblem {
    pub fn new(a: ScalarField, f: ScalarField, g: BoundaryField, lambda: f64) -> Result<Self> {
        if **a.grid() != **f.grid() || **a.grid() != **g.grid() {
            return Err(Error::FieldMismatch("problem fields live on different grids".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("ellipticity bound {lambda} must be positive")));
        }
        if let Some((node, &v)) = a.values().iter().enumerate().find(|(_, &v)| v < lambda) {
            let grid = a.grid();
            return Err(Error::Ellipticity {
                coefficient: "a".into(),
                value: v,
                bound: lambda,
                p: vec![],
                s: f64::NAN,
                x: grid.point(node)[..grid.dim()].to_vec(),
            });
        }
        Ok(Self { a, f, g, lambda })
    }

    /// Problem with `lambda` taken as the minimum of `a`.
    pub fn with_min_bound(a: ScalarField, f: ScalarField, g: BoundaryField) -> Result<Self> {
        let lambda = a.values().iter().copied().fold(f64::INFINITY, f64::min);
        Self::new(a, f, g, lambda)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.a.grid()
    }
}

/// Interior-restricted stencil in compressed rows.
pub(crate) struct Stencil {
    grid: Arc<Grid>,
    diag: Vec<f64>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    /// (row, boundary index, weight) couplings to Dirichlet nodes.
    boundary: Vec<(usize, usize, f64)>,
}

impl Stencil {
    pub(crate) fn assemble(a: &ScalarField) -> Self {
        let grid = a.grid().clone();
        let av = a.values();
        let dim = grid.dim();
        let ni = grid.interior_ids().len();
        let mut diag = vec![0.0; ni];
        let mut row_start = Vec::with_capacity(ni + 1);
        let mut cols = Vec::with_capacity(ni * 2 * dim);
        let mut weights = Vec::with_capacity(ni * 2 * dim);
        let mut boundary = Vec::new();
        for (row, &id) in grid.interior_ids().iter().enumerate() {
            row_start.push(cols.len());
            let idx = grid.index(id);
            for axis in 0..dim {
                let inv_h2 = 1.0 / (grid.spacing()[axis] * grid.spacing()[axis]);
                for step in [-1isize, 1] {
                    let mut j = idx;
                    j[axis] = (idx[axis] as isize + step) as usize;
                    let nb = grid.node_id(j);
                    let w = 0.5 * (av[id] + av[nb]) * inv_h2;
                    diag[row] += w;
                    match grid.interior_index(nb) {
                        Some(col) => {
                            cols.push(col);
                            weights.push(w);
                        }
                        None => boundary.push((row, grid.boundary_index(nb).unwrap(), w)),
                    }
                }
            }
        }
        row_start.push(cols.len());
        Self { grid, diag, row_start, cols, weights, boundary }
    }

    fn unknowns(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for row in 0..self.unknowns() {
            let mut acc = self.diag[row] * x[row];
            for k in self.row_start[row]..self.row_start[row + 1] {
                acc -= self.weights[k] * x[self.cols[k]];
            }
            y[row] = acc;
        }
    }

    fn rhs(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let mut b: Vec<f64> = self.grid.interior_ids().iter().map(|&id| f[id]).collect();
        for &(row, bi, w) in &self.boundary {
            b[row] += w * g[bi];
        }
        b
    }

    /// `-div(a grad u)` evaluated at interior nodes of a full nodal vector.
    pub(crate) fn apply_full(&self, u: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = self.grid.interior_ids().iter().map(|&id| u[id]).collect();
        let mut y = vec![0.0; x.len()];
        self.apply(&x, &mut y);
        let bids = self.grid.boundary_ids();
        for &(row, bi, w) in &self.boundary {
            y[row] -= w * u[bids[bi]];
        }
        y
    }

    fn scatter(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.grid.node_count()];
        for (&id, &v) in self.grid.interior_ids().iter().zip(x) {
            u[id] = v;
        }
        for (&id, &v) in self.grid.boundary_ids().iter().zip(g) {
            u[id] = v;
        }
        u
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned CG on `A x = b`, stopping at `|b - A x| <= tol |b|`.
fn pcg(op: &Stencil, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveReport {
    let n = op.unknowns();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveReport { iterations: 0, final_residual: 0.0, tolerance: tol, converged: true };
    }
    let inv_diag: Vec<f64> = op.diag.iter().map(|d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iterations = 0;

    // Outer loop restarts from the true residual so the reported value is honest.
    loop {
        op.apply(x, &mut q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        let true_res = norm(&r) / bnorm;
        if true_res <= tol || iterations >= max_iter {
            return SolveReport {
                iterations,
                final_residual: true_res,
                tolerance: tol,
                converged: true_res <= tol,
            };
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let restart_at = iterations;
        while iterations < max_iter {
            op.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            if norm(&r) <= 0.5 * tol * bnorm {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations == restart_at {
            // breakdown without progress
            op.apply(x, &mut q);
            let res = norm(&b.iter().zip(&q).map(|(b, q)| b - q).collect::<Vec<_>>()) / bnorm;
            return SolveReport { iterations, final_residual: res, tolerance: tol, converged: res <= tol };
        }
    }
}

/// Iterative solve with an optional warm start; the default initial interior
/// value is the mean of the Dirichlet data.
pub fn solve_dirichlet_from(
    problem: &LinearEllipticProblem,
    tol: f64,
    initial: Option<&ScalarField>,
) -> Result<(ScalarField, SolveReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let grid = problem.grid().clone();
    let op = Stencil::assemble(&problem.a);
    let g = problem.g.values();
    let b = op.rhs(problem.f.values(), g);
    let mut x: Vec<f64> = match initial {
        Some(u0) => grid.interior_ids().iter().map(|&id| u0.values()[id]).collect(),
        None => vec![problem.g.mean(); op.unknowns()],
    };
    let report = pcg(&op, &b, &mut x, tol, 20 * grid.node_count());
    if !report.converged {
        return Err(Error::LinearSolve { report });
    }
    let u = op.scatter(&x, g);
    Ok((ScalarField::new(grid, u)?, report))
}

pub fn solve_dirichlet(problem: &LinearEllipticProblem, tol: f64) -> Result<(ScalarField, SolveReport)> {
    solve_dirichlet_from(problem, tol, None)
}

/// Dense LU solve of the same discrete system; an independent check on the
/// iterative path for small grids.
pub fn solve_dirichlet_dense(problem: &LinearEllipticProblem) -> Result<ScalarField> {
    let grid = problem.grid().clone();
    if grid.node_count() > DENSE_NODE_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense solve limited to {DENSE_NODE_LIMIT} nodes, grid has {}",
            grid.node_count()
        )));
    }
    let op = Stencil::assemble(&problem.a);
    let n = op.unknowns();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        m[(row, row)] = op.diag[row];
        for k in op.row_start[row]..op.row_start[row + 1] {
            m[(row, op.cols[k])] -= op.weights[k];
        }
    }
    let b = DVector::from_vec(op.rhs(problem.f.values(), problem.g.values()));
    let x = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidArgument("singular stencil matrix".into()))?;
    ScalarField::new(grid, op.scatter(x.as_slice(), problem.g.values()))
}

/// `-div(a grad u)` at interior nodes, zero at boundary nodes.
pub fn apply_operator(a: &ScalarField, u: &ScalarField) -> ScalarField {
    let op = Stencil::assemble(a);
    let y = op.apply_full(u.values());
    let grid = a.grid();
    let mut out = vec![0.0; grid.node_count()];
    for (&id, v) in grid.interior_ids().iter().zip(y) {
        out[id] = v;
    }
    ScalarField::from_raw(grid.clone(), out)
}

/// Interior residual of `-div(a grad u) = f` relative to the right-hand side
/// (absolute when the right-hand side vanishes).
pub fn relative_residual(a: &ScalarField, f: &ScalarField, u: &ScalarField) -> f64 {
    let op = Stencil::assemble(a);
    let y = op.apply_full(u.values());
    let grid = a.grid();
    let r: Vec<f64> = grid.interior_ids().iter().zip(&y).map(|(&id, y)| f.values()[id] - y).collect();
    let g: Vec<f64> = u.trace().into_values();
    let b = op.rhs(f.values(), &g);
    let bn = norm(&b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}

/// The solution of `div(eps grad w) = v`, `w = eta0` on the boundary.
pub fn l_eps_inverse(
    eps: &ScalarField,
    v: &ScalarField,
    eta0: &BoundaryField,
    tol: f64,
) -> Result<ScalarField> {
    l_eps_inverse_from(eps, v, eta0, tol, None)
}

pub fn l_eps_inverse_from(
    eps: &ScalarField,
    v: &ScalarField,
    eta0: &BoundaryField,
    tol: f64,
    initial: Option<&ScalarField>,
) -> Result<ScalarField> {
    let neg = v.values().iter().map(|x| -x).collect();
    let f = ScalarField::from_raw(v.grid().clone(), neg);
    let problem = LinearEllipticProblem::with_min_bound(eps.clone(), f, eta0.clone())?;
    Ok(solve_dirichlet_from(&problem, tol, initial)?.0)
}

/// Normal trace of `a grad u`.
pub fn boundary_flux(a: &ScalarField, u: &ScalarField) -> BoundaryField {
    normal_trace(&gradient(u).scaled(a))
}

/// One application of the Dirichlet-to-Neumann map of `div(a grad .)`.
pub fn dn_map(a: &ScalarField, f_bdry: &BoundaryField, tol: f64) -> Result<BoundaryField> {
    let zero = ScalarField::constant(a.grid().clone(), 0.0);
    let problem = LinearEllipticProblem::with_min_bound(a.clone(), zero, f_bdry.clone())?;
    let (u, _) = solve_dirichlet(&problem, tol)?;
    Ok(boundary_flux(a, &u))
}
