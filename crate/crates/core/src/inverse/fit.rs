//! Least-squares fit of a parametrised diffusion coefficient to measured
//! species fluxes, with the potential and public data held fixed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{DiffusionModel, LawSpec, ModelBundle, SpatialPoly};
use crate::error::{Error, Result};
use crate::forward::PicardOptions;
use crate::measure::{ExperimentRequest, Laboratory, Measurement};
use crate::mesh::Grid;

/// Parametric families shared by all species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionFamily {
    /// `theta_1 + theta_2 s`.
    LinearInS,
    /// `theta_0 + sum_i theta_i p_i + theta_{M+1} s`.
    AffineState,
}

impl DiffusionFamily {
    pub fn params(&self, species: usize) -> usize {
        match self {
            DiffusionFamily::LinearInS => 2,
            DiffusionFamily::AffineState => species + 2,
        }
    }

    pub fn build(&self, theta: &[f64], species: usize, lambda: f64) -> Result<Vec<DiffusionModel>> {
        if theta.len() != self.params(species) {
            return Err(Error::InvalidArgument(format!(
                "{:?} takes {} parameters, got {}",
                self,
                self.params(species),
                theta.len()
            )));
        }
        let (c0, a, b) = match self {
            DiffusionFamily::LinearInS => (theta[0], vec![], theta[1]),
            DiffusionFamily::AffineState => (theta[0], theta[1..=species].to_vec(), theta[species + 1]),
        };
        let lipschitz = a.iter().map(|v: &f64| v.abs()).sum::<f64>() + b.abs();
        let law = LawSpec::Affine { a, b, c: SpatialPoly::constant(c0) }.build()?;
        Ok(vec![DiffusionModel::new(law, lambda, f64::INFINITY, lipschitz); species])
    }
}

/// One measured experiment; the request is replayed on the inversion grid.
#[derive(Debug, Clone)]
pub struct FitDatum {
    pub request: ExperimentRequest,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Forward-difference step relative to `max(|theta_j|, 1)`.
    pub fd_step: f64,
    /// Stop when an accepted step lowers the loss by less than this fraction.
    pub loss_tol: f64,
    pub grad_tol: f64,
    /// Singular values below `rank_tol * s_max` count as rank deficiency.
    pub rank_tol: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            fd_step: 1e-4,
            loss_tol: 1e-10,
            grad_tol: 1e-8,
            rank_tol: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionFitProblem {
    /// Grid used for predictions.
    pub grid: Arc<Grid>,
    /// Public data and the known potential; its diffusion laws are replaced.
    pub base: ModelBundle,
    pub family: DiffusionFamily,
    pub theta_init: Vec<f64>,
    pub theta_box: Vec<[f64; 2]>,
    pub data: Vec<FitDatum>,
    pub picard: PicardOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitIteration {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub damping: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
    pub trace: Vec<FitIteration>,
    /// Condition number of the Jacobian at the initial guess.
    pub condition: f64,
}

struct Residuals<'a> {
    problem: &'a DiffusionFitProblem,
    /// Per datum: data boundary index for each prediction boundary node.
    maps: Vec<Vec<usize>>,
    sqrt_w: Vec<f64>,
}

impl<'a> Residuals<'a> {
    fn new(problem: &'a DiffusionFitProblem) -> Result<Self> {
        let grid = &problem.grid;
        let dim = grid.dim();
        let maps = problem
            .data
            .iter()
            .map(|d| {
                let dg = d.measurement.voltages.grid();
                grid.boundary_ids()
                    .iter()
                    .map(|&id| {
                        let x = &grid.point(id)[..dim];
                        dg.locate(x).and_then(|j| dg.boundary_index(j)).ok_or_else(|| {
                            Error::InvalidArgument(format!("data grid has no boundary node at {x:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let sqrt_w = grid.boundary_weights().iter().map(|w| w.sqrt()).collect();
        Ok(Self { problem, maps, sqrt_w })
    }

    fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let m = p.base.species();
        let bundle = p.base.with_diffusion(p.family.build(theta, m, p.base.lambda)?)?;
        let lab = Laboratory::new(p.grid.clone(), bundle).with_options(p.picard.clone());
        let parts = p
            .data
            .par_iter()
            .zip(&self.maps)
            .map(|(d, map)| {
                let pred = lab.run(&d.request)?;
                let mut r = Vec::with_capacity(m * map.len());
                for (pf, df) in pred.record.flux.iter().zip(&d.measurement.record.flux) {
                    for (b, &j) in map.iter().enumerate() {
                        r.push(self.sqrt_w[b] * (pf.values()[b] - df.values()[j]));
                    }
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    }

    fn jacobian(&self, theta: &[f64], r: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let cols = (0..theta.len())
            .into_par_iter()
            .map(|j| {
                let h = step * theta[j].abs().max(1.0);
                let mut t = theta.to_vec();
                t[j] += h;
                let rp = self.eval(&t)?;
                Ok(rp.iter().zip(r).map(|(a, b)| (a - b) / h).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(r.len(), theta.len(), |i, j| cols[j][i]))
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt with a forward-difference Jacobian. Fails with
/// [`Error::Identifiability`] when the Jacobian at the initial guess is rank
/// deficient.
pub fn fit_diffusion(problem: &DiffusionFitProblem, opts: &FitOptions) -> Result<FitReport> {
    let n = problem.family.params(problem.base.species());
    if problem.theta_init.len() != n || problem.theta_box.len() != n {
        return Err(Error::InvalidArgument(format!("expected {n} initial values and bounds")));
    }
    if problem.data.is_empty() {
        return Err(Error::InvalidArgument("no measurements to fit".into()));
    }
    let clamp = |t: &[f64]| -> Vec<f64> { t.iter().zip(&problem.theta_box).map(|(v, b)| v.clamp(b[0], b[1])).collect() };
    let res = Residuals::new(problem)?;
    let mut theta = clamp(&problem.theta_init);
    let mut r = res.eval(&theta)?;
    let mut loss = sum_sq(&r);
    let mut jac = res.jacobian(&theta, &r, opts.fd_step)?;

    let svd = jac.clone().svd(false, true);
    let s_max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > opts.rank_tol * s_max).count();
    if rank < n || s_max == 0.0 {
        let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
        let k = svd.singular_values.imin();
        return Err(Error::Identifiability { rank, params: n, null_direction: v_t.row(k).iter().copied().collect() });
    }
    let condition = s_max / svd.singular_values.min();

    let mut report = FitReport {
        theta: theta.clone(),
        loss,
        iterations: 0,
        converged: false,
        reason: String::new(),
        trace: vec![],
        condition,
    };
    let mut damping = opts.initial_damping;
    loop {
        let g = jac.transpose() * DVector::from_column_slice(&r);
        if loss == 0.0 || g.norm() < opts.grad_tol {
            report.converged = true;
            report.reason = "gradient below tolerance".into();
            break;
        }
        if report.iterations >= opts.max_iterations {
            report.reason = "iteration limit".into();
            break;
        }
        if damping > 1e12 {
            report.reason = "damping limit".into();
            break;
        }
        report.iterations += 1;
        let jtj = jac.transpose() * &jac;
        let mut a = jtj.clone();
        for i in 0..n {
            a[(i, i)] += damping * jtj[(i, i)].max(1e-300);
        }
        let step = a.lu().solve(&(-g)).ok_or_else(|| Error::InvalidArgument("singular normal equations".into()))?;
        let trial: Vec<f64> = clamp(&theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect::<Vec<_>>());
        let outcome = res.eval(&trial).ok().map(|rt| (sum_sq(&rt), rt)).filter(|(l, _)| l.is_finite() && *l < loss);
        match outcome {
            Some((lt, rt)) => {
                let decrease = (loss - lt) / loss;
                report.trace.push(FitIteration { theta: trial.clone(), loss: lt, damping, accepted: true });
                theta = trial;
                r = rt;
                loss = lt;
                damping /= 3.0;
                if decrease < opts.loss_tol {
                    report.converged = true;
                    report.reason = "relative loss decrease below tolerance".into();
                    break;
                }
                jac = res.jacobian(&theta, &r, opts.fd_step)?;
            }
            None => {
                report.trace.push(FitIteration { theta: trial, loss: f64::NAN, damping, accepted: false });
                damping *= 4.0;
            }
        }
    }
    report.theta = theta;
    report.loss = loss;
    Ok(report)
}
