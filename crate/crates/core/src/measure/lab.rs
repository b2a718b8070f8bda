//! The laboratory: runs experiments against a hidden model and reports only
//! what a measurement would.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cauchy_record, interior_temperature, CauchyRecord};
use crate::coefficients::{Expr, ModelBundle, PermittivityField};
use crate::error::{Error, Result};
use crate::forward::{forward_constant_bc, forward_solve, ConvergenceReport, PicardOptions, SystemState};
use crate::mesh::{BoundaryField, Grid};

/// Dirichlet data descriptor, evaluated on whatever grid the laboratory uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryProfile {
    Constant {
        value: f64,
    },
    Affine {
        c0: f64,
        cx: Vec<f64>,
    },
    /// Expression in `x1..x3`.
    Expr {
        expr: String,
    },
    /// `base + (peak - base) prod_k max(0, 1 - |x_k - centre_k| / radius)`.
    Hat {
        base: f64,
        peak: f64,
        centre: Vec<f64>,
        radius: f64,
    },
    /// Values in the grid's boundary ordering.
    Nodal {
        values: Vec<f64>,
    },
}

impl BoundaryProfile {
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            BoundaryProfile::Constant { value } => Some(*value),
            _ => None,
        }
    }

    pub fn hat_weight(centre: &[f64], radius: f64, x: &[f64]) -> f64 {
        centre.iter().zip(x).map(|(c, x)| (1.0 - (x - c).abs() / radius).max(0.0)).product()
    }

    pub fn on(&self, grid: &Arc<Grid>) -> Result<BoundaryField> {
        match self {
            BoundaryProfile::Constant { value } => Ok(BoundaryField::constant(grid.clone(), *value)),
            BoundaryProfile::Affine { c0, cx } => {
                BoundaryField::from_fn(grid.clone(), |x| c0 + cx.iter().zip(x).map(|(c, x)| c * x).sum::<f64>())
            }
            BoundaryProfile::Expr { expr } => {
                let e = Expr::parse(expr)?;
                if e.species_used() > 0 {
                    return Err(Error::InvalidArgument(format!("boundary expression '{expr}' may only use x1..x3")));
                }
                BoundaryField::from_fn(grid.clone(), |x| e.eval(&[], 0.0, x))
            }
            BoundaryProfile::Hat { base, peak, centre, radius } => {
                if !(*radius > 0.0) || centre.len() != grid.dim() {
                    return Err(Error::InvalidArgument("hat profile needs a positive radius and a full centre".into()));
                }
                BoundaryField::from_fn(grid.clone(), |x| base + (peak - base) * Self::hat_weight(centre, *radius, x))
            }
            BoundaryProfile::Nodal { values } => BoundaryField::new(grid.clone(), values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRequest {
    pub gamma: Vec<BoundaryProfile>,
    pub tau: BoundaryProfile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<Vec<f64>>,
    /// Boundary node id voltages are measured against (default: the first boundary node).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
}

impl ExperimentRequest {
    pub fn new(gamma: Vec<BoundaryProfile>, tau: BoundaryProfile) -> Self {
        Self { gamma, tau, probes: vec![], reference: None }
    }

    pub fn with_probes(mut self, probes: Vec<Vec<f64>>) -> Self {
        self.probes = probes;
        self
    }

    pub fn with_reference(mut self, node: usize) -> Self {
        self.reference = Some(node);
        self
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        serde_json::to_string(self).unwrap_or_default().hash(&mut h);
        h.finish()
    }
}

/// Additive Gaussian noise per measurement family; all zero by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub flux_std: f64,
    pub temp_flux_std: f64,
    pub voltage_std: f64,
    pub temperature_std: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn is_zero(&self) -> bool {
        self.flux_std == 0.0 && self.temp_flux_std == 0.0 && self.voltage_std == 0.0 && self.temperature_std == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub request: ExperimentRequest,
    pub record: CauchyRecord,
    /// `sigma(x) - sigma(reference)` at every boundary node.
    pub voltages: BoundaryField,
    pub reference: usize,
    pub probes: Vec<f64>,
    pub noise_seed: Option<u64>,
    pub solver: ConvergenceReport,
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLine {
    pub request: ExperimentRequest,
    pub reference: usize,
    pub flux: Vec<Vec<f64>>,
    pub temp_flux: Option<Vec<f64>>,
    pub voltages: Vec<f64>,
    pub probes: Vec<f64>,
    pub noise_seed: Option<u64>,
}

impl Measurement {
    pub fn to_line(&self) -> MeasurementLine {
        MeasurementLine {
            request: self.request.clone(),
            reference: self.reference,
            flux: self.record.flux.iter().map(|f| f.values().to_vec()).collect(),
            temp_flux: self.record.temp_flux.as_ref().map(|f| f.values().to_vec()),
            voltages: self.voltages.values().to_vec(),
            probes: self.probes.clone(),
            noise_seed: self.noise_seed,
        }
    }

    /// Voltage between two boundary nodes.
    pub fn voltage(&self, x: usize, y: usize) -> Result<f64> {
        let grid = self.voltages.grid();
        let bx = grid.boundary_index(x).ok_or_else(|| Error::InvalidArgument(format!("node {x} is not on the boundary")))?;
        let by = grid.boundary_index(y).ok_or_else(|| Error::InvalidArgument(format!("node {y} is not on the boundary")))?;
        Ok(self.voltages.values()[bx] - self.voltages.values()[by])
    }
}

pub fn write_jsonl<W: Write>(measurements: &[Measurement], mut out: W) -> Result<()> {
    for m in measurements {
        serde_json::to_writer(&mut out, &m.to_line())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// The model data an experimenter is allowed to know.
#[derive(Debug, Clone)]
pub struct PublicData {
    pub q: Vec<f64>,
    pub permittivity: PermittivityField,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Laboratory {
    grid: Arc<Grid>,
    bundle: ModelBundle,
    opts: PicardOptions,
    noise: NoiseModel,
}

impl Laboratory {
    pub fn new(grid: Arc<Grid>, bundle: ModelBundle) -> Self {
        Self { grid, bundle, opts: PicardOptions::default(), noise: NoiseModel::default() }
    }

    pub fn with_options(mut self, opts: PicardOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn options(&self) -> &PicardOptions {
        &self.opts
    }

    pub fn species(&self) -> usize {
        self.bundle.species()
    }

    pub fn public(&self) -> PublicData {
        PublicData { q: self.bundle.q.clone(), permittivity: self.bundle.permittivity.clone(), lambda: self.bundle.lambda }
    }

    pub fn is_source_free(&self) -> bool {
        self.bundle.is_source_free()
    }

    pub(crate) fn solve(&self, req: &ExperimentRequest) -> Result<SystemState> {
        if req.gamma.len() != self.bundle.species() {
            return Err(Error::InvalidArgument(format!(
                "request has {} concentration profiles for {} species",
                req.gamma.len(),
                self.bundle.species()
            )));
        }
        let tau = req.tau.on(&self.grid)?;
        let constants: Option<Vec<f64>> = req.gamma.iter().map(BoundaryProfile::constant_value).collect();
        match constants {
            Some(g) if self.bundle.is_source_free() => forward_constant_bc(&self.bundle, &g, &tau, self.opts.inner_tol),
            _ => {
                let gamma = req.gamma.iter().map(|p| p.on(&self.grid)).collect::<Result<Vec<_>>>()?;
                forward_solve(&self.bundle, &gamma, &tau, &self.opts)
            }
        }
    }

    pub fn run(&self, req: &ExperimentRequest) -> Result<Measurement> {
        let state = self.solve(req)?;
        let mut record = cauchy_record(&state, &self.bundle)?;
        let reference = req.reference.unwrap_or(self.grid.boundary_ids()[0]);
        let rb = self
            .grid
            .boundary_index(reference)
            .ok_or_else(|| Error::InvalidArgument(format!("reference node {reference} is not on the boundary")))?;
        let sigma_b = state.sigma.trace();
        let s_ref = sigma_b.values()[rb];
        let mut voltages = sigma_b.map(|s| s - s_ref);
        let mut probes = interior_temperature(&state, &req.probes)?;

        let noise_seed = if self.noise.is_zero() {
            None
        } else {
            let seed = self.noise.seed ^ req.fingerprint();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perturb = |values: Vec<f64>, std: f64| -> Result<Vec<f64>> {
                if std == 0.0 {
                    return Ok(values);
                }
                let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(values.into_iter().map(|v| v + normal.sample(&mut rng)).collect())
            };
            for f in record.flux.iter_mut() {
                *f = BoundaryField::new(self.grid.clone(), perturb(f.values().to_vec(), self.noise.flux_std)?)?;
            }
            if let Some(tf) = record.temp_flux.as_mut() {
                *tf = BoundaryField::new(self.grid.clone(), perturb(tf.values().to_vec(), self.noise.temp_flux_std)?)?;
            }
            voltages = BoundaryField::new(self.grid.clone(), perturb(voltages.values().to_vec(), self.noise.voltage_std)?)?;
            probes = perturb(probes, self.noise.temperature_std)?;
            Some(seed)
        };

        Ok(Measurement {
            request: req.clone(),
            record,
            voltages,
            reference,
            probes,
            noise_seed,
            solver: state.report,
        })
    }

    /// Runs independent experiments concurrently; results keep request order.
    pub fn run_batch(&self, reqs: &[ExperimentRequest]) -> Vec<Result<Measurement>> {
        reqs.par_iter().map(|r| self.run(r)).collect()
    }
}
