//! Simulated measurements: Cauchy data, boundary voltages, interior
//! temperature probes, and the linearised Dirichlet-to-Neumann map.

pub mod demo;
pub mod lab;
pub mod linearise;

use crate::coefficients::{diffusion_field, ModelBundle};
use crate::elliptic::boundary_flux;
use crate::error::{Error, Result};
use crate::forward::SystemState;
use crate::mesh::{gradient, normal_trace, BoundaryField};

pub use demo::{boundary_nonuniqueness, BumpDemoReport};
pub use lab::{BoundaryProfile, ExperimentRequest, Laboratory, Measurement, NoiseModel, PublicData};
pub use linearise::{linearisation_rate, linearised_dn, RateOptions, RateReport};

/// Dirichlet data with the resulting boundary fluxes.
#[derive(Debug, Clone)]
pub struct CauchyRecord {
    pub gamma: Vec<BoundaryField>,
    pub tau: BoundaryField,
    /// `N . (D_i grad c_i)` per species.
    pub flux: Vec<BoundaryField>,
    /// `N . grad T`; absent from reduced records.
    pub temp_flux: Option<BoundaryField>,
}

impl CauchyRecord {
    /// Drops the temperature flux.
    pub fn reduced(mut self) -> Self {
        self.temp_flux = None;
        self
    }
}

pub fn cauchy_record(state: &SystemState, bundle: &ModelBundle) -> Result<CauchyRecord> {
    let flux = bundle
        .diffusion
        .iter()
        .zip(&state.c)
        .map(|(d, ci)| Ok(boundary_flux(&diffusion_field(d, &state.c, &state.temperature)?, ci)))
        .collect::<Result<Vec<_>>>()?;
    let temp_flux = normal_trace(&gradient(&state.temperature));
    Ok(CauchyRecord { gamma: state.gamma.clone(), tau: state.tau.clone(), flux, temp_flux: Some(temp_flux) })
}

/// `sigma(x) - sigma(y)` for boundary nodes `x`, `y` (node ids).
pub fn voltage(state: &SystemState, x: usize, y: usize) -> Result<f64> {
    let grid = state.grid();
    for id in [x, y] {
        if id >= grid.node_count() || !grid.is_boundary(id) {
            return Err(Error::InvalidArgument(format!("node {id} is not a boundary node")));
        }
    }
    Ok(state.sigma.values()[x] - state.sigma.values()[y])
}

/// Multilinear interpolation of `T` at each point.
pub fn interior_temperature(state: &SystemState, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points.iter().map(|x| state.temperature.at(x)).collect()
}
