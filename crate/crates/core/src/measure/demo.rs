//! Boundary data cannot see interior changes of the potential: replacing
//! `phi` by `phi + psi(x) phi_tilde` with `psi` supported inside the domain
//! leaves every boundary measurement unchanged while interior temperatures
//! move. Diffusion coefficients here depend on position only.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::lab::{ExperimentRequest, Laboratory};
use crate::coefficients::laws::BumpModified;
use crate::coefficients::{Bump, Law, ModelBundle, PotentialModel};
use crate::error::{Error, Result};
use crate::forward::PicardOptions;
use crate::mesh::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpDemoReport {
    /// Largest difference over all experiments, per measurement family.
    pub voltage_discrepancy: f64,
    pub flux_discrepancy: f64,
    pub temp_flux_discrepancy: f64,
    /// `|T_phi - T_Phi|` at the bump centre, per experiment.
    pub interior_differences: Vec<f64>,
}

impl BumpDemoReport {
    pub fn boundary_discrepancy(&self) -> f64 {
        self.voltage_discrepancy.max(self.flux_discrepancy).max(self.temp_flux_discrepancy)
    }

    pub fn min_interior_difference(&self) -> f64 {
        self.interior_differences.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The modified potential `phi + psi phi_tilde`.
pub fn bump_modified(phi: &PotentialModel, bump: &Bump, tilde: Law) -> PotentialModel {
    let law: Law = Arc::new(BumpModified { base: phi.law.clone(), bump: bump.clone(), tilde });
    PotentialModel { law, ..phi.clone() }
}

/// Runs every request against both potentials.
///
/// The one-sided boundary gradient reads the first three node layers, so the
/// bump must vanish there for the temperature flux to be unaffected.
pub fn boundary_nonuniqueness(
    grid: &Arc<Grid>,
    bundle: &ModelBundle,
    bump: &Bump,
    tilde: Law,
    requests: &[ExperimentRequest],
    opts: &PicardOptions,
) -> Result<BumpDemoReport> {
    let dim = grid.dim();
    let n = grid.nodes_per_axis();
    for id in 0..grid.node_count() {
        let idx = grid.index(id);
        let depth = (0..dim).map(|k| idx[k].min(n[k] - 1 - idx[k])).min().unwrap();
        if depth <= 2 && !bump.outside(&grid.point(id)[..dim]) {
            return Err(Error::InvalidArgument(format!(
                "bump support reaches node {id} within two layers of the boundary"
            )));
        }
    }
    let centre = bump.centre.clone();
    let lab_a = Laboratory::new(grid.clone(), bundle.clone()).with_options(opts.clone());
    let modified = bundle.with_potential(bump_modified(&bundle.potential, bump, tilde));
    let lab_b = Laboratory::new(grid.clone(), modified).with_options(opts.clone());

    let mut report = BumpDemoReport {
        voltage_discrepancy: 0.0,
        flux_discrepancy: 0.0,
        temp_flux_discrepancy: 0.0,
        interior_differences: Vec::with_capacity(requests.len()),
    };
    for req in requests {
        let mut req = req.clone();
        req.probes.push(centre.clone());
        let a = lab_a.run(&req)?;
        let b = lab_b.run(&req)?;
        report.voltage_discrepancy = report.voltage_discrepancy.max(a.voltages.max_abs_diff(&b.voltages));
        for (fa, fb) in a.record.flux.iter().zip(&b.record.flux) {
            report.flux_discrepancy = report.flux_discrepancy.max(fa.max_abs_diff(fb));
        }
        if let (Some(ta), Some(tb)) = (&a.record.temp_flux, &b.record.temp_flux) {
            report.temp_flux_discrepancy = report.temp_flux_discrepancy.max(ta.max_abs_diff(tb));
        }
        let k = a.probes.len() - 1;
        report.interior_differences.push((a.probes[k] - b.probes[k]).abs());
    }
    Ok(report)
}
