//! Interior values of the potential from temperature probes.
//!
//! With constant concentrations `mu`, `sigma = omega0 + H(eta0)` where
//! `omega0` solves `div(eps grad w) = q.mu`, `w = 0` on the boundary and `H`
//! is the eps-harmonic extension. Choosing `tau(x) = h_hat(mu, s - omega0(y), x)`
//! makes `eta0` constant, so `sigma(y) = s` up to the table offset and the
//! probed temperature samples `h_hat(mu, s, y)`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Entry, Pchip, Provenance, ReconstructionTable};
use crate::elliptic::l_eps_inverse;
use crate::error::{Error, Result};
use crate::measure::{BoundaryProfile, ExperimentRequest, Laboratory};
use crate::mesh::{BoundaryField, ScalarField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorReconstruction {
    pub table: ReconstructionTable,
    /// Targets outside the range covered by the boundary table.
    pub skipped: Vec<f64>,
    pub omega0: f64,
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Inverse of `phi_hat(mu, ., x)` at every boundary node, from boundary entries.
fn boundary_inverses(lab: &Laboratory, table: &ReconstructionTable, mu: &[f64]) -> Result<Vec<Pchip>> {
    let grid = lab.grid();
    let bound = 0.5 * lab.public().lambda;
    let mut by_node: HashMap<Vec<u64>, Vec<(f64, f64)>> = HashMap::new();
    for e in table.entries.iter().filter(|e| e.provenance == Provenance::BoundaryVoltage && e.p == mu) {
        by_node.entry(bits(&e.x)).or_default().push((e.t, e.value));
    }
    grid.boundary_ids()
        .iter()
        .map(|&id| {
            let x = grid.point(id)[..grid.dim()].to_vec();
            let mut pts = by_node.remove(&bits(&x)).unwrap_or_default();
            if pts.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "boundary table has {} samples at p = {mu:?}, x = {x:?}; two or more are needed",
                    pts.len()
                )));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pts.windows(2) {
                let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                if !(slope >= bound) {
                    return Err(Error::Monotonicity { slope, bound });
                }
            }
            Pchip::new(pts.iter().map(|p| p.1).collect(), pts.iter().map(|p| p.0).collect())
        })
        .collect()
}

/// Tabulates `phi_hat(mu, t, y)` at one point `y` for the potential levels
/// `s_samples`, using a boundary table with the same normalisation that
/// covers `p = mu` at every boundary node.
pub fn reconstruct_phi_interior(
    lab: &Laboratory,
    boundary: &ReconstructionTable,
    mu: &[f64],
    s_samples: &[f64],
    y: &[f64],
) -> Result<InteriorReconstruction> {
    let grid = lab.grid().clone();
    let m = lab.species();
    if mu.len() != m {
        return Err(Error::InvalidArgument(format!("{} concentrations for {m} species", mu.len())));
    }
    if y.len() != grid.dim() || !grid.contains(y) {
        return Err(Error::OutsideDomain { point: y.to_vec() });
    }
    if !lab.is_source_free() {
        return Err(Error::SourcesPresent);
    }
    let inverses = boundary_inverses(lab, boundary, mu)?;

    let public = lab.public();
    let eps = public.permittivity.field(&grid)?;
    let charge: f64 = public.q.iter().zip(mu).map(|(q, c)| q * c).sum();
    let omega = l_eps_inverse(
        &eps,
        &ScalarField::constant(grid.clone(), charge),
        &BoundaryField::constant(grid.clone(), 0.0),
        1e-12,
    )?;
    let omega0 = omega.at(y)?;

    let runs: Vec<(f64, Option<Result<f64>>)> = s_samples
        .par_iter()
        .map(|&s| {
            let target = s - omega0;
            let tau: Option<Vec<f64>> = inverses.iter().map(|p| p.eval(target)).collect();
            let Some(values) = tau else {
                return (s, None);
            };
            let req = ExperimentRequest::new(
                mu.iter().map(|&v| BoundaryProfile::Constant { value: v }).collect(),
                BoundaryProfile::Nodal { values },
            )
            .with_probes(vec![y.to_vec()]);
            (s, Some(lab.run(&req).map(|meas| meas.probes[0])))
        })
        .collect();

    let mut table = ReconstructionTable::new(m, grid.dim(), boundary.z0.clone(), boundary.x0.clone());
    let mut skipped = vec![];
    for (s, res) in runs {
        match res {
            None => skipped.push(s),
            Some(Ok(t)) => table.insert(Entry {
                p: mu.to_vec(),
                t,
                x: y.to_vec(),
                value: s,
                provenance: Provenance::InteriorTemperature,
            })?,
            Some(Err(e)) => table.failures.push(format!("s = {s}: {e}")),
        }
    }
    Ok(InteriorReconstruction { table, skipped, omega0 })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coefficients::{DiffusionModel, LawSpec, ModelBundle, PermittivityField, PotentialModel, SpatialPoly};
    use crate::inverse::{reconstruct_phi_boundary, Reference};
    use crate::mesh::Grid;

    fn lab(law: LawSpec) -> Laboratory {
        let grid = Arc::new(Grid::unit(2, 17).unwrap());
        let bundle = ModelBundle::source_free(
            vec![0.8],
            PotentialModel::new(law.build().unwrap(), 0.8, 1.0),
            vec![DiffusionModel::constant(1.0)],
            PermittivityField::constant(1.0),
            0.5,
        )
        .unwrap();
        Laboratory::new(grid, bundle)
    }

    fn affine() -> LawSpec {
        LawSpec::Affine { a: vec![0.5], b: 1.5, c: SpatialPoly { c0: 0.0, cx: vec![0.4, 0.1], cxx: vec![] } }
    }

    fn boundary_table(lab: &Laboratory, mu: f64) -> ReconstructionTable {
        let zs: Vec<Vec<f64>> = (0..=20).map(|k| vec![mu, -1.0 + 0.15 * k as f64]).collect();
        let x0 = lab.grid().boundary_ids()[0];
        reconstruct_phi_boundary(lab, &zs, lab.grid().boundary_ids(), &Reference { z0: vec![mu, 0.5], x0 }).unwrap()
    }

    #[test]
    fn interior_samples_share_the_boundary_offset() {
        let lab = lab(affine());
        let tab = boundary_table(&lab, 1.0);
        let y = vec![0.5, 0.375];
        let rec = reconstruct_phi_interior(&lab, &tab, &[1.0], &[0.0, 0.5, 1.0, 1.5], &y).unwrap();
        assert!(rec.skipped.is_empty());
        assert_eq!(rec.table.len(), 4);
        let truth = |p: &[f64], t: f64, x: &[f64]| 0.5 * p[0] + 1.5 * t + 0.4 * x[0] + 0.1 * x[1];
        let r = truth(&[1.0], 0.5, &[0.0, 0.0]);
        for e in &rec.table.entries {
            assert!((e.value - (truth(&e.p, e.t, &e.x) - r)).abs() < 1e-8, "{e:?}");
        }
    }

    #[test]
    fn out_of_range_levels_are_skipped() {
        let lab = lab(affine());
        let tab = boundary_table(&lab, 1.0);
        let rec = reconstruct_phi_interior(&lab, &tab, &[1.0], &[0.5, 50.0], &[0.5, 0.5]).unwrap();
        assert_eq!(rec.skipped, vec![50.0]);
        assert_eq!(rec.table.len(), 1);
    }

    #[test]
    fn missing_concentration_level_is_an_error() {
        let lab = lab(affine());
        let tab = boundary_table(&lab, 1.0);
        assert!(reconstruct_phi_interior(&lab, &tab, &[2.0], &[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn non_monotone_table_rejected() {
        let lab = lab(affine());
        let mut tab = boundary_table(&lab, 1.0);
        let x = tab.entries[0].x.clone();
        for e in tab.entries.iter_mut().filter(|e| e.x == x) {
            e.value = -e.value;
        }
        let r = reconstruct_phi_interior(&lab, &tab, &[1.0], &[0.5], &[0.5, 0.5]);
        assert!(matches!(r, Err(Error::Monotonicity { .. })));
    }
}
