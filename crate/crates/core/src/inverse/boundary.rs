//! Boundary values and derivatives of the potential from voltage
//! measurements. Voltages fix `phi(gamma, tau, x)` on the boundary up to the
//! value at the reference node, so experiments whose data equal a fixed
//! reference state `z0` at `x0` give `phi(z, x) - phi(z0, x0)` directly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Entry, Provenance, ReconstructionTable};
use crate::elliptic::l_eps_inverse;
use crate::error::{Error, Result};
use crate::measure::{BoundaryProfile, ExperimentRequest, Laboratory};
use crate::mesh::{gradient, normal_trace, Grid, ScalarField};

/// Normalisation point: `phi_hat(z0, x0) = 0` with `z0 = (p, s)` and `x0` a
/// boundary node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub z0: Vec<f64>,
    pub x0: usize,
}

fn point(grid: &Grid, id: usize) -> Vec<f64> {
    grid.point(id)[..grid.dim()].to_vec()
}

fn farthest_boundary_node(grid: &Grid, from: usize) -> usize {
    let p = point(grid, from);
    let dist = |id: usize| point(grid, id).iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    *grid.boundary_ids().iter().max_by(|a, b| dist(**a).total_cmp(&dist(**b))).unwrap()
}

fn check_boundary(grid: &Grid, id: usize) -> Result<()> {
    if id >= grid.node_count() || !grid.is_boundary(id) {
        return Err(Error::InvalidArgument(format!("node {id} is not a boundary node")));
    }
    Ok(())
}

fn constant_request(z: &[f64], m: usize) -> ExperimentRequest {
    ExperimentRequest::new(
        z[..m].iter().map(|&v| BoundaryProfile::Constant { value: v }).collect(),
        BoundaryProfile::Constant { value: z[m] },
    )
}

/// Data equal to `z` everywhere except a one-cell hat reaching `z0` at `x0`.
fn hat_request(z: &[f64], z0: &[f64], centre: &[f64], radius: f64, m: usize) -> ExperimentRequest {
    let profile = |base: f64, peak: f64| {
        if base == peak {
            BoundaryProfile::Constant { value: base }
        } else {
            BoundaryProfile::Hat { base, peak, centre: centre.to_vec(), radius }
        }
    };
    ExperimentRequest::new((0..m).map(|i| profile(z[i], z0[i])).collect(), profile(z[m], z0[m]))
}

/// `phi(z, x) - phi(z0, x0)` for every `x` in `xs`.
fn sample_values(lab: &Laboratory, z: &[f64], xs: &[usize], reference: &Reference, x1: usize) -> Result<Vec<f64>> {
    let grid = lab.grid();
    let m = lab.species();
    let x0 = reference.x0;
    if z == reference.z0.as_slice() {
        let meas = lab.run(&constant_request(z, m).with_reference(x0))?;
        return xs.iter().map(|&x| meas.voltage(x, x0)).collect();
    }
    let centre = point(grid, x0);
    let radius = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    let hat = lab.run(&hat_request(z, &reference.z0, &centre, radius, m).with_reference(x0))?;
    let mut through_x1 = None;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        if x == x0 {
            if through_x1.is_none() {
                let cst = lab.run(&constant_request(z, m).with_reference(x1))?;
                through_x1 = Some(cst.voltage(x0, x1)? + hat.voltage(x1, x0)?);
            }
            out.push(through_x1.unwrap());
        } else {
            if BoundaryProfile::hat_weight(&centre, radius, &point(grid, x)) != 0.0 {
                return Err(Error::InvalidArgument(format!("node {x} lies inside the reference hat")));
            }
            out.push(hat.voltage(x, x0)?);
        }
    }
    Ok(out)
}

fn validate(lab: &Laboratory, z_samples: &[Vec<f64>], xs: &[usize], reference: &Reference) -> Result<()> {
    let m = lab.species();
    if !lab.is_source_free() {
        return Err(Error::SourcesPresent);
    }
    for z in z_samples.iter().chain(std::iter::once(&reference.z0)) {
        if z.len() != m + 1 || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("state sample {z:?} must have {} finite components", m + 1)));
        }
    }
    check_boundary(lab.grid(), reference.x0)?;
    for &x in xs {
        check_boundary(lab.grid(), x)?;
    }
    Ok(())
}

fn sample_all(
    lab: &Laboratory,
    z_samples: &[Vec<f64>],
    xs: &[usize],
    reference: &Reference,
) -> Result<Vec<Result<Vec<f64>>>> {
    validate(lab, z_samples, xs, reference)?;
    let x1 = farthest_boundary_node(lab.grid(), reference.x0);
    Ok(z_samples.par_iter().map(|z| sample_values(lab, z, xs, reference, x1)).collect())
}

/// Tabulates `phi_hat(z, x) = phi(z, x) - phi(z0, x0)` for every state sample
/// `z = (p_1..p_M, s)` and boundary node `x`. Samples whose experiment fails
/// are listed in `failures` and produce no entries.
pub fn reconstruct_phi_boundary(
    lab: &Laboratory,
    z_samples: &[Vec<f64>],
    x_samples: &[usize],
    reference: &Reference,
) -> Result<ReconstructionTable> {
    let grid = lab.grid();
    let m = lab.species();
    let results = sample_all(lab, z_samples, x_samples, reference)?;
    let mut table = ReconstructionTable::new(m, grid.dim(), reference.z0.clone(), point(grid, reference.x0));
    for (z, res) in z_samples.iter().zip(results) {
        match res {
            Ok(values) => {
                for (&x, value) in x_samples.iter().zip(values) {
                    table.insert(Entry {
                        p: z[..m].to_vec(),
                        t: z[m],
                        x: point(grid, x),
                        value,
                        provenance: Provenance::BoundaryVoltage,
                    })?;
                }
            }
            Err(e) => table.failures.push(format!("z = {z:?}: {e}")),
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGradient {
    pub z: Vec<f64>,
    pub node: usize,
    /// `d phi / d p_i` then `d phi / d s`.
    pub dz: Vec<f64>,
    pub delta: Vec<f64>,
    /// Tangential position derivatives; `None` along the face normal.
    pub tangential: Vec<Option<f64>>,
    /// Axes where a one-sided difference had to be used.
    pub one_sided: Vec<usize>,
}

/// Centred differences of `phi_hat` in each state component (step
/// `delta * max(1, |z_j|)`) and along the boundary at `node`.
pub fn reconstruct_phi_gradients_boundary(
    lab: &Laboratory,
    z: &[f64],
    node: usize,
    delta: f64,
) -> Result<BoundaryGradient> {
    let grid = lab.grid().clone();
    check_boundary(&grid, node)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("difference step must be positive, got {delta}")));
    }
    let dim = grid.dim();
    let n = grid.nodes_per_axis();
    let b = grid.boundary_index(node).unwrap();
    let face_axis = grid.face(b).axis;
    let idx = grid.index(node);

    let mut xs = vec![node];
    let mut stencils: Vec<Option<(Vec<usize>, Vec<f64>, bool)>> = vec![None; dim];
    for k in (0..dim).filter(|&k| k != face_axis) {
        let at = |i: usize| {
            let mut j = idx;
            j[k] = i;
            grid.node_id(j)
        };
        let h = grid.spacing()[k];
        let i = idx[k];
        let st = if i == 0 {
            (vec![at(0), at(1), at(2)], vec![-1.5 / h, 2.0 / h, -0.5 / h], true)
        } else if i == n[k] - 1 {
            (vec![at(i), at(i - 1), at(i - 2)], vec![1.5 / h, -2.0 / h, 0.5 / h], true)
        } else {
            (vec![at(i - 1), at(i + 1)], vec![-0.5 / h, 0.5 / h], false)
        };
        for &id in &st.0 {
            if !xs.contains(&id) {
                xs.push(id);
            }
        }
        stencils[k] = Some(st);
    }

    let reference = Reference { z0: z.to_vec(), x0: farthest_boundary_node(&grid, node) };
    let steps: Vec<f64> = z.iter().map(|v| delta * v.abs().max(1.0)).collect();
    let mut samples = vec![z.to_vec()];
    for (j, &d) in steps.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let mut zz = z.to_vec();
            zz[j] += sign * d;
            samples.push(zz);
        }
    }
    let values = sample_all(lab, &samples, &xs, &reference)?.into_iter().collect::<Result<Vec<_>>>()?;
    let dz = steps.iter().enumerate().map(|(j, d)| (values[1 + 2 * j][0] - values[2 + 2 * j][0]) / (2.0 * d)).collect();

    let base = &values[0];
    let value_at = |id: usize| base[xs.iter().position(|&x| x == id).unwrap()];
    let mut one_sided = vec![];
    let tangential = stencils
        .into_iter()
        .enumerate()
        .map(|(k, st)| {
            st.map(|(ids, w, flagged)| {
                if flagged {
                    one_sided.push(k);
                }
                ids.iter().zip(&w).map(|(&id, w)| w * value_at(id)).sum()
            })
        })
        .collect();
    Ok(BoundaryGradient { z: z.to_vec(), node, dz, delta: steps, tangential, one_sided })
}

/// Boundary temperature data used for the normal-gradient experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalVariant {
    /// `tau = s` everywhere.
    Constant,
    /// `tau(y) = s + beta |y - x|^2`, equal to `s` at the sample node.
    Perturbed { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalGradient {
    pub value: f64,
    pub normal_sigma: f64,
    pub normal_temperature: f64,
    pub ds_phi: f64,
    /// Set when `ds_phi` falls below the ellipticity constant.
    pub flagged: bool,
}

/// `N . grad_x phi(z, x)` at a boundary node from the identity
/// `N.grad sigma = ds_phi N.grad T + sum_i dp_i phi N.grad c_i + N.grad_x phi`.
///
/// Concentrations are held constant so the `grad c_i` terms vanish; `sigma`
/// is recomputed from public data and measured voltages, `N.grad T` is
/// measured, and `ds_phi` comes from [`reconstruct_phi_gradients_boundary`].
pub fn recover_normal_x_gradient(
    lab: &Laboratory,
    z: &[f64],
    node: usize,
    ds_phi: f64,
    variant: NormalVariant,
) -> Result<NormalGradient> {
    let grid = lab.grid().clone();
    let m = lab.species();
    validate(lab, &[z.to_vec()], &[node], &Reference { z0: z.to_vec(), x0: node })?;
    let xp = point(&grid, node);
    let tau = match variant {
        NormalVariant::Constant => BoundaryProfile::Constant { value: z[m] },
        NormalVariant::Perturbed { beta } => BoundaryProfile::Nodal {
            values: grid
                .boundary_ids()
                .iter()
                .map(|&id| z[m] + beta * point(&grid, id).iter().zip(&xp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect(),
        },
    };
    let req = ExperimentRequest::new(z[..m].iter().map(|&v| BoundaryProfile::Constant { value: v }).collect(), tau)
        .with_reference(node);
    let meas = lab.run(&req)?;
    let temp_flux = meas
        .record
        .temp_flux
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("experiment did not record the temperature flux".into()))?;

    let public = lab.public();
    let eps = public.permittivity.field(&grid)?;
    let charge: f64 = public.q.iter().zip(&z[..m]).map(|(q, c)| q * c).sum();
    let source = ScalarField::constant(grid.clone(), charge);
    let sigma = l_eps_inverse(&eps, &source, &meas.voltages, 1e-12)?;
    let b = grid.boundary_index(node).unwrap();
    let normal_sigma = normal_trace(&gradient(&sigma)).values()[b];
    let normal_temperature = temp_flux.values()[b];
    Ok(NormalGradient {
        value: normal_sigma - ds_phi * normal_temperature,
        normal_sigma,
        normal_temperature,
        ds_phi,
        flagged: ds_phi < public.lambda,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::coefficients::{DiffusionModel, LawSpec, ModelBundle, PermittivityField, PotentialModel, SpatialPoly};

    /// `phi = 0.5 p + s + 0.3 x^2 - 0.2 y`.
    fn lab(n: usize) -> Laboratory {
        let grid = Arc::new(Grid::unit(2, n).unwrap());
        let law = LawSpec::Affine {
            a: vec![0.5],
            b: 1.0,
            c: SpatialPoly { c0: 0.0, cx: vec![0.0, -0.2], cxx: vec![0.3, 0.0] },
        }
        .build()
        .unwrap();
        let bundle = ModelBundle::source_free(
            vec![0.7],
            PotentialModel::new(law, 1.0, 1.0),
            vec![DiffusionModel::constant(1.0)],
            PermittivityField::constant(1.0),
            0.5,
        )
        .unwrap();
        Laboratory::new(grid, bundle)
    }

    fn phi(z: &[f64], x: &[f64]) -> f64 {
        0.5 * z[0] + z[1] + 0.3 * x[0] * x[0] - 0.2 * x[1]
    }

    #[test]
    fn boundary_table_matches_shifted_truth() {
        let lab = lab(9);
        let grid = lab.grid().clone();
        let x0 = grid.boundary_ids()[3];
        let reference = Reference { z0: vec![1.0, 0.5], x0 };
        let zs = vec![vec![1.0, 0.5], vec![1.0, 0.9], vec![1.4, 0.2]];
        let xs: Vec<usize> = grid.boundary_ids().to_vec();
        let mut tab = reconstruct_phi_boundary(&lab, &zs, &xs, &reference).unwrap();
        assert!(tab.failures.is_empty());
        assert_eq!(tab.len(), zs.len() * xs.len());
        let r = phi(&reference.z0, &point(&grid, x0));
        for e in &tab.entries {
            let mut z = e.p.clone();
            z.push(e.t);
            assert!((e.value - (phi(&z, &e.x) - r)).abs() < 1e-9, "{e:?}");
        }
        let st = tab.offsets(|p, t, x| phi(&[p[0], t], x));
        assert!(st.std < 1e-9);
    }

    #[test]
    fn rejects_interior_nodes() {
        let lab = lab(5);
        let interior = lab.grid().interior_ids()[0];
        let reference = Reference { z0: vec![1.0, 0.5], x0: lab.grid().boundary_ids()[0] };
        assert!(reconstruct_phi_boundary(&lab, &[vec![1.0, 0.5]], &[interior], &reference).is_err());
    }

    #[test]
    fn gradients_of_affine_quadratic_potential() {
        let lab = lab(9);
        let grid = lab.grid().clone();
        // node on the face y = 0 away from corners, and a corner node
        let mid = grid.node_id([4, 0, 0]);
        let g = reconstruct_phi_gradients_boundary(&lab, &[1.2, 0.4], mid, 1e-3).unwrap();
        assert!((g.dz[0] - 0.5).abs() < 1e-7);
        assert!((g.dz[1] - 1.0).abs() < 1e-7);
        let b = grid.boundary_index(mid).unwrap();
        let axis = grid.face(b).axis;
        let tangent = 1 - axis;
        let x = point(&grid, mid);
        let expected = if tangent == 0 { 0.6 * x[0] } else { -0.2 };
        assert!((g.tangential[tangent].unwrap() - expected).abs() < 1e-8);
        assert!(g.tangential[axis].is_none());
        assert!(g.one_sided.is_empty());

        let corner = grid.node_id([0, 0, 0]);
        let g = reconstruct_phi_gradients_boundary(&lab, &[1.2, 0.4], corner, 1e-3).unwrap();
        assert_eq!(g.one_sided.len(), 1);
    }

    #[test]
    fn normal_gradient_from_constant_and_perturbed_data() {
        let lab = lab(17);
        let grid = lab.grid().clone();
        let node = grid.node_id([16, 8, 0]);
        let x = point(&grid, node);
        let b = grid.boundary_index(node).unwrap();
        let nrm = grid.normal(b);
        let expected = nrm[0] * 0.6 * x[0] + nrm[1] * -0.2;
        for variant in [NormalVariant::Constant, NormalVariant::Perturbed { beta: 0.3 }] {
            let r = recover_normal_x_gradient(&lab, &[1.0, 0.5], node, 1.0, variant).unwrap();
            assert!((r.value - expected).abs() < 1e-6, "{variant:?}: {} vs {expected}", r.value);
            assert!(!r.flagged);
        }
    }
}
