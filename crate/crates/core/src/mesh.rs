//! Structured box grids, nodal fields and second-order difference operators.
//!
//! Nodes are numbered with the first axis varying fastest. A node is a
//! boundary node when any of its indices sits at either end of its axis.
//! Edge and corner nodes belong to exactly one face, chosen by axis priority
//! (x before y before z), so every boundary node carries a single outward
//! normal.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in up to three dimensions; unused trailing coordinates are zero.
pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Low,
    High,
}

/// The face of the box a boundary node is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn normal(&self) -> Point {
        let mut n = [0.0; 3];
        n[self.axis] = match self.side {
            Side::Low => -1.0,
            Side::High => 1.0,
        };
        n
    }
}

/// Serializable grid descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Vec<[f64; 2]>>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        let extent = match &self.extent {
            Some(e) => e.clone(),
            None => vec![[0.0, 1.0]; self.dim],
        };
        Grid::new(self.dim, &self.n, &extent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    h: [f64; 3],
    slots: Vec<Slot>,
    interior_ids: Vec<usize>,
    boundary_ids: Vec<usize>,
    faces: Vec<Face>,
}

impl Grid {
    pub fn new(dim: usize, n: &[usize], extent: &[[f64; 2]]) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2,3}}")));
        }
        if n.len() != dim || extent.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} node counts and intervals, got {} and {}",
                n.len(),
                extent.len()
            )));
        }
        let mut nn = [1usize; 3];
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut h = [0.0; 3];
        for a in 0..dim {
            if n[a] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} nodes; at least 3 are needed for an interior",
                    n[a]
                )));
            }
            let [l, u] = extent[a];
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(Error::InvalidGrid(format!("axis {a} has empty extent [{l}, {u}]")));
            }
            nn[a] = n[a];
            lo[a] = l;
            hi[a] = u;
            h[a] = (u - l) / (n[a] - 1) as f64;
        }

        let total: usize = nn.iter().product();
        let mut slots = Vec::with_capacity(total);
        let mut interior_ids = Vec::new();
        let mut boundary_ids = Vec::new();
        let mut faces = Vec::new();
        for id in 0..total {
            let idx = multi_index(&nn, id);
            let face = (0..dim).find_map(|a| {
                if idx[a] == 0 {
                    Some(Face { axis: a, side: Side::Low })
                } else if idx[a] == nn[a] - 1 {
                    Some(Face { axis: a, side: Side::High })
                } else {
                    None
                }
            });
            match face {
                Some(f) => {
                    slots.push(Slot::Boundary(boundary_ids.len()));
                    boundary_ids.push(id);
                    faces.push(f);
                }
                None => {
                    slots.push(Slot::Interior(interior_ids.len()));
                    interior_ids.push(id);
                }
            }
        }
        Ok(Self { dim, n: nn, lo, hi, h, slots, interior_ids, boundary_ids, faces })
    }

    /// Unit box `[0,1]^dim` with `n` nodes per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![n; dim], &vec![[0.0, 1.0]; dim])
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            n: self.n[..self.dim].to_vec(),
            extent: Some((0..self.dim).map(|a| [self.lo[a], self.hi[a]]).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.slots.len()
    }

    pub fn interior_ids(&self) -> &[usize] {
        &self.interior_ids
    }

    pub fn boundary_ids(&self) -> &[usize] {
        &self.boundary_ids
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_ids.len()
    }

    pub fn is_boundary(&self, id: usize) -> bool {
        matches!(self.slots[id], Slot::Boundary(_))
    }

    /// Position of node `id` in the boundary ordering, if it is a boundary node.
    pub fn boundary_index(&self, id: usize) -> Option<usize> {
        match self.slots[id] {
            Slot::Boundary(b) => Some(b),
            Slot::Interior(_) => None,
        }
    }

    pub fn interior_index(&self, id: usize) -> Option<usize> {
        match self.slots[id] {
            Slot::Interior(i) => Some(i),
            Slot::Boundary(_) => None,
        }
    }

    pub fn index(&self, id: usize) -> [usize; 3] {
        multi_index(&self.n, id)
    }

    pub fn node_id(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.n[0] * (idx[1] + self.n[1] * idx[2])
    }

    pub fn point(&self, id: usize) -> Point {
        let idx = self.index(id);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = if idx[a] == self.n[a] - 1 {
                self.hi[a]
            } else {
                self.lo[a] + idx[a] as f64 * self.h[a]
            };
        }
        p
    }

    /// Face owning the `b`-th boundary node.
    pub fn face(&self, b: usize) -> Face {
        self.faces[b]
    }

    /// Outward unit normal at the `b`-th boundary node.
    pub fn normal(&self, b: usize) -> Point {
        self.faces[b].normal()
    }

    /// Trapezoidal cell volumes; they sum to the box volume.
    pub fn volume_weights(&self) -> Vec<f64> {
        (0..self.node_count())
            .map(|id| {
                let idx = self.index(id);
                (0..self.dim).map(|a| self.trapezoid(a, idx[a])).product()
            })
            .collect()
    }

    /// Surface weights for boundary nodes; they sum to the box surface area.
    ///
    /// Along axes of higher priority than the owning face the end nodes belong
    /// to another face, so their half-cells are folded into the adjacent node.
    pub fn boundary_weights(&self) -> Vec<f64> {
        self.boundary_ids
            .iter()
            .zip(&self.faces)
            .map(|(&id, face)| {
                let idx = self.index(id);
                (0..self.dim)
                    .filter(|&a| a != face.axis)
                    .map(|a| {
                        if a < face.axis {
                            let mut w = self.h[a];
                            if idx[a] == 1 {
                                w += 0.5 * self.h[a];
                            }
                            if idx[a] == self.n[a] - 2 {
                                w += 0.5 * self.h[a];
                            }
                            w
                        } else {
                            self.trapezoid(a, idx[a])
                        }
                    })
                    .product()
            })
            .collect()
    }

    fn trapezoid(&self, axis: usize, i: usize) -> f64 {
        if i == 0 || i == self.n[axis] - 1 {
            0.5 * self.h[axis]
        } else {
            self.h[axis]
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| {
            let tol = 1e-12 * (self.hi[a] - self.lo[a]);
            x[a] >= self.lo[a] - tol && x[a] <= self.hi[a] + tol
        })
    }

    /// Node located at `x`, if `x` coincides with one.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let r = (x[a] - self.lo[a]) / self.h[a];
            let i = r.round();
            if (r - i).abs() > 1e-8 {
                return None;
            }
            idx[a] = (i.max(0.0) as usize).min(self.n[a] - 1);
        }
        Some(self.node_id(idx))
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::OutsideDomain { point: x[..self.dim].to_vec() });
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            let r = ((x[a] - self.lo[a]) / self.h[a]).clamp(0.0, (self.n[a] - 1) as f64);
            let i = (r.floor() as usize).min(self.n[a] - 2);
            base[a] = i;
            frac[a] = r - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..self.dim {
                if corner & (1 << a) != 0 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * values[self.node_id(idx)];
            }
        }
        Ok(acc)
    }
}

fn multi_index(n: &[usize; 3], id: usize) -> [usize; 3] {
    [id % n[0], (id / n[0]) % n[1], id / (n[0] * n[1])]
}

/// Build a grid on a box; `extent` defaults to the unit box.
pub fn build_grid(dim: usize, n: &[usize], extent: Option<&[[f64; 2]]>) -> Result<Grid> {
    match extent {
        Some(e) => Grid::new(dim, n, e),
        None => Grid::new(dim, n, &vec![[0.0, 1.0]; dim]),
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFinite { node }),
        None => Ok(()),
    }
}

/// Nodal values over every node of a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::FieldMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.node_count();
        Self { grid, values: vec![value; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let values = (0..grid.node_count()).map(|id| f(&grid.point(id)[..dim])).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn trace(&self) -> BoundaryField {
        let values = self.grid.boundary_ids().iter().map(|&id| self.values[id]).collect();
        BoundaryField::from_raw(self.grid.clone(), values)
    }

    pub fn at(&self, x: &[f64]) -> Result<f64> {
        self.grid.interpolate(&self.values, x)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Volume-weighted discrete L2 norm.
    pub fn l2_norm(&self) -> f64 {
        self.grid
            .volume_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_nodal_csv(&self.grid, (0..self.grid.node_count()).zip(self.values.iter().copied()), out)
    }

    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, input: R) -> Result<Self> {
        let values = read_nodal_csv(&grid, grid.node_count(), |id| Some(id), input)?;
        Self::new(grid, values)
    }
}

/// Nodal values over the boundary nodes, in the grid's boundary ordering.
#[derive(Debug, Clone)]
pub struct BoundaryField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl BoundaryField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.boundary_count() {
            return Err(Error::FieldMismatch(format!(
                "{} values for {} boundary nodes",
                values.len(),
                grid.boundary_count()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.boundary_count());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.boundary_count();
        Self { grid, values: vec![value; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let values = grid.boundary_ids().iter().map(|&id| f(&grid.point(id)[..dim])).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn is_constant(&self) -> Option<f64> {
        let first = *self.values.first()?;
        self.values.iter().all(|&v| v == first).then_some(first)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Surface-weighted sum, the discrete boundary integral.
    pub fn integral(&self) -> f64 {
        self.grid.boundary_weights().iter().zip(&self.values).map(|(w, v)| w * v).sum()
    }

    /// Surface-weighted pairing `<self, other>`.
    pub fn pairing(&self, other: &BoundaryField) -> f64 {
        self.grid
            .boundary_weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Surface-weighted discrete L2 norm.
    pub fn l2_norm(&self) -> f64 {
        self.pairing(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &BoundaryField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ids = self.grid.boundary_ids().iter().copied();
        write_nodal_csv(&self.grid, ids.zip(self.values.iter().copied()), out)
    }

    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, input: R) -> Result<Self> {
        let g = grid.clone();
        let values = read_nodal_csv(&grid, grid.boundary_count(), move |id| g.boundary_index(id), input)?;
        Self::new(grid, values)
    }
}

fn write_nodal_csv<W: Write>(
    grid: &Grid,
    rows: impl Iterator<Item = (usize, f64)>,
    mut out: W,
) -> Result<()> {
    let axes = ["x", "y", "z"];
    write!(out, "node_id")?;
    for a in axes.iter().take(grid.dim()) {
        write!(out, ",{a}")?;
    }
    writeln!(out, ",value")?;
    for (id, v) in rows {
        let p = grid.point(id);
        write!(out, "{id}")?;
        for c in p.iter().take(grid.dim()) {
            write!(out, ",{c:e}")?;
        }
        writeln!(out, ",{v:e}")?;
    }
    Ok(())
}

fn read_nodal_csv<R: BufRead>(
    grid: &Grid,
    len: usize,
    slot: impl Fn(usize) -> Option<usize>,
    input: R,
) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; len];
    let cols = grid.dim() + 2;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols {
            return Err(Error::Parse(format!("line {}: expected {cols} columns", lineno + 1)));
        }
        let id: usize = parts[0]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let v: f64 = parts[cols - 1]
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let k = (id < grid.node_count())
            .then(|| slot(id))
            .flatten()
            .ok_or_else(|| Error::Parse(format!("line {}: node {id} not expected", lineno + 1)))?;
        values[k] = v;
    }
    Ok(values)
}

/// A vector per node, stored component-wise.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<Grid>,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: Arc<Grid>, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() || components.iter().any(|c| c.len() != grid.node_count()) {
            return Err(Error::FieldMismatch("vector field shape does not match grid".into()));
        }
        Ok(Self { grid, components })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    /// Pointwise product with a scalar field, e.g. `a * grad(u)`.
    pub fn scaled(&self, a: &ScalarField) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| c.iter().zip(a.values()).map(|(v, s)| v * s).collect())
            .collect();
        Self { grid: self.grid.clone(), components }
    }
}

/// Second-order gradient: centred along axes where the node is interior,
/// one-sided three-point differences at the ends of an axis.
pub fn gradient(u: &ScalarField) -> VectorField {
    let grid = u.grid();
    let v = u.values();
    let dim = grid.dim();
    let mut components = vec![vec![0.0; grid.node_count()]; dim];
    for id in 0..grid.node_count() {
        let idx = grid.index(id);
        for a in 0..dim {
            let h = grid.spacing()[a];
            let n = grid.nodes_per_axis()[a];
            let at = |k: usize| {
                let mut j = idx;
                j[a] = k;
                v[grid.node_id(j)]
            };
            let i = idx[a];
            components[a][id] = if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * h)
            };
        }
    }
    VectorField { grid: grid.clone(), components }
}

/// `normal(b) . F(b)` at every boundary node.
pub fn normal_trace(field: &VectorField) -> BoundaryField {
    let grid = field.grid();
    let values = grid
        .boundary_ids()
        .iter()
        .enumerate()
        .map(|(b, &id)| {
            let face = grid.face(b);
            let sign = match face.side {
                Side::Low => -1.0,
                Side::High => 1.0,
            };
            sign * field.components[face.axis][id]
        })
        .collect();
    BoundaryField::from_raw(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit2(n: usize) -> Arc<Grid> {
        Arc::new(Grid::unit(2, n).unwrap())
    }

    #[test]
    fn smallest_grid_has_single_interior_node() {
        let g = Grid::unit(2, 3).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.boundary_count(), 8);
        assert_eq!(g.interior_ids(), &[4]);
    }

    #[test]
    fn cube_counts() {
        let g = Grid::unit(3, 5).unwrap();
        assert_eq!(g.node_count(), 125);
        assert_eq!(g.boundary_count(), 98);
        assert_eq!(g.interior_ids().len(), 27);
    }

    #[test]
    fn anisotropic_spacing() {
        let g = Grid::new(2, &[4, 6], &[[0.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!((g.spacing()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.spacing()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::unit(1, 5).is_err());
        assert!(Grid::unit(4, 5).is_err());
        assert!(Grid::unit(2, 2).is_err());
        assert!(Grid::new(2, &[5, 5], &[[0.0, 1.0], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn partition_and_normals() {
        for g in [Grid::unit(2, 6).unwrap(), Grid::new(3, &[4, 5, 3], &[[0.0, 1.0]; 3]).unwrap()] {
            let mut seen = vec![0u8; g.node_count()];
            for &id in g.interior_ids().iter().chain(g.boundary_ids()) {
                seen[id] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1));
            for b in 0..g.boundary_count() {
                let n = g.normal(b);
                let len: f64 = n.iter().map(|c| c * c).sum::<f64>().sqrt();
                assert_eq!(len, 1.0);
                // stepping along the normal leaves the box
                let p = g.point(g.boundary_ids()[b]);
                let q: Vec<f64> = (0..g.dim()).map(|a| p[a] + 1e-3 * n[a]).collect();
                assert!(!g.contains(&q));
            }
        }
    }

    #[test]
    fn corners_use_axis_priority() {
        let g = Grid::unit(2, 4).unwrap();
        let b = g.boundary_index(g.node_id([3, 0, 0])).unwrap();
        assert_eq!(g.face(b), Face { axis: 0, side: Side::High });
        let b = g.boundary_index(g.node_id([0, 3, 0])).unwrap();
        assert_eq!(g.face(b), Face { axis: 0, side: Side::Low });
    }

    #[test]
    fn weights_sum_to_measures() {
        let g = Grid::new(3, &[5, 4, 6], &[[0.0, 2.0], [0.0, 1.0], [-1.0, 0.5]]).unwrap();
        let vol: f64 = g.volume_weights().iter().sum();
        assert!((vol - 3.0).abs() < 1e-12);
        let area: f64 = g.boundary_weights().iter().sum();
        let expect = 2.0 * (2.0 * 1.0 + 2.0 * 1.5 + 1.0 * 1.5);
        assert!((area - expect).abs() < 1e-12);
        let g = Grid::unit(2, 3).unwrap();
        assert!((g.boundary_weights().iter().sum::<f64>() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = unit2(7);
        let c = ScalarField::constant(g.clone(), 3.5);
        let gc = gradient(&c);
        assert!(gc.component(0).iter().chain(gc.component(1)).all(|v| v.abs() < 1e-12));
        let u = ScalarField::from_fn(g, |x| x[0]).unwrap();
        let gu = gradient(&u);
        assert!(gu.component(0).iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(gu.component(1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn central_difference_exact_on_quadratics() {
        let g = unit2(5);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        let gu = gradient(&u);
        for id in 0..g.node_count() {
            let x = g.point(id)[0];
            // one-sided three-point stencils are exact on quadratics too
            assert!((gu.component(0)[id] - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_trace_of_unit_x_field() {
        let g = unit2(5);
        let f = VectorField::new(
            g.clone(),
            vec![vec![1.0; g.node_count()], vec![0.0; g.node_count()]],
        )
        .unwrap();
        let tr = normal_trace(&f);
        for (b, &id) in g.boundary_ids().iter().enumerate() {
            let p = g.point(id);
            let v = tr.values()[b];
            if p[0] == 1.0 {
                assert_eq!(v, 1.0);
            } else if p[0] == 0.0 {
                assert_eq!(v, -1.0);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = unit2(5);
        let u = ScalarField::from_fn(g.clone(), |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]).unwrap();
        for p in [[0.1, 0.37], [0.125, 0.125], [1.0, 0.99], [0.0, 0.0]] {
            let exact = 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
            assert!((u.at(&p).unwrap() - exact).abs() < 1e-13);
        }
        assert!(u.at(&[1.2, 0.5]).is_err());
    }

    #[test]
    fn locate_nodes() {
        let g = Grid::unit(3, 5).unwrap();
        let id = g.node_id([1, 2, 3]);
        assert_eq!(g.locate(&g.point(id)), Some(id));
        assert_eq!(g.locate(&[0.3, 0.5, 0.5]), None);
    }

    #[test]
    fn csv_roundtrip() {
        let g = unit2(4);
        let u = ScalarField::from_fn(g.clone(), |x| x[0] - 3.0 * x[1]).unwrap();
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("node_id,x,y,value\n"));
        let back = ScalarField::read_csv(g.clone(), buf.as_slice()).unwrap();
        assert_eq!(back.values(), u.values());

        let t = u.trace();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = BoundaryField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back.values(), t.values());
    }

    #[test]
    fn fields_reject_nonfinite() {
        let g = unit2(3);
        let mut v = vec![0.0; 9];
        v[4] = f64::NAN;
        assert!(matches!(ScalarField::new(g.clone(), v), Err(Error::NonFinite { node: 4 })));
        assert!(BoundaryField::new(g, vec![0.0; 3]).is_err());
    }
}
