//! Reconstruction of the potential (up to one additive constant) and of
//! parametrised diffusion coefficients from laboratory measurements.

pub mod boundary;
pub mod fit;
pub mod interior;
pub mod pchip;

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boundary::{
    reconstruct_phi_boundary, reconstruct_phi_gradients_boundary, recover_normal_x_gradient, BoundaryGradient,
    NormalGradient, NormalVariant, Reference,
};
pub use fit::{fit_diffusion, DiffusionFamily, DiffusionFitProblem, FitDatum, FitOptions, FitReport};
pub use interior::{reconstruct_phi_interior, InteriorReconstruction};
pub use pchip::Pchip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BoundaryVoltage,
    InteriorTemperature,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::BoundaryVoltage => "boundary-voltage",
            Provenance::InteriorTemperature => "interior-temperature",
        }
    }
}

/// One reconstructed value `phi_hat(p, t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub p: Vec<f64>,
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub provenance: Provenance,
}

impl Entry {
    fn key(&self) -> Vec<u64> {
        self.p.iter().chain(std::iter::once(&self.t)).chain(&self.x).map(|v| v.to_bits()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub max_deviation: f64,
}

/// Reconstructed samples normalised so that `phi_hat(z0, x0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionTable {
    pub species: usize,
    pub dim: usize,
    pub z0: Vec<f64>,
    pub x0: Vec<f64>,
    pub entries: Vec<Entry>,
    /// Samples that could not be produced, with the reason.
    pub failures: Vec<String>,
    /// Mean of `phi_hat - phi` when ground truth was supplied.
    pub offset: Option<f64>,
    #[serde(skip)]
    keys: HashSet<Vec<u64>>,
}

impl ReconstructionTable {
    pub fn new(species: usize, dim: usize, z0: Vec<f64>, x0: Vec<f64>) -> Self {
        Self { species, dim, z0, x0, entries: vec![], failures: vec![], offset: None, keys: HashSet::new() }
    }

    pub fn insert(&mut self, entry: Entry) -> Result<()> {
        if entry.p.len() != self.species || entry.x.len() != self.dim {
            return Err(Error::InvalidArgument("entry shape does not match the table".into()));
        }
        if !entry.value.is_finite() || !entry.t.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite entry {entry:?}")));
        }
        if !self.keys.insert(entry.key()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate sample p={:?}, t={}, x={:?}",
                entry.p, entry.t, entry.x
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends another table with the same normalisation.
    pub fn merge(&mut self, other: ReconstructionTable) -> Result<()> {
        if other.z0 != self.z0 || other.x0 != self.x0 {
            return Err(Error::InvalidArgument("tables use different reference points".into()));
        }
        for e in other.entries {
            self.insert(e)?;
        }
        self.failures.extend(other.failures);
        Ok(())
    }

    /// Looks up an entry by exact key.
    pub fn get(&self, p: &[f64], t: f64, x: &[f64]) -> Option<f64> {
        self.entries.iter().find(|e| e.p == p && e.t == t && e.x == x).map(|e| e.value)
    }

    /// Statistics of `phi_hat - truth` over all entries; records the mean.
    pub fn offsets(&mut self, truth: impl Fn(&[f64], f64, &[f64]) -> f64) -> OffsetStats {
        let d: Vec<f64> = self.entries.iter().map(|e| e.value - truth(&e.p, e.t, &e.x)).collect();
        let n = d.len().max(1) as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let max_deviation = d.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        self.offset = Some(mean);
        OffsetStats { count: d.len(), mean, std, max_deviation }
    }

    /// CSV with header `p1..pM,s_or_t,x,y[,z],value,provenance`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.species).map(|i| format!("p{i}")).collect();
        header.push("s_or_t".into());
        header.extend(["x", "y", "z"].iter().take(self.dim).map(|s| s.to_string()));
        header.push("value".into());
        header.push("provenance".into());
        writeln!(out, "{}", header.join(","))?;
        for e in &self.entries {
            let mut row: Vec<String> = e.p.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", e.t));
            row.extend(e.x.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", e.value));
            row.push(e.provenance.as_str().into());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: f64, value: f64) -> Entry {
        Entry { p: vec![1.0], t, x: vec![0.0, 0.5], value, provenance: Provenance::BoundaryVoltage }
    }

    #[test]
    fn duplicates_and_non_finite_rejected() {
        let mut tab = ReconstructionTable::new(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]);
        tab.insert(entry(0.5, 1.0)).unwrap();
        assert!(tab.insert(entry(0.5, 2.0)).is_err());
        assert!(tab.insert(entry(0.7, f64::NAN)).is_err());
        assert_eq!(tab.len(), 1);
        assert_eq!(tab.get(&[1.0], 0.5, &[0.0, 0.5]), Some(1.0));
    }

    #[test]
    fn offsets_of_shifted_truth() {
        let mut tab = ReconstructionTable::new(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]);
        for k in 0..5 {
            let t = k as f64 * 0.3;
            tab.insert(entry(t, 2.0 * t - 4.0)).unwrap();
        }
        let st = tab.offsets(|_, t, _| 2.0 * t);
        assert!((st.mean + 4.0).abs() < 1e-14);
        assert!(st.std < 1e-14);
        assert_eq!(tab.offset, Some(st.mean));
    }

    #[test]
    fn csv_layout() {
        let mut tab = ReconstructionTable::new(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]);
        tab.insert(entry(0.5, 1.0)).unwrap();
        let mut buf = Vec::new();
        tab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "p1,s_or_t,x,y,value,provenance");
        assert_eq!(lines.next().unwrap(), "1e0,5e-1,0e0,5e-1,1e0,boundary-voltage");
    }

    #[test]
    fn merge_requires_same_reference() {
        let mut a = ReconstructionTable::new(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]);
        let b = ReconstructionTable::new(1, 2, vec![2.0, 0.0], vec![0.0, 0.0]);
        assert!(a.merge(b).is_err());
    }
}
