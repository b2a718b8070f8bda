//! Sampled checks of the ellipticity hypotheses `eps >= lambda`,
//! `D_i >= lambda`, `d phi / d s >= lambda`.
//!
//! Sampling covers only the declared ranges; the global condition cannot be
//! certified this way.

use serde::{Deserialize, Serialize};

use super::ModelBundle;
use crate::error::{Error, Result};

pub const DEFAULT_POINTS_PER_AXIS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub p_ranges: Vec<[f64; 2]>,
    pub s_range: [f64; 2],
    pub x_ranges: Vec<[f64; 2]>,
    #[serde(default = "default_points")]
    pub points_per_axis: usize,
}

fn default_points() -> usize {
    DEFAULT_POINTS_PER_AXIS
}

impl SampleSpec {
    pub fn new(p_ranges: Vec<[f64; 2]>, s_range: [f64; 2], x_ranges: Vec<[f64; 2]>) -> Self {
        Self { p_ranges, s_range, x_ranges, points_per_axis: DEFAULT_POINTS_PER_AXIS }
    }

    fn axes(&self) -> Vec<Vec<f64>> {
        let k = self.points_per_axis.max(1);
        let line = |[a, b]: [f64; 2]| -> Vec<f64> {
            if k == 1 {
                vec![0.5 * (a + b)]
            } else {
                (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
            }
        };
        let mut axes: Vec<Vec<f64>> = self.p_ranges.iter().map(|&r| line(r)).collect();
        axes.push(line(self.s_range));
        axes.extend(self.x_ranges.iter().map(|&r| line(r)));
        axes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub lambda: f64,
    pub samples: usize,
    pub min_eps: f64,
    pub min_diffusion: Vec<f64>,
    pub max_diffusion: Vec<f64>,
    pub min_ds_phi: f64,
    pub note: String,
}

/// Evaluates every coefficient on the tensor sample grid; returns the first
/// violation as an error.
pub fn validate_ellipticity(bundle: &ModelBundle, spec: &SampleSpec) -> Result<EllipticityReport> {
    let m = bundle.species();
    if spec.p_ranges.len() != m {
        return Err(Error::InvalidArgument(format!("{} concentration ranges for {m} species", spec.p_ranges.len())));
    }
    let axes = spec.axes();
    let lambda = bundle.lambda;
    let mut report = EllipticityReport {
        lambda,
        samples: 0,
        min_eps: f64::INFINITY,
        min_diffusion: vec![f64::INFINITY; m],
        max_diffusion: vec![f64::NEG_INFINITY; m],
        min_ds_phi: f64::INFINITY,
        note: "checked on sampled ranges only".into(),
    };
    let mut idx = vec![0usize; axes.len()];
    loop {
        let coords: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        let (p, rest) = coords.split_at(m);
        let (s, x) = (rest[0], &rest[1..]);
        let fail = |coefficient: String, value: f64, bound: f64| Error::Ellipticity {
            coefficient,
            value,
            bound,
            p: p.to_vec(),
            s,
            x: x.to_vec(),
        };

        let eps = bundle.permittivity.eval(x);
        report.min_eps = report.min_eps.min(eps);
        if !(eps >= lambda) {
            return Err(fail("eps".into(), eps, lambda));
        }
        let ds = bundle.potential.d_s(p, s, x);
        report.min_ds_phi = report.min_ds_phi.min(ds);
        if !(ds >= lambda) {
            return Err(fail("d_s phi".into(), ds, lambda));
        }
        for (i, d) in bundle.diffusion.iter().enumerate() {
            let v = d.eval(p, s, x);
            report.min_diffusion[i] = report.min_diffusion[i].min(v);
            report.max_diffusion[i] = report.max_diffusion[i].max(v);
            if !(v >= lambda) {
                return Err(fail(format!("D_{}", i + 1), v, lambda));
            }
            if v > d.upper * (1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "D_{} = {v} exceeds declared upper bound {} at p={p:?}, s={s}, x={x:?}",
                    i + 1,
                    d.upper
                )));
            }
        }
        let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, g) in bundle.sources.iter().enumerate() {
            if g.law.is_some() {
                let v = g.eval(p, s, x).abs();
                if v > g.c1 + g.c2 * pnorm + 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "|g_{}| = {v} exceeds growth bound {} + {}|p| at p={p:?}, s={s}, x={x:?}",
                        i + 1,
                        g.c1,
                        g.c2
                    )));
                }
            }
        }
        report.samples += 1;

        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(report);
            }
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
