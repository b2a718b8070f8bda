//! State-dependent coefficients `phi`, `D_i`, `g_i`, `eps` and the inverse
//! temperature map.

pub mod expr;
pub mod inverse_map;
pub mod laws;
pub mod validate;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Grid, ScalarField};

pub use expr::Expr;
pub use inverse_map::{h_partial_s, invert_temperature, DEFAULT_INVERSION_TOL};
pub use laws::{fn_law, Bump, Law, LawSpec, SpatialPoly, StateFn};
pub use validate::{validate_ellipticity, EllipticityReport, SampleSpec};

/// The potential `phi(p, s, x)` with its declared bounds.
#[derive(Debug, Clone)]
pub struct PotentialModel {
    pub law: Law,
    /// Declared lower bound on `d phi / d s`.
    pub ds_lower: f64,
    /// Declared bound on all first partials.
    pub grad_bound: f64,
}

impl PotentialModel {
    pub fn new(law: Law, ds_lower: f64, grad_bound: f64) -> Self {
        Self { law, ds_lower, grad_bound }
    }

    pub fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.law.eval(p, s, x)
    }

    pub fn d_s(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        laws::partial_s(&*self.law, p, s, x)
    }

    pub fn d_p(&self, i: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
        laws::partial_p(&*self.law, i, p, s, x)
    }

    pub fn d_x(&self, k: usize, p: &[f64], s: f64, x: &[f64]) -> f64 {
        laws::partial_x(&*self.law, k, p, s, x)
    }

    pub fn h(&self, p: &[f64], s: f64, x: &[f64], tol: f64) -> Result<f64> {
        invert_temperature(self, p, s, x, tol)
    }

    /// `phi + r`.
    pub fn shifted(&self, r: f64) -> Self {
        let law: Law = Arc::new(laws::Shifted { inner: self.law.clone(), r });
        Self { law, ..self.clone() }
    }

    /// Lipschitz constant of `h` in `(s, p, x)` implied by the declared bounds.
    pub fn h_lipschitz(&self) -> f64 {
        self.grad_bound.max(1.0) / self.ds_lower
    }
}

/// Diffusion coefficient `D_i(p, s, x)` with declared bounds.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub law: Law,
    pub lower: f64,
    pub upper: f64,
    /// Lipschitz constant estimate in `(p, s)`.
    pub lipschitz: f64,
}

impl DiffusionModel {
    pub fn new(law: Law, lower: f64, upper: f64, lipschitz: f64) -> Self {
        Self { law, lower, upper, lipschitz }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(LawSpec::Constant { value }.build().unwrap(), value, value, 0.0)
    }

    pub fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.law.eval(p, s, x)
    }
}

/// Source `g_i(p, s, x)`; `None` is the zero source.
#[derive(Debug, Clone, Default)]
pub struct SourceModel {
    pub law: Option<Law>,
    /// Growth constants with `|g| <= c1 + c2 |p|`.
    pub c1: f64,
    pub c2: f64,
}

impl SourceModel {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.law.is_none()
    }

    pub fn eval(&self, p: &[f64], s: f64, x: &[f64]) -> f64 {
        self.law.as_ref().map_or(0.0, |g| g.eval(p, s, x))
    }
}

/// Known permittivity `eps(x)`.
#[derive(Debug, Clone)]
pub struct PermittivityField {
    pub law: Law,
    pub lower: f64,
}

impl PermittivityField {
    pub fn constant(value: f64) -> Self {
        Self { law: LawSpec::Constant { value }.build().unwrap(), lower: value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.law.eval(&[], 0.0, x)
    }

    pub fn field(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        ScalarField::from_fn(grid.clone(), |x| self.eval(x))
    }
}

/// Everything that defines one forward model.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub q: Vec<f64>,
    pub potential: PotentialModel,
    pub diffusion: Vec<DiffusionModel>,
    pub sources: Vec<SourceModel>,
    pub permittivity: PermittivityField,
    /// Ellipticity constant shared by `eps`, `D_i` and `d phi / d s`.
    pub lambda: f64,
}

impl ModelBundle {
    pub fn new(
        q: Vec<f64>,
        potential: PotentialModel,
        diffusion: Vec<DiffusionModel>,
        sources: Vec<SourceModel>,
        permittivity: PermittivityField,
        lambda: f64,
    ) -> Result<Self> {
        let m = q.len();
        if m == 0 {
            return Err(Error::InvalidArgument("at least one species is required".into()));
        }
        if diffusion.len() != m || sources.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{m} charges but {} diffusion and {} source laws",
                diffusion.len(),
                sources.len()
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("ellipticity constant {lambda} must be positive")));
        }
        Ok(Self { q, potential, diffusion, sources, permittivity, lambda })
    }

    /// Source-free bundle.
    pub fn source_free(
        q: Vec<f64>,
        potential: PotentialModel,
        diffusion: Vec<DiffusionModel>,
        permittivity: PermittivityField,
        lambda: f64,
    ) -> Result<Self> {
        let sources = vec![SourceModel::zero(); q.len()];
        Self::new(q, potential, diffusion, sources, permittivity, lambda)
    }

    pub fn species(&self) -> usize {
        self.q.len()
    }

    pub fn is_source_free(&self) -> bool {
        self.sources.iter().all(SourceModel::is_zero)
    }

    pub fn with_potential(&self, potential: PotentialModel) -> Self {
        Self { potential, ..self.clone() }
    }

    pub fn with_diffusion(&self, diffusion: Vec<DiffusionModel>) -> Result<Self> {
        Self::new(
            self.q.clone(),
            self.potential.clone(),
            diffusion,
            self.sources.clone(),
            self.permittivity.clone(),
            self.lambda,
        )
    }

    pub fn charge(&self, p: &[f64]) -> f64 {
        self.q.iter().zip(p).map(|(q, p)| q * p).sum()
    }
}

/// Gathers the concentration vector at one node.
pub(crate) fn state_at(c: &[ScalarField], id: usize) -> Vec<f64> {
    c.iter().map(|ci| ci.values()[id]).collect()
}

/// `T = h(c, sigma, x)` nodewise.
pub fn temperature_from_sigma(
    phi: &PotentialModel,
    c: &[ScalarField],
    sigma: &ScalarField,
    tol: f64,
) -> Result<ScalarField> {
    let grid = sigma.grid().clone();
    let dim = grid.dim();
    let values = (0..grid.node_count())
        .into_par_iter()
        .map(|id| {
            let p = state_at(c, id);
            phi.h(&p, sigma.values()[id], &grid.point(id)[..dim], tol)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScalarField::new(grid, values)
}

/// `sigma = phi(c, T, x)` nodewise.
pub fn sigma_from_temperature(phi: &PotentialModel, c: &[ScalarField], t: &ScalarField) -> Result<ScalarField> {
    let grid = t.grid().clone();
    let dim = grid.dim();
    let values = (0..grid.node_count())
        .map(|id| phi.eval(&state_at(c, id), t.values()[id], &grid.point(id)[..dim]))
        .collect();
    ScalarField::new(grid, values)
}

/// `D_i(c, T, x)` nodewise.
pub fn diffusion_field(d: &DiffusionModel, c: &[ScalarField], t: &ScalarField) -> Result<ScalarField> {
    let grid = t.grid().clone();
    let dim = grid.dim();
    let values = (0..grid.node_count())
        .map(|id| d.eval(&state_at(c, id), t.values()[id], &grid.point(id)[..dim]))
        .collect();
    ScalarField::new(grid, values)
}

/// Declarative form of a [`ModelBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub q: Vec<f64>,
    pub lambda: f64,
    pub potential: PotentialSpec,
    pub diffusion: Vec<DiffusionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceSpec>,
    pub permittivity: PermittivitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub law: LawSpec,
    pub ds_lower: f64,
    #[serde(default = "default_bound")]
    pub grad_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub law: LawSpec,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub law: LawSpec,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermittivitySpec {
    pub law: LawSpec,
    pub lower: f64,
}

fn default_bound() -> f64 {
    1.0
}

impl BundleSpec {
    pub fn build(&self) -> Result<ModelBundle> {
        let potential = PotentialModel::new(self.potential.law.build()?, self.potential.ds_lower, self.potential.grad_bound);
        let diffusion = self
            .diffusion
            .iter()
            .map(|d| Ok(DiffusionModel::new(d.law.build()?, d.lower, d.upper, d.lipschitz)))
            .collect::<Result<Vec<_>>>()?;
        let sources = if self.sources.is_empty() {
            vec![SourceModel::zero(); self.q.len()]
        } else {
            self.sources
                .iter()
                .map(|g| Ok(SourceModel { law: Some(g.law.build()?), c1: g.c1, c2: g.c2 }))
                .collect::<Result<Vec<_>>>()?
        };
        let permittivity = PermittivityField { law: self.permittivity.law.build()?, lower: self.permittivity.lower };
        ModelBundle::new(self.q.clone(), potential, diffusion, sources, permittivity, self.lambda)
    }
}
