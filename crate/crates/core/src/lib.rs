//! Forward and inverse solvers for a static quasilinear electrolyser model:
//! species concentrations `c_i` and temperature `T` coupled through a
//! state-dependent potential `phi(c, T, x)` and diffusion coefficients
//! `D_i(c, T, x)` on a box domain.

pub mod coefficients;
pub mod elliptic;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod measure;
pub mod mesh;

pub use error::{Error, Result};
