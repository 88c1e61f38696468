//! Discovery of governing PDEs from gridded data with symbolic networks whose
//! candidate libraries are constrained by Galilean or Lorentz invariance.

pub mod error;
pub mod grid;
pub mod invariance;
pub mod stencil;
pub mod rollout;
pub mod solvers;
pub mod symnet;
pub mod train;

pub use error::{Error, Result};
