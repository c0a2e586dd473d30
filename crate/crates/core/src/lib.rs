//! Spectral analysis of the periodic Schrödinger operator `-y'' + q(x) y` with a
//! complex-valued periodic potential.

pub mod error;
pub mod expansion;
pub mod floquet;
pub mod fundsol;
pub mod galerkin;
pub mod hill;
pub mod potential;
pub mod quad;
pub mod singular;

pub use error::{Error, Result};
pub use potential::PeriodicPotential;
