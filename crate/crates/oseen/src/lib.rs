//! Linearized Lamb-Oseen vortex operators in Gaussian-weighted spaces.
//!
//! The crate discretizes the azimuthal-mode reductions of the linearized
//! vorticity equation around the Oseen vortex, measures resolvent, spectral
//! and semigroup scaling laws in the circulation Reynolds number, and
//! integrates the nonlinear perturbation system in rescaled variables.

pub mod error;
pub mod fit;
pub mod linalg;
pub mod spectral;
pub mod grid;
pub mod profiles;
pub mod radial;
pub mod semigroup;
pub mod field;
pub mod corpus;
pub mod biot_savart;
pub mod nonlinear;

pub use error::{OseenError, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
