//! Schrodinger dynamics on metric (quantum) graphs with white-noise and
//! scaled random dispersion: graph/mesh machinery, self-adjoint vertex
//! couplings, spectral Laplacians, exact stochastic propagators, splitting and
//! Picard solvers, and a Monte-Carlo experiment harness.

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod operator;
pub mod propagation;

pub use error::{QgError, Result};
