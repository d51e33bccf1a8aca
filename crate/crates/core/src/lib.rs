//! Spectral laboratory for the Wick-ordered cubic nonlinear wave equation
//! `d_t^2 u + (1 - Laplacian) u + :u^3: = 0` on the torus.

pub mod convergence;
pub mod duhamel;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod hermite;
pub mod inflation;
pub mod par;
pub mod quadrature;
pub mod seeding;
pub mod stats;
pub mod stochastic;
pub mod trees;

pub use error::{LabError, Result};
pub use field::{FieldPair, Kernel, Lattice, Mode, SpectralField};
