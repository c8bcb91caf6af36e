//! Doubly periodic Chern-Simons-Higgs vortex laboratory on a flat torus.

pub mod ansatz;
pub mod cli;
pub mod config;
pub mod error;
pub mod fieldfile;
pub mod functionals;
pub mod green;
pub mod higgs;
pub mod krylov;
pub mod par;
pub mod quad;
pub mod reduction;
pub mod solver;
pub mod special;
pub mod torus;

pub use error::{Error, Result};
