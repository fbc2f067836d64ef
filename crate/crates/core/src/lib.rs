//! Numerical toolkit for metastability in the dissipative quantum Rabi model.
pub mod cache;
pub mod cumulant;
pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod liouville;
pub mod meanfield;
pub mod metastable;
pub mod ode;
pub mod phasespace;
pub mod scaling;
pub mod trajectory;
pub use error::{Error, Result};
