//! Linear algebra kernels: sparse storage, banded LU, Arnoldi and dense eigen-solvers.

pub mod arnoldi;
pub mod banded;
pub mod dense;
pub mod sparse;

pub use banded::BandedLu;
pub use sparse::CsrMatrix;
