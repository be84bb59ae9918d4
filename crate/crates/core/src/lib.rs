//! Exact Gaussian-process regression on Cartesian-product grids with missing
//! cells.
//!
//! The covariance of a product kernel on a full grid is a Kronecker product,
//! which gives fast matrix-vector products and a cheap eigendecomposition.
//! Missing cells break that structure; [`solvers`] restores it with three
//! formulations (penalize, ignore or fill the gaps) solved by preconditioned
//! conjugate gradients, and [`model`] builds likelihoods and posterior
//! predictions on top.

pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod kron;
pub mod model;
pub mod solvers;
mod symeig;

pub use error::{Error, Result};
pub use grid::{GappyDataset, GridSpec, IndexSets};
pub use kernels::{Hyperparams, Kernel1D, ProductKernel};
pub use kron::{KroneckerEigen, KroneckerOperator, RectKroneckerOperator};
pub use model::{GpModel, TrainConfig, VarianceMode};
pub use solvers::{CgConfig, GapSystem, Method, SolveReport, SolverConfig};
