//! Low-rank canonical polyadic approximation of dense real tensors.
//!
//! The approximation problem is posed over the product of Segre manifolds
//! (rank-one tensors) and solved with a Riemannian Gauss-Newton trust-region
//! method. Iterates are moved by a product ST-HOSVD retraction, and whenever
//! the Gauss-Newton Hessian becomes ill-conditioned the solver performs a
//! *hot restart*: it samples nearby decompositions until a well-conditioned
//! one is found.
//!
//! All numerical code is generic over [`Scalar`] (implemented for `f64` and
//! `f32`). The aliases at the crate root fix the scalar to `f64`, which is
//! what the CLI and the benchmark harness use.
//!
//! Modes and tensor indices are zero-based throughout. Tensors are stored with
//! the last index varying fastest, so the vectorization of `a ⊗ b ⊗ c` is the
//! Kronecker product `a ⊗ₖ b ⊗ₖ c`.

// `!(x > y)` is used on purpose so that NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod conditioning;
pub mod cpd;
pub mod error;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod segre;
pub mod solver;
pub mod tensor;
pub mod trust_region;

pub use conditioning::{cholesky_gate, condition_number, ConditionMethod, ConditionReport, GateVerdict};
pub use cpd::{CpdPoint, GnSystem};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use segre::RankOnePoint;
pub use solver::{solve, RunReport, SolverConfig, Status, Variant};
pub use tensor::{DenseTensor, TuckerDecomposition};

/// Dense tensor over `f64`.
pub type Tensor = tensor::DenseTensor<f64>;
/// Orthogonal Tucker decomposition over `f64`.
pub type Tucker = tensor::TuckerDecomposition<f64>;
/// Rank-one point over `f64`.
pub type RankOne = segre::RankOnePoint<f64>;
/// Canonical polyadic decomposition over `f64`.
pub type Cpd = cpd::CpdPoint<f64>;
/// Solver report over `f64`.
pub type Report = solver::RunReport<f64>;
/// Dense matrix over `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense vector over `f64`.
pub type Vector = nalgebra::DVector<f64>;

/// Single-precision variants, mostly useful for memory-bound experiments.
pub mod f32 {
    pub type Tensor = crate::tensor::DenseTensor<f32>;
    pub type RankOne = crate::segre::RankOnePoint<f32>;
    pub type Cpd = crate::cpd::CpdPoint<f32>;
}
