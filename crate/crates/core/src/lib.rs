//! Shuffled linear regression by algebraic initialization and alternating
//! minimization.
//!
//! Given `A` (m x n) and observations `y` that equal `A xi*` up to an unknown
//! row permutation and noise, [`estimator::ai_em`] recovers `xi*` in three
//! stages:
//!
//! 1. [`powersum::build_system`] forms the `n` permutation-invariant equations
//!    `p_k(A x) = p_k(y)`, `k = 1..n`, where `p_k` is the k-th power sum.
//! 2. [`polysolve::solve_power_sum`] finds all isolated complex roots by
//!    total-degree homotopy continuation.
//! 3. The root minimizing the sorted-matching residual seeds
//!    [`estimator::em_refine`], which alternates optimal matching and least
//!    squares.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod linalg;
pub mod polysolve;
pub mod powersum;

pub use error::{Error, Result};
pub use estimator::{ai_em, em_refine, AiEmConfig, EmConfig, EstimationResult};
pub use polysolve::{solve_power_sum, Root, SolveReport, TrackConfig};
pub use powersum::{build_system, PowerSumSystem, RegressionInstance};
