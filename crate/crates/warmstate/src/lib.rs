//! Warm-started variational ground-state preparation along a deformed
//! Hamiltonian path H(x) = H0 + x·H1.
//!
//! The crate simulates parameterized Pauli-rotation circuits on dense
//! statevectors, trains them step by step along a schedule of deformation
//! values (plain warm-started VQE or a parameter-encoded Meta-VQE variant),
//! and evaluates the analytic step/radius budgets and loss-variance lower
//! bounds that justify the warm-start strategy. A Gaussian surrogate for
//! grouped finite-shot measurement noise is included so training can be run
//! at a fixed shot budget without sampling individual outcomes.

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod pauli;
pub mod statevector;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
