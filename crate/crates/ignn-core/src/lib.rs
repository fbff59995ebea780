//! Implicit graph neural networks with interchangeable fixed-point solvers.
//!
//! The equilibrium layer `Z* = sigma(A Z* W + b(X))` is solved by Picard
//! iteration, classic Anderson acceleration, or a small learned solver that
//! predicts the mixing coefficients with a graph network over a sparsified
//! support. Training covers the unsupervised solver objective, implicit
//! (adjoint) model training, and the alternating strategy that interleaves
//! the two.

pub mod error;
pub mod graph;
pub mod model;
pub mod neural;
pub mod solve;
pub mod tensor;
pub mod train;

pub use error::{IgnnError, Result};
pub use graph::{Dataset, SparseGraph};
pub use model::{Activation, FixedPointProblem, IgnnModel};
pub use neural::NeuralSolver;
pub use solve::{SolveTrace, SolverKindName};
pub use tensor::DenseMatrix;
