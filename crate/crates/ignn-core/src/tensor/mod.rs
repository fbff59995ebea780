//! Dense matrices and the reverse-mode tape.

pub mod matrix;
pub mod tape;

pub use matrix::{
    inverted_dropout_mask, softmax_slice, spectral_norm_dense, DenseMatrix,
};
pub use tape::{grad_check, Gradients, Tape, VarId};
