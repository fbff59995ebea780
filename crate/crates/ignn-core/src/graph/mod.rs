//! Sparse graphs, normalization, sparsification and datasets.

pub mod dataset;
pub mod sparse;

pub use dataset::{load_dataset, load_dataset_dir, synth_blocks, synth_chain, Dataset};
pub use sparse::{
    normalize_adjacency, row_normalize, sparsify, spectral_norm_estimate, SparseGraph,
};
