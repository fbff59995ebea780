//! Shared fixtures for the solver benchmarks.

use ignn_core::graph::dataset::synth_blocks;
use ignn_core::graph::{normalize_adjacency, Dataset, SparseGraph};
use ignn_core::model::{Activation, IgnnModel};

/// Mid-size benchmark problem: planted-community graph plus a random
/// projected model.
pub fn bench_problem(seed: u64) -> (IgnnModel, SparseGraph, Dataset) {
    let dataset = synth_blocks(256, 16, 4, 6.0, 0.5, 64, 32, seed).expect("bench dataset");
    let a_hat = normalize_adjacency(&dataset.graph).expect("normalize");
    let model =
        IgnnModel::random(16, 32, 4, 0.95, Activation::Relu, seed).expect("bench model");
    (model, a_hat, dataset)
}
