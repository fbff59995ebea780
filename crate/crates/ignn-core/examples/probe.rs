use ignn_core::graph::dataset::synth_citeseer_like;
use ignn_core::graph::normalize_adjacency;
use ignn_core::model::{Activation, FixedPointProblem, IgnnModel};
use ignn_core::neural::{NeuralSolver, NeuralSolverConfig};
use ignn_core::solve::anderson_solve;
use ignn_core::tensor::matrix::DenseMatrix;
use ignn_core::train::{compute_z_star, train_solver, SolverLossWeights, TrainLog};
use std::time::Instant;

fn main() {
    let mut ratios = Vec::new();
    for seed in 1u64..=5 {
        let ds = synth_citeseer_like(seed).unwrap();
        let a_hat = normalize_adjacency(&ds.graph).unwrap();
        let hidden = 32;
        let model = IgnnModel::random(ds.feature_dim(), hidden, ds.num_classes, 0.95, Activation::Relu, seed).unwrap();
        let cache = compute_z_star(&model, &a_hat, &ds.features, 1e-6, 20000).unwrap();
        let problem = FixedPointProblem::new(&model, &a_hat, &ds.features).unwrap();
        let z0 = DenseMatrix::zeros(ds.n(), hidden);
        let at = anderson_solve(&problem, &z0, 5, 1.0, 1e-3, 500).unwrap();
        let a_evals = at.first_reaching(1e-3).unwrap().1;

        let t = Instant::now();
        let cfg = NeuralSolverConfig { k_unroll: 10, init_hidden: Some(16), ..NeuralSolverConfig::default() };
        let mut solver = NeuralSolver::new(ds.feature_dim(), hidden, &a_hat, &cfg, seed + 100).unwrap();
        let mut log = TrainLog::in_memory();
        let report = train_solver(&model, &a_hat, &ds.features, &mut solver, &cache, &SolverLossWeights::default(), 250, 0.03, "solver", &mut log).unwrap();
        let last = report.loss_history.last().unwrap();
        let nt = solver.solve_inference(&problem, 80, 1e-3).unwrap();
        let n_evals = nt.first_reaching(1e-3).unwrap().1;
        // Criterion 6 check: residual at 2K vs K.
        let full = solver.solve_full_horizon(&problem, 20).unwrap();
        let rk = full.residual_at(10).unwrap();
        let r2k = full.residual_at(20).unwrap();
        println!("seed {seed}: anderson {a_evals} neural {n_evals} ratio {:.2} | k0 {:.2e} init loss {:.1} | r(K) {:.2e} r(2K) {:.2e} ({:?})",
            a_evals as f64 / n_evals as f64, nt.iterates[0].residual, last.init, rk, r2k, t.elapsed());
        ratios.push(a_evals as f64 / n_evals as f64);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("median ratio {:.2}", ratios[2]);
}
