//! Training loops: unsupervised solver training on a frozen model, implicit
//! (adjoint) model training with a frozen solver, and the alternating
//! strategy that interleaves the two.

pub mod adam;
pub mod config;
pub mod log;
pub mod loss;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IgnnError, Result};
use crate::graph::dataset::Dataset;
use crate::graph::sparse::SparseGraph;
use crate::model::{accuracy, implicit_backward, readout_loss, FixedPointProblem, IgnnModel};
use crate::neural::{solve_recorded, NeuralSolver, TapedSolverParams};
use crate::solve::{anderson_solve, AndersonSolver, EquilibriumSolver};
use crate::tensor::matrix::{inverted_dropout_mask, DenseMatrix};
use crate::tensor::tape::Tape;

pub use adam::{clip_global_norm, Adam};
pub use config::TrainConfig;
pub use log::{parse_log, LogRecord, TrainLog};
pub use loss::{solver_loss, Lambda1Schedule, LossComponents, SolverLoss, SolverLossWeights};

/// Gradient clipping threshold for solver training; unrolled products can
/// spike early in training.
pub const SOLVER_GRAD_CLIP: f64 = 5.0;

/// Tolerance of the ground-truth fixed points used as solver-training
/// targets.
pub const Z_STAR_TOL: f64 = 1e-6;

/// A high-precision fixed point keyed to the exact model parameters it was
/// computed for.
#[derive(Debug, Clone)]
pub struct ZStarCache {
    pub theta_hash: u64,
    pub z_star: DenseMatrix,
    pub residual: f64,
}

impl ZStarCache {
    pub fn is_valid_for(&self, model: &IgnnModel) -> bool {
        self.theta_hash == model.theta_hash()
    }
}

/// Compute the solver-training target Z* with classic Anderson acceleration
/// (m=5, beta=1) from Z=0 on the frozen model.
pub fn compute_z_star(
    model: &IgnnModel,
    a_hat: &SparseGraph,
    features: &DenseMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<ZStarCache> {
    let problem = FixedPointProblem::new(model, a_hat, features)?;
    let z0 = DenseMatrix::zeros(a_hat.n(), model.hidden_dim());
    let trace = anderson_solve(&problem, &z0, 5, 1.0, tol, max_iter)?;
    if !trace.converged {
        return Err(IgnnError::Convergence {
            iterations: trace.f_evals,
            residual: trace.final_residual,
        });
    }
    Ok(ZStarCache {
        theta_hash: model.theta_hash(),
        z_star: trace.final_z,
        residual: trace.final_residual,
    })
}

/// History of one solver-training run.
#[derive(Debug, Clone, Default)]
pub struct SolverTrainReport {
    pub loss_history: Vec<LossComponents>,
    pub clipped_steps: usize,
    /// Relative residual of the final recorded iterate at the last step.
    pub final_residual: Option<f64>,
}

/// Unsupervised solver training: Adam on the initializer/compressor/
/// predictor parameters only, against the cached Z* (label-free). The model
/// is frozen; its parameters enter the tape as constants.
///
/// Fails with [`IgnnError::StaleCache`] when `cache` was computed for
/// different model parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_solver(
    model: &IgnnModel,
    a_hat: &SparseGraph,
    features: &DenseMatrix,
    solver: &mut NeuralSolver,
    cache: &ZStarCache,
    weights: &SolverLossWeights,
    steps: usize,
    lr: f64,
    phase: &str,
    log: &mut TrainLog,
) -> Result<SolverTrainReport> {
    if !cache.is_valid_for(model) {
        return Err(IgnnError::StaleCache);
    }
    weights.validate()?;
    let problem = FixedPointProblem::new(model, a_hat, features)?;
    let shapes: Vec<(usize, usize)> = solver
        .param_tensors()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    let mut optimizer = Adam::new(lr, &shapes);
    let mut report = SolverTrainReport::default();
    let started = Instant::now();

    for step in 0..steps {
        let mut tape = Tape::new();
        let params = TapedSolverParams::register(solver, &mut tape);
        let recorded = solve_recorded(solver, &params, &problem, solver.k_unroll, &mut tape)?;
        let loss = solver_loss(&mut tape, &recorded, &cache.z_star, weights, step, steps)?;
        let grads_table = tape.backward(loss.root)?;
        let mut grads: Vec<DenseMatrix> = params
            .ids
            .iter()
            .zip(shapes.iter())
            .map(|(&id, &(r, c))| grads_table.wrt_or_zeros(id, r, c))
            .collect();
        let clipped = clip_global_norm(&mut grads, SOLVER_GRAD_CLIP);
        if clipped {
            report.clipped_steps += 1;
        }
        {
            let mut tensors = solver.param_tensors_mut();
            let mut refs: Vec<&mut DenseMatrix> = tensors.iter_mut().map(|t| &mut **t).collect();
            optimizer.step(&mut refs, &grads)?;
        }

        let mut record = LogRecord::new(phase, step, started.elapsed().as_secs_f64());
        record.loss_total = Some(loss.components.total);
        record.loss_reconstruction = Some(loss.components.reconstruction);
        record.loss_init = Some(loss.components.init);
        record.loss_alpha = Some(loss.components.alpha);
        record.residual = recorded.residuals.last().copied();
        record.clipped = Some(clipped);
        log.push(record)?;

        report.final_residual = recorded.residuals.last().copied();
        report.loss_history.push(loss.components);
    }
    Ok(report)
}

/// Per-epoch metrics of model training.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub residual: f64,
}

/// Options for [`train_ignn`].
#[derive(Debug, Clone)]
pub struct IgnnTrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Forward-solve tolerance for the inner equilibrium.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Phase tag written to the log.
    pub phase: String,
}

impl Default for IgnnTrainOptions {
    fn default() -> Self {
        IgnnTrainOptions {
            epochs: 100,
            lr: 0.002,
            dropout: 0.0,
            tol: 3e-6,
            max_iter: 300,
            seed: 0,
            phase: "model".into(),
        }
    }
}

/// Supervised model training with a frozen solver: per epoch, solve the
/// forward equilibrium, take the readout loss on the train split,
/// back-propagate through the equilibrium with the adjoint solve, Adam-step
/// the model and re-project W. A forward solve that misses its tolerance
/// aborts the epoch with a convergence error (residual attached).
pub fn train_ignn(
    model: &mut IgnnModel,
    dataset: &Dataset,
    a_hat: &SparseGraph,
    solver: &dyn EquilibriumSolver,
    options: &IgnnTrainOptions,
    log: &mut TrainLog,
) -> Result<Vec<EpochMetrics>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9e3779b97f4a7c15);
    let mut optimizer = Adam::new(
        options.lr,
        &[
            model.w.shape(),
            model.omega_w.shape(),
            model.omega_b.shape(),
            model.readout_w.shape(),
            model.readout_b.shape(),
        ],
    );
    let mut history = Vec::new();
    let started = Instant::now();

    for epoch in 0..options.epochs {
        let (grads, loss, train_acc, val_acc, residual) = {
            let problem = FixedPointProblem::new(model, a_hat, &dataset.features)?;
            let z0 = DenseMatrix::zeros(a_hat.n(), model.hidden_dim());
            let trace = solver.solve(&problem, &z0, options.tol, options.max_iter)?;
            if !trace.converged {
                return Err(IgnnError::Convergence {
                    iterations: trace.f_evals,
                    residual: trace.final_residual,
                });
            }
            let z_star = trace.final_z;

            // Inverted dropout on the equilibrium before the readout;
            // never inside the fixed-point map.
            let (z_for_loss, mask) = if options.dropout > 0.0 {
                let mask = inverted_dropout_mask(
                    z_star.rows(),
                    z_star.cols(),
                    options.dropout,
                    &mut rng,
                )?;
                (z_star.hadamard(&mask)?, Some(mask))
            } else {
                (z_star.clone(), None)
            };
            let rl = readout_loss(model, &z_for_loss, &dataset.labels, &dataset.train)?;
            let grad_z = match &mask {
                Some(m) => rl.grad_z.hadamard(m)?,
                None => rl.grad_z.clone(),
            };
            let ig = implicit_backward(&problem, &z_star, &grad_z, options.tol, options.max_iter)?;

            let train_acc = accuracy(model, &z_star, &dataset.labels, &dataset.train)?;
            let val_acc = if dataset.val.is_empty() {
                None
            } else {
                Some(accuracy(model, &z_star, &dataset.labels, &dataset.val)?)
            };
            (
                [
                    ig.w,
                    ig.omega_w,
                    ig.omega_b,
                    rl.grad_readout_w,
                    rl.grad_readout_b,
                ],
                rl.loss,
                train_acc,
                val_acc,
                trace.final_residual,
            )
        };

        optimizer.step(
            &mut [
                &mut model.w,
                &mut model.omega_w,
                &mut model.omega_b,
                &mut model.readout_w,
                &mut model.readout_b,
            ],
            &grads,
        )?;
        model.project_weights();

        let mut record = LogRecord::new(&options.phase, epoch, started.elapsed().as_secs_f64());
        record.loss_total = Some(loss);
        record.residual = Some(residual);
        record.train_accuracy = Some(train_acc);
        record.val_accuracy = val_acc;
        log.push(record)?;

        history.push(EpochMetrics {
            epoch,
            loss,
            train_accuracy: train_acc,
            val_accuracy: val_acc,
            residual,
        });
    }
    Ok(history)
}

/// Alternating schedule: `warmup` model epochs with the classic solver,
/// then cycles of T1 solver-tuning steps (model frozen, Z* recomputed
/// first) followed by T2 model epochs (solver frozen) until the T2 phases
/// sum to `epoch_max`.
#[derive(Debug, Clone)]
pub struct AlternateSchedule {
    pub warmup: usize,
    pub t1: usize,
    pub t2: usize,
    pub epoch_max: usize,
}

impl AlternateSchedule {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        AlternateSchedule {
            warmup: cfg.warmup,
            t1: cfg.effective_t1(),
            t2: cfg.t2,
            epoch_max: cfg.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t1 < 1 || self.t2 < 1 {
            return Err(IgnnError::Config(format!(
                "alternating schedule needs T1 >= 1 and T2 >= 1 (got {} and {})",
                self.t1, self.t2
            )));
        }
        if self.epoch_max == 0 || self.epoch_max % self.t2 != 0 {
            return Err(IgnnError::Config(format!(
                "schedule totals inconsistent: epoch_max {} is not a positive multiple of T2 {}",
                self.epoch_max, self.t2
            )));
        }
        Ok(())
    }
}

/// Combined history of an alternating run.
#[derive(Debug, Clone, Default)]
pub struct AlternateReport {
    pub warmup: Vec<EpochMetrics>,
    pub solver_reports: Vec<SolverTrainReport>,
    pub model_epochs: Vec<EpochMetrics>,
}

/// Train the model and its solver in alternation (see
/// [`AlternateSchedule`]). Both artifacts are updated in place.
#[allow(clippy::too_many_arguments)]
pub fn alternate_train(
    model: &mut IgnnModel,
    solver: &mut NeuralSolver,
    dataset: &Dataset,
    a_hat: &SparseGraph,
    schedule: &AlternateSchedule,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<AlternateReport> {
    schedule.validate()?;
    let mut report = AlternateReport::default();

    let mut meta = LogRecord::new("meta", 0, 0.0);
    meta.model_params = Some(model.param_count());
    meta.solver_params = Some(solver.param_count());
    log.push(meta)?;

    if schedule.warmup > 0 {
        let anderson = AndersonSolver { m: cfg.m, beta: 1.0 };
        let options = IgnnTrainOptions {
            epochs: schedule.warmup,
            lr: cfg.lr,
            dropout: cfg.dropout,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            seed: cfg.seed,
            phase: "warmup".into(),
        };
        report.warmup = train_ignn(model, dataset, a_hat, &anderson, &options, log)?;
    }

    let weights = cfg.loss_weights();
    let cycles = schedule.epoch_max / schedule.t2;
    for cycle in 0..cycles {
        let cache = compute_z_star(model, a_hat, &dataset.features, Z_STAR_TOL, 10 * cfg.max_iter)?;
        let solver_report = train_solver(
            model,
            a_hat,
            &dataset.features,
            solver,
            &cache,
            &weights,
            schedule.t1,
            cfg.solver_learning_rate(),
            "solver",
            log,
        )?;
        report.solver_reports.push(solver_report);

        let options = IgnnTrainOptions {
            epochs: schedule.t2,
            lr: cfg.lr,
            dropout: cfg.dropout,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            seed: cfg.seed.wrapping_add(cycle as u64),
            phase: "model".into(),
        };
        let epochs = train_ignn(model, dataset, a_hat, solver, &options, log)?;
        report.model_epochs.extend(epochs);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::dataset::fixture_path3;
    use crate::graph::sparse::normalize_adjacency;
    use crate::model::Activation;
    use crate::neural::NeuralSolverConfig;

    fn fixture_setup(
        seed: u64,
    ) -> (IgnnModel, SparseGraph, Dataset, NeuralSolver) {
        let ds = fixture_path3();
        let a_hat = normalize_adjacency(&ds.graph).unwrap();
        let model = IgnnModel::random(2, 4, 2, 0.9, Activation::Tanh, seed).unwrap();
        let cfg = NeuralSolverConfig {
            m: 2,
            k_unroll: 3,
            p: 2,
            keep_fraction: 1.0,
            predictor_hidden: 4,
            ..NeuralSolverConfig::default()
        };
        let solver = NeuralSolver::new(2, 4, &a_hat, &cfg, seed.wrapping_add(1)).unwrap();
        (model, a_hat, ds, solver)
    }

    #[test]
    fn zero_steps_leaves_solver_untouched() {
        let (model, a_hat, ds, mut solver) = fixture_setup(3);
        let before = solver.param_bytes();
        let cache = compute_z_star(&model, &a_hat, &ds.features, 1e-8, 1000).unwrap();
        let mut log = TrainLog::in_memory();
        train_solver(
            &model,
            &a_hat,
            &ds.features,
            &mut solver,
            &cache,
            &SolverLossWeights::default(),
            0,
            1e-2,
            "solver",
            &mut log,
        )
        .unwrap();
        assert_eq!(before, solver.param_bytes());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let (model, a_hat, ds, mut solver) = fixture_setup(4);
        let mut cache = compute_z_star(&model, &a_hat, &ds.features, 1e-8, 1000).unwrap();
        cache.theta_hash ^= 1;
        let mut log = TrainLog::in_memory();
        let err = train_solver(
            &model,
            &a_hat,
            &ds.features,
            &mut solver,
            &cache,
            &SolverLossWeights::default(),
            1,
            1e-2,
            "solver",
            &mut log,
        )
        .unwrap_err();
        assert!(matches!(err, IgnnError::StaleCache));
    }

    #[test]
    fn solver_training_never_mutates_theta() {
        let (model, a_hat, ds, mut solver) = fixture_setup(5);
        let theta_before = model.theta_hash();
        let readout_before = model.readout_w.clone();
        let cache = compute_z_star(&model, &a_hat, &ds.features, 1e-8, 1000).unwrap();
        let mut log = TrainLog::in_memory();
        train_solver(
            &model,
            &a_hat,
            &ds.features,
            &mut solver,
            &cache,
            &SolverLossWeights::default(),
            5,
            1e-2,
            "solver",
            &mut log,
        )
        .unwrap();
        assert_eq!(theta_before, model.theta_hash());
        assert_eq!(readout_before, model.readout_w);
    }

    #[test]
    fn ignn_training_never_mutates_solver() {
        let (mut model, a_hat, ds, solver) = fixture_setup(6);
        let solver_before = solver.param_bytes();
        let options = IgnnTrainOptions {
            epochs: 3,
            lr: 0.01,
            tol: 1e-5,
            max_iter: 500,
            ..IgnnTrainOptions::default()
        };
        let mut log = TrainLog::in_memory();
        train_ignn(&mut model, &ds, &a_hat, &solver, &options, &mut log).unwrap();
        assert_eq!(solver_before, solver.param_bytes());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (mut model, a_hat, ds, _) = fixture_setup(7);
        let before = model.clone();
        let options = IgnnTrainOptions {
            epochs: 0,
            ..IgnnTrainOptions::default()
        };
        let mut log = TrainLog::in_memory();
        let history = train_ignn(
            &mut model,
            &ds,
            &a_hat,
            &AndersonSolver::default(),
            &options,
            &mut log,
        )
        .unwrap();
        assert!(history.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn inconsistent_schedule_is_config_error() {
        let schedule = AlternateSchedule {
            warmup: 0,
            t1: 2,
            t2: 10,
            epoch_max: 25,
        };
        assert!(matches!(
            schedule.validate(),
            Err(IgnnError::Config(_))
        ));
        let zero_t1 = AlternateSchedule {
            warmup: 0,
            t1: 0,
            t2: 10,
            epoch_max: 20,
        };
        assert!(zero_t1.validate().is_err());
    }
}
