//! The learned fixed-point solver: a feature-based initializer, per-node
//! residual compression, and a tiny graph-network predictor that emits the
//! mixing coefficients (alpha on the simplex, beta in (0, beta_max]) for a
//! generalized Anderson step over a sparsified support graph.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IgnnError, Result};
use crate::graph::sparse::{row_normalize, sparsify, SparseGraph};
use crate::model::checkpoint::{find_tensor, load_tensors, save_tensors, scalar};
use crate::model::FixedPointProblem;
use crate::solve::{
    relative_residual, EquilibriumSolver, FixedPointMap, SolveTrace, SolverKindName, TraceBuilder,
};
use crate::tensor::matrix::{softmax_slice, DenseMatrix};
use crate::tensor::tape::{Tape, VarId};

/// How the next iterate is mixed from the window.
///
/// `ClassicAa` is `sum_i alpha_i (Z_i + beta * G_i)`, which reduces to the
/// classic accelerated update and anchors the degenerate-coefficient
/// equivalence tests. `LiteralSum` keeps the alternative form
/// `beta * sum_i G_i + sum_i alpha_i Z_i` behind a flag for fidelity
/// experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    ClassicAa,
    LiteralSum,
}

impl UpdateRule {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "classic" | "classic-aa" => Ok(UpdateRule::ClassicAa),
            "literal" | "literal-sum" => Ok(UpdateRule::LiteralSum),
            other => Err(IgnnError::Config(format!("unknown update_rule '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            UpdateRule::ClassicAa => "classic",
            UpdateRule::LiteralSum => "literal",
        }
    }
}

/// Where the step coefficients come from at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoeffPolicy {
    /// The trained predictor.
    #[default]
    Learned,
    /// alpha = one-hot(newest iterate), beta = 1: collapses the classic
    /// update to a Picard step. Test anchor, not a training mode.
    PicardAnchor,
}

/// Hyperparameters of the learned solver.
#[derive(Debug, Clone)]
pub struct NeuralSolverConfig {
    /// Window size m (the window holds up to m+1 iterates).
    pub m: usize,
    /// Unroll length K used during training.
    pub k_unroll: usize,
    /// Compressed channel width per window slot.
    pub p: usize,
    /// Upper bound for the predicted beta.
    pub beta_max: f64,
    /// Fraction of off-diagonal edges kept in the predictor's support.
    pub keep_fraction: f64,
    pub update_rule: UpdateRule,
    /// Initializer hidden width; `None` picks max(4, d'/16), which keeps the
    /// solver within its parameter budget relative to the model.
    pub init_hidden: Option<usize>,
    /// Width of the predictor's graph-convolution layer.
    pub predictor_hidden: usize,
}

impl Default for NeuralSolverConfig {
    fn default() -> Self {
        NeuralSolverConfig {
            m: 5,
            k_unroll: 10,
            p: 8,
            beta_max: 1.5,
            keep_fraction: 0.25,
            update_rule: UpdateRule::ClassicAa,
            init_hidden: None,
            predictor_hidden: 16,
        }
    }
}

/// Learned solver parameters: initializer MLP (tanh hidden, linear output),
/// residual compressor (affine + tanh), and the coefficient predictor (one
/// graph convolution over the sparsified support, mean pool, two heads).
#[derive(Debug, Clone)]
pub struct NeuralSolver {
    pub init_w1: DenseMatrix,
    pub init_b1: DenseMatrix,
    pub init_w2: DenseMatrix,
    pub init_b2: DenseMatrix,
    pub comp_w: DenseMatrix,
    pub comp_b: DenseMatrix,
    pub gcn_w: DenseMatrix,
    pub gcn_b: DenseMatrix,
    pub head_alpha_w: DenseMatrix,
    pub head_alpha_b: DenseMatrix,
    pub head_beta_w: DenseMatrix,
    pub head_beta_b: DenseMatrix,
    /// Row-normalized sparsified support used only inside the predictor.
    pub support: Arc<SparseGraph>,
    pub m: usize,
    pub k_unroll: usize,
    pub p: usize,
    pub beta_max: f64,
    pub keep_fraction: f64,
    pub update_rule: UpdateRule,
    pub policy: CoeffPolicy,
}

impl NeuralSolver {
    /// Seeded construction. `a_hat` is the normalized adjacency the model
    /// runs on; the predictor support is its sparsified, row-normalized
    /// subgraph.
    pub fn new(
        d: usize,
        hidden: usize,
        a_hat: &SparseGraph,
        cfg: &NeuralSolverConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.m < 1 {
            return Err(IgnnError::Config(format!("window m {} must be >= 1", cfg.m)));
        }
        if !(cfg.beta_max > 0.0) {
            return Err(IgnnError::Config(format!(
                "beta_max {} must be positive",
                cfg.beta_max
            )));
        }
        let init_hidden = cfg.init_hidden.unwrap_or_else(|| (hidden / 16).max(4));
        let g = cfg.predictor_hidden;
        let channels = cfg.p * (cfg.m + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xavier = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let support = Arc::new(row_normalize(&sparsify(a_hat, cfg.keep_fraction, seed)?));
        Ok(NeuralSolver {
            init_w1: DenseMatrix::random_uniform(d, init_hidden, xavier(d), &mut rng),
            init_b1: DenseMatrix::zeros(1, init_hidden),
            init_w2: DenseMatrix::random_uniform(init_hidden, hidden, xavier(init_hidden), &mut rng),
            init_b2: DenseMatrix::zeros(1, hidden),
            comp_w: DenseMatrix::random_uniform(hidden, cfg.p, xavier(hidden), &mut rng),
            comp_b: DenseMatrix::zeros(1, cfg.p),
            gcn_w: DenseMatrix::random_uniform(channels, g, xavier(channels), &mut rng),
            gcn_b: DenseMatrix::zeros(1, g),
            head_alpha_w: DenseMatrix::random_uniform(g, cfg.m + 1, xavier(g), &mut rng),
            head_alpha_b: DenseMatrix::zeros(1, cfg.m + 1),
            head_beta_w: DenseMatrix::random_uniform(g, 1, xavier(g), &mut rng),
            head_beta_b: DenseMatrix::zeros(1, 1),
            support,
            m: cfg.m,
            k_unroll: cfg.k_unroll,
            p: cfg.p,
            beta_max: cfg.beta_max,
            keep_fraction: cfg.keep_fraction,
            update_rule: cfg.update_rule,
            policy: CoeffPolicy::Learned,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.init_w2.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.init_w1.rows()
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Named tensors in checkpoint order.
    pub fn param_tensors(&self) -> Vec<(&'static str, &DenseMatrix)> {
        vec![
            ("init_w1", &self.init_w1),
            ("init_b1", &self.init_b1),
            ("init_w2", &self.init_w2),
            ("init_b2", &self.init_b2),
            ("comp_w", &self.comp_w),
            ("comp_b", &self.comp_b),
            ("gcn_w", &self.gcn_w),
            ("gcn_b", &self.gcn_b),
            ("head_alpha_w", &self.head_alpha_w),
            ("head_alpha_b", &self.head_alpha_b),
            ("head_beta_w", &self.head_beta_w),
            ("head_beta_b", &self.head_beta_b),
        ]
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![
            &mut self.init_w1,
            &mut self.init_b1,
            &mut self.init_w2,
            &mut self.init_b2,
            &mut self.comp_w,
            &mut self.comp_b,
            &mut self.gcn_w,
            &mut self.gcn_b,
            &mut self.head_alpha_w,
            &mut self.head_alpha_b,
            &mut self.head_beta_w,
            &mut self.head_beta_b,
        ]
    }

    /// Concatenated little-endian bytes of every parameter; bit-equality
    /// witness for the freeze contracts.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for (_, t) in self.param_tensors() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Initial estimate h(X): two-layer MLP, tanh hidden, linear output.
    pub fn init_estimate(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if features.cols() != self.input_dim() {
            return Err(IgnnError::shape(
                "init_estimate",
                features.shape(),
                self.init_w1.shape(),
            ));
        }
        let hidden = features
            .matmul(&self.init_w1)?
            .add_row(&self.init_b1)?
            .map(f64::tanh);
        hidden.matmul(&self.init_w2)?.add_row(&self.init_b2)
    }

    /// Per-node residual compression: tanh(G comp_w + comp_b), n x p.
    pub fn compress(&self, residual: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(residual
            .matmul(&self.comp_w)?
            .add_row(&self.comp_b)?
            .map(f64::tanh))
    }

    /// Predict (alpha, beta) from the compressed window (oldest first).
    ///
    /// The compressed slots are concatenated channel-wise, zero-padded to
    /// p*(m+1), convolved once over the support graph, mean-pooled and fed
    /// to the two heads. Alpha is a masked softmax over the first
    /// `window_len` logits, so a single-entry window always yields [1.0].
    pub fn predict_coeffs_compressed(&self, compressed: &[&DenseMatrix]) -> Result<(Vec<f64>, f64)> {
        let window_len = compressed.len();
        if window_len == 0 {
            return Err(IgnnError::Domain("predict_coeffs on empty window".into()));
        }
        if window_len > self.m + 1 {
            return Err(IgnnError::Domain(format!(
                "window length {window_len} exceeds m+1 = {}",
                self.m + 1
            )));
        }
        let n = compressed[0].rows();
        let channels = self.p * (self.m + 1);
        let mut stacked = DenseMatrix::zeros(n, channels);
        for (slot, part) in compressed.iter().enumerate() {
            for i in 0..n {
                let src = part.row(i);
                stacked.row_mut(i)[slot * self.p..slot * self.p + self.p].copy_from_slice(src);
            }
        }
        let conv = self
            .support
            .matmul_dense(&stacked)?
            .matmul(&self.gcn_w)?
            .add_row(&self.gcn_b)?
            .map(f64::tanh);
        let pooled = conv.mean_rows();
        let alpha_logits = pooled.matmul(&self.head_alpha_w)?.add_row(&self.head_alpha_b)?;
        let alpha = softmax_slice(&alpha_logits.data()[..window_len])?;
        let beta_logit = pooled.matmul(&self.head_beta_w)?.add_row(&self.head_beta_b)?;
        let beta = self.beta_max * (1.0 / (1.0 + (-beta_logit.get(0, 0)).exp()));
        Ok((alpha, beta))
    }

    /// Predict coefficients from raw window residuals (compresses first).
    pub fn predict_coeffs(&self, residuals: &[&DenseMatrix]) -> Result<(Vec<f64>, f64)> {
        let compressed: Vec<DenseMatrix> = residuals
            .iter()
            .map(|r| self.compress(r))
            .collect::<Result<_>>()?;
        let refs: Vec<&DenseMatrix> = compressed.iter().collect();
        self.predict_coeffs_compressed(&refs)
    }

    fn mix(
        &self,
        alpha: &[f64],
        beta: f64,
        window: &VecDeque<WindowSlot>,
    ) -> Result<DenseMatrix> {
        let first = window.front().expect("window nonempty");
        let mut next = DenseMatrix::zeros(first.z.rows(), first.z.cols());
        match self.update_rule {
            UpdateRule::ClassicAa => {
                for (slot, &a) in window.iter().zip(alpha.iter()) {
                    next.axpy(a, &slot.z)?;
                    next.axpy(a * beta, &slot.g)?;
                }
            }
            UpdateRule::LiteralSum => {
                for (slot, &a) in window.iter().zip(alpha.iter()) {
                    next.axpy(a, &slot.z)?;
                    next.axpy(beta, &slot.g)?;
                }
            }
        }
        Ok(next)
    }

    /// Inference-mode solve: start from h(X), run up to `k_run` steps with
    /// one f evaluation each, exit early once the relative residual falls
    /// under `tol`. `k_run = 0` returns the initial estimate after its one
    /// residual evaluation.
    pub fn solve_inference(
        &self,
        problem: &FixedPointProblem<'_>,
        k_run: usize,
        tol: f64,
    ) -> Result<SolveTrace> {
        self.solve_map(problem, problem.features, k_run, tol, true)
    }

    /// Training-horizon solve without early exit (always runs `k_run` steps).
    pub fn solve_full_horizon(
        &self,
        problem: &FixedPointProblem<'_>,
        k_run: usize,
    ) -> Result<SolveTrace> {
        self.solve_map(problem, problem.features, k_run, 0.0, false)
    }

    fn solve_map(
        &self,
        map: &dyn FixedPointMap,
        features: &DenseMatrix,
        k_run: usize,
        tol: f64,
        early_exit: bool,
    ) -> Result<SolveTrace> {
        let mut builder = TraceBuilder::new(SolverKindName::NEURAL);
        let mut window: VecDeque<WindowSlot> = VecDeque::new();
        let mut f_evals = 0usize;

        let z0 = self.init_estimate(features)?;
        let fz0 = map.eval(&z0)?;
        f_evals += 1;
        let g0 = fz0.sub(&z0)?;
        let mut residual = relative_residual(&fz0, &z0)?;
        builder.record(0, residual, &z0);
        window.push_back(WindowSlot {
            compressed: self.compress(&g0)?,
            z: z0,
            g: g0,
        });
        let mut converged = residual <= tol;

        for step in 0..k_run {
            if converged && early_exit {
                break;
            }
            let (alpha, beta) = match self.policy {
                CoeffPolicy::Learned => {
                    let refs: Vec<&DenseMatrix> =
                        window.iter().map(|s| &s.compressed).collect();
                    self.predict_coeffs_compressed(&refs)?
                }
                CoeffPolicy::PicardAnchor => {
                    let mut alpha = vec![0.0; window.len()];
                    *alpha.last_mut().expect("window nonempty") = 1.0;
                    (alpha, 1.0)
                }
            };
            let z_next = self.mix(&alpha, beta, &window)?;
            if !z_next.is_finite() {
                return Err(IgnnError::Numeric(format!(
                    "neural solver produced a non-finite iterate at step {step}"
                )));
            }
            let fz = map.eval(&z_next)?;
            f_evals += 1;
            let g = fz.sub(&z_next)?;
            residual = relative_residual(&fz, &z_next)?;
            builder.push_step(alpha, beta, false);
            builder.record(step + 1, residual, &z_next);
            if window.len() == self.m + 1 {
                window.pop_front();
            }
            window.push_back(WindowSlot {
                compressed: self.compress(&g)?,
                z: z_next,
                g,
            });
            if residual <= tol {
                converged = true;
                if early_exit {
                    break;
                }
            }
        }
        Ok(builder.finish(converged, f_evals))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.param_tensors();
        let m = scalar(self.m as f64);
        let k = scalar(self.k_unroll as f64);
        let p = scalar(self.p as f64);
        let beta_max = scalar(self.beta_max);
        let keep = scalar(self.keep_fraction);
        let rule = scalar(match self.update_rule {
            UpdateRule::ClassicAa => 0.0,
            UpdateRule::LiteralSum => 1.0,
        });
        tensors.push(("m", &m));
        tensors.push(("k_unroll", &k));
        tensors.push(("p", &p));
        tensors.push(("beta_max", &beta_max));
        tensors.push(("keep_fraction", &keep));
        tensors.push(("update_rule", &rule));
        save_tensors(path, &tensors)
    }

    /// Load parameters and rebuild the support from `a_hat` with the stored
    /// keep fraction (the support graph itself is not serialized).
    pub fn load(path: &Path, a_hat: &SparseGraph) -> Result<Self> {
        let tensors = load_tensors(path)?;
        let get = |name: &str| find_tensor(&tensors, name, path).cloned();
        let scalar_of = |name: &str| -> Result<f64> {
            Ok(find_tensor(&tensors, name, path)?.get(0, 0))
        };
        let m = scalar_of("m")? as usize;
        let keep_fraction = scalar_of("keep_fraction")?;
        let update_rule = if scalar_of("update_rule")? == 0.0 {
            UpdateRule::ClassicAa
        } else {
            UpdateRule::LiteralSum
        };
        let seed = 0; // top-weight sparsification ignores the seed
        let support = Arc::new(row_normalize(&sparsify(a_hat, keep_fraction, seed)?));
        Ok(NeuralSolver {
            init_w1: get("init_w1")?,
            init_b1: get("init_b1")?,
            init_w2: get("init_w2")?,
            init_b2: get("init_b2")?,
            comp_w: get("comp_w")?,
            comp_b: get("comp_b")?,
            gcn_w: get("gcn_w")?,
            gcn_b: get("gcn_b")?,
            head_alpha_w: get("head_alpha_w")?,
            head_alpha_b: get("head_alpha_b")?,
            head_beta_w: get("head_beta_w")?,
            head_beta_b: get("head_beta_b")?,
            support,
            m,
            k_unroll: scalar_of("k_unroll")? as usize,
            p: scalar_of("p")? as usize,
            beta_max: scalar_of("beta_max")?,
            keep_fraction,
            update_rule,
            policy: CoeffPolicy::Learned,
        })
    }
}

struct WindowSlot {
    z: DenseMatrix,
    g: DenseMatrix,
    compressed: DenseMatrix,
}

impl EquilibriumSolver for NeuralSolver {
    fn name(&self) -> &str {
        SolverKindName::NEURAL
    }

    /// Ignores `z0`: the learned solver always starts from its initializer.
    fn solve(
        &self,
        problem: &FixedPointProblem<'_>,
        _z0: &DenseMatrix,
        tol: f64,
        max_iter: usize,
    ) -> Result<SolveTrace> {
        self.solve_inference(problem, max_iter, tol)
    }
}

/// Tape handles of the registered solver parameters (training mode).
pub struct TapedSolverParams {
    pub ids: Vec<VarId>,
}

impl TapedSolverParams {
    pub fn register(solver: &NeuralSolver, tape: &mut Tape) -> Self {
        let ids = solver
            .param_tensors()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect();
        TapedSolverParams { ids }
    }
}

/// Everything the recorded (training-mode) unrolled solve exposes to the
/// loss: tape handles of the trajectory plus the realized coefficients.
pub struct RecordedSolve {
    /// Iterates Z[0..=K]; Z[0] is the initializer output.
    pub z_vars: Vec<VarId>,
    /// Combined residual sum_i alpha_i G_i per step (Classic rule reuses it
    /// in the update; it also feeds the alpha loss).
    pub combo_g_vars: Vec<VarId>,
    /// Realized coefficients per step.
    pub alphas: Vec<Vec<f64>>,
    pub betas: Vec<f64>,
    /// Relative residual per iterate (plain values, for logging).
    pub residuals: Vec<f64>,
    pub f_evals: usize,
}

/// Unrolled K-step solve recorded on `tape`. Model parameters enter as
/// constants, so no gradient can flow into the frozen model; solver
/// parameters come from `params` (see [`TapedSolverParams`]).
///
/// Training always runs the full horizon; there is no early exit.
pub fn solve_recorded(
    solver: &NeuralSolver,
    params: &TapedSolverParams,
    problem: &FixedPointProblem<'_>,
    k_unroll: usize,
    tape: &mut Tape,
) -> Result<RecordedSolve> {
    let [init_w1, init_b1, init_w2, init_b2, comp_w, comp_b, gcn_w, gcn_b, head_alpha_w, head_alpha_b, head_beta_w, head_beta_b] =
        params.ids[..]
    else {
        return Err(IgnnError::Domain("expected 12 solver parameter tensors".into()));
    };
    let graph = Arc::new(problem.graph.clone());
    let w_const = tape.constant(problem.model.w.clone());
    let bias_const = tape.constant(problem.bias().clone());
    let x_const = tape.constant(problem.features.clone());
    let act = problem.model.activation;

    let f_eval = |tape: &mut Tape, z: VarId| -> Result<VarId> {
        let az = tape.spmm(graph.clone(), z)?;
        let azw = tape.matmul(az, w_const)?;
        let pre = tape.add(azw, bias_const)?;
        Ok(match act {
            crate::model::Activation::Relu => tape.relu(pre),
            crate::model::Activation::Tanh => tape.tanh(pre),
        })
    };
    let compress = |tape: &mut Tape, g: VarId| -> Result<VarId> {
        let lin = tape.affine(g, comp_w, comp_b)?;
        Ok(tape.tanh(lin))
    };

    // Z[0] = h(X): tanh hidden, linear output.
    let h_pre = tape.affine(x_const, init_w1, init_b1)?;
    let h_act = tape.tanh(h_pre);
    let z0 = tape.affine(h_act, init_w2, init_b2)?;

    let f0 = f_eval(tape, z0)?;
    let g0 = tape.sub(f0, z0)?;
    let c0 = compress(tape, g0)?;
    let mut f_evals = 1usize;
    let mut residuals = vec![relative_residual(tape.value(f0), tape.value(z0))?];

    let channels = solver.p * (solver.m + 1);
    let mut z_vars = vec![z0];
    let mut g_window: VecDeque<VarId> = VecDeque::from([g0]);
    let mut z_window: VecDeque<VarId> = VecDeque::from([z0]);
    let mut c_window: VecDeque<VarId> = VecDeque::from([c0]);
    let mut combo_g_vars = Vec::new();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();

    for _step in 0..k_unroll {
        let window_len = z_window.len();
        // Predictor forward.
        let parts: Vec<VarId> = c_window.iter().copied().collect();
        let stacked = tape.concat_cols_pad(&parts, channels)?;
        let conv_in = tape.spmm(solver.support.clone(), stacked)?;
        let conv_lin = tape.affine(conv_in, gcn_w, gcn_b)?;
        let conv = tape.tanh(conv_lin);
        let pooled = tape.mean_rows(conv);
        let alpha_logits = tape.affine(pooled, head_alpha_w, head_alpha_b)?;
        let alpha = tape.softmax_masked(alpha_logits, window_len)?;
        let beta_logit = tape.affine(pooled, head_beta_w, head_beta_b)?;
        let beta_sig = tape.sigmoid(beta_logit);
        let beta = tape.scale_const(beta_sig, solver.beta_max);

        alphas.push(tape.value(alpha).data()[..window_len].to_vec());
        betas.push(tape.value(beta).get(0, 0));

        // Mixing step.
        let zs: Vec<VarId> = z_window.iter().copied().collect();
        let gs: Vec<VarId> = g_window.iter().copied().collect();
        let combo_z = tape.simplex_combo(alpha, &zs)?;
        let combo_g = tape.simplex_combo(alpha, &gs)?;
        combo_g_vars.push(combo_g);
        let z_next = match solver.update_rule {
            UpdateRule::ClassicAa => {
                let scaled = tape.mul_scalar(combo_g, beta)?;
                tape.add(combo_z, scaled)?
            }
            UpdateRule::LiteralSum => {
                let total_g = tape.sum_parts(&gs)?;
                let scaled = tape.mul_scalar(total_g, beta)?;
                tape.add(combo_z, scaled)?
            }
        };
        if !tape.value(z_next).is_finite() {
            return Err(IgnnError::Numeric(format!(
                "recorded solve hit a non-finite iterate at step {_step}"
            )));
        }
        let fz = f_eval(tape, z_next)?;
        f_evals += 1;
        let g_next = tape.sub(fz, z_next)?;
        let c_next = compress(tape, g_next)?;
        residuals.push(relative_residual(tape.value(fz), tape.value(z_next))?);

        z_vars.push(z_next);
        if z_window.len() == solver.m + 1 {
            z_window.pop_front();
            g_window.pop_front();
            c_window.pop_front();
        }
        z_window.push_back(z_next);
        g_window.push_back(g_next);
        c_window.push_back(c_next);
    }

    Ok(RecordedSolve {
        z_vars,
        combo_g_vars,
        alphas,
        betas,
        residuals,
        f_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::dataset::fixture_path3;
    use crate::graph::sparse::normalize_adjacency;
    use crate::model::{Activation, IgnnModel};
    use crate::solve::picard_solve;
    use approx::assert_relative_eq;

    fn fixture() -> (IgnnModel, SparseGraph, DenseMatrix) {
        let ds = fixture_path3();
        let a_hat = normalize_adjacency(&ds.graph).unwrap();
        let model = IgnnModel::random(2, 4, 2, 0.9, Activation::Relu, 42).unwrap();
        (model, a_hat, ds.features)
    }

    fn solver_for(a_hat: &SparseGraph, seed: u64) -> NeuralSolver {
        let cfg = NeuralSolverConfig {
            m: 3,
            k_unroll: 4,
            p: 2,
            keep_fraction: 1.0,
            predictor_hidden: 4,
            ..NeuralSolverConfig::default()
        };
        NeuralSolver::new(2, 4, a_hat, &cfg, seed).unwrap()
    }

    #[test]
    fn init_estimate_equal_rows_for_equal_features() {
        let (_, a_hat, _) = fixture();
        let solver = solver_for(&a_hat, 7);
        let x = DenseMatrix::from_rows(&[&[0.5, -1.0], &[0.5, -1.0], &[2.0, 0.0]]);
        let z0 = solver.init_estimate(&x).unwrap();
        assert_eq!(z0.row(0), z0.row(1));
        assert_ne!(z0.row(0), z0.row(2));
    }

    #[test]
    fn init_estimate_zero_params_broadcast() {
        let (_, a_hat, x) = fixture();
        let mut solver = solver_for(&a_hat, 7);
        for t in solver.param_tensors_mut() {
            *t = DenseMatrix::zeros(t.rows(), t.cols());
        }
        let z0 = solver.init_estimate(&x).unwrap();
        assert_eq!(z0, DenseMatrix::zeros(3, 4));
    }

    #[test]
    fn init_estimate_is_deterministic() {
        let (_, a_hat, x) = fixture();
        let solver = solver_for(&a_hat, 9);
        let a = solver.init_estimate(&x).unwrap();
        let b = solver.init_estimate(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_coeffs_singleton_window() {
        let (_, a_hat, _) = fixture();
        let solver = solver_for(&a_hat, 3);
        let g = DenseMatrix::filled(3, 4, 0.2);
        let (alpha, beta) = solver.predict_coeffs(&[&g]).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert!(beta > 0.0 && beta <= solver.beta_max);
    }

    #[test]
    fn predict_coeffs_simplex_and_beta_range() {
        let (_, a_hat, _) = fixture();
        let solver = solver_for(&a_hat, 5);
        let g1 = DenseMatrix::filled(3, 4, 0.3);
        let g2 = DenseMatrix::filled(3, 4, -0.4);
        let g3 = DenseMatrix::filled(3, 4, 0.05);
        let (alpha, beta) = solver.predict_coeffs(&[&g1, &g2, &g3]).unwrap();
        let total: f64 = alpha.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(alpha.iter().all(|a| *a >= 0.0));
        assert!(beta > 0.0 && beta <= 1.5);
    }

    #[test]
    fn predict_coeffs_matches_straight_line_recomputation() {
        let (_, a_hat, _) = fixture();
        let solver = solver_for(&a_hat, 12);
        let g1 = DenseMatrix::from_rows(&[&[0.1, -0.2, 0.3, 0.0], &[0.5, 0.1, -0.1, 0.2], &[
            -0.3, 0.2, 0.0, 0.1,
        ]]);
        let g2 = g1.scale(0.5);
        let (alpha, beta) = solver.predict_coeffs(&[&g1, &g2]).unwrap();

        // Independent step-by-step recomputation of the forward chain.
        let c1 = g1
            .matmul(&solver.comp_w)
            .unwrap()
            .add_row(&solver.comp_b)
            .unwrap()
            .map(f64::tanh);
        let c2 = g2
            .matmul(&solver.comp_w)
            .unwrap()
            .add_row(&solver.comp_b)
            .unwrap()
            .map(f64::tanh);
        let mut stacked = DenseMatrix::zeros(3, solver.p * (solver.m + 1));
        for i in 0..3 {
            stacked.row_mut(i)[..solver.p].copy_from_slice(c1.row(i));
            stacked.row_mut(i)[solver.p..2 * solver.p].copy_from_slice(c2.row(i));
        }
        let conv = solver
            .support
            .matmul_dense(&stacked)
            .unwrap()
            .matmul(&solver.gcn_w)
            .unwrap()
            .add_row(&solver.gcn_b)
            .unwrap()
            .map(f64::tanh);
        let pooled = conv.mean_rows();
        let logits = pooled
            .matmul(&solver.head_alpha_w)
            .unwrap()
            .add_row(&solver.head_alpha_b)
            .unwrap();
        let expect_alpha = softmax_slice(&logits.data()[..2]).unwrap();
        let beta_logit = pooled
            .matmul(&solver.head_beta_w)
            .unwrap()
            .add_row(&solver.head_beta_b)
            .unwrap()
            .get(0, 0);
        let expect_beta = 1.5 / (1.0 + (-beta_logit).exp());
        for (a, e) in alpha.iter().zip(expect_alpha.iter()) {
            assert_relative_eq!(a, e, epsilon = 1e-14);
        }
        assert_relative_eq!(beta, expect_beta, epsilon = 1e-14);
    }

    #[test]
    fn anchor_policy_reproduces_picard() {
        let (model, a_hat, x) = fixture();
        let problem = FixedPointProblem::new(&model, &a_hat, &x).unwrap();
        let mut solver = solver_for(&a_hat, 21);
        solver.policy = CoeffPolicy::PicardAnchor;
        let neural = solver.solve_inference(&problem, 12, 0.0).unwrap();
        let z0 = solver.init_estimate(&x).unwrap();
        let picard = picard_solve(&problem, &z0, 0.0, 13).unwrap();
        assert_eq!(neural.iterates.len(), 13);
        for (a, b) in neural.iterates.iter().zip(picard.iterates.iter()) {
            assert!(
                (a.residual - b.residual).abs() <= 1e-12 * b.residual.max(1.0),
                "step {}: {} vs {}",
                a.k,
                a.residual,
                b.residual
            );
        }
    }

    #[test]
    fn k_run_zero_returns_initializer_output() {
        let (model, a_hat, x) = fixture();
        let problem = FixedPointProblem::new(&model, &a_hat, &x).unwrap();
        let solver = solver_for(&a_hat, 33);
        let trace = solver.solve_inference(&problem, 0, 1e-9).unwrap();
        assert_eq!(trace.f_evals, 1);
        assert_eq!(trace.iterates.len(), 1);
        assert_eq!(trace.final_z, solver.init_estimate(&x).unwrap());
    }

    #[test]
    fn learned_policy_converges_on_contraction() {
        let (model, a_hat, x) = fixture();
        let problem = FixedPointProblem::new(&model, &a_hat, &x).unwrap();
        let solver = solver_for(&a_hat, 44);
        let trace = solver.solve_inference(&problem, 300, 1e-8).unwrap();
        assert!(trace.converged, "residual {}", trace.final_residual);
        // Every step's coefficients stay on the simplex with bounded beta.
        for alpha in &trace.alphas {
            let total: f64 = alpha.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(alpha.iter().all(|a| *a >= 0.0));
        }
        for beta in &trace.betas {
            assert!(*beta > 0.0 && *beta <= 1.5);
        }
    }

    #[test]
    fn permutation_consistency() {
        let (model, a_hat, x) = fixture();
        let solver = solver_for(&a_hat, 50);
        let problem = FixedPointProblem::new(&model, &a_hat, &x).unwrap();
        let trace = solver.solve_inference(&problem, 4, 0.0).unwrap();

        // Permute nodes: sigma = (2, 0, 1) mapping old -> new.
        let perm = [2usize, 0, 1];
        let mut triples = Vec::new();
        for (i, j, w) in a_hat.triples() {
            triples.push((perm[i], perm[j], w));
        }
        let a_perm = SparseGraph::from_triples(3, &triples).unwrap();
        let mut x_perm = DenseMatrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                x_perm.set(perm[i], j, x.get(i, j));
            }
        }
        let cfg = NeuralSolverConfig {
            m: 3,
            k_unroll: 4,
            p: 2,
            keep_fraction: 1.0,
            predictor_hidden: 4,
            ..NeuralSolverConfig::default()
        };
        let mut solver_perm = NeuralSolver::new(2, 4, &a_perm, &cfg, 50).unwrap();
        // Same parameters, permuted support.
        solver_perm.init_w1 = solver.init_w1.clone();
        solver_perm.init_b1 = solver.init_b1.clone();
        solver_perm.init_w2 = solver.init_w2.clone();
        solver_perm.init_b2 = solver.init_b2.clone();
        solver_perm.comp_w = solver.comp_w.clone();
        solver_perm.comp_b = solver.comp_b.clone();
        solver_perm.gcn_w = solver.gcn_w.clone();
        solver_perm.gcn_b = solver.gcn_b.clone();
        solver_perm.head_alpha_w = solver.head_alpha_w.clone();
        solver_perm.head_alpha_b = solver.head_alpha_b.clone();
        solver_perm.head_beta_w = solver.head_beta_w.clone();
        solver_perm.head_beta_b = solver.head_beta_b.clone();

        let problem_perm = FixedPointProblem::new(&model, &a_perm, &x_perm).unwrap();
        let trace_perm = solver_perm.solve_inference(&problem_perm, 4, 0.0).unwrap();

        for (a, b) in trace.alphas.iter().zip(trace_perm.alphas.iter()) {
            for (x1, x2) in a.iter().zip(b.iter()) {
                assert_relative_eq!(x1, x2, epsilon = 1e-10);
            }
        }
        for (b1, b2) in trace.betas.iter().zip(trace_perm.betas.iter()) {
            assert_relative_eq!(b1, b2, epsilon = 1e-10);
        }
        // Final iterate permutes with the nodes.
        for i in 0..3 {
            for j in 0..4 {
                assert_relative_eq!(
                    trace.final_z.get(i, j),
                    trace_perm.final_z.get(perm[i], j),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn recorded_solve_matches_inference_values() {
        let (model, a_hat, x) = fixture();
        let problem = FixedPointProblem::new(&model, &a_hat, &x).unwrap();
        let solver = solver_for(&a_hat, 61);
        let inference = solver.solve_full_horizon(&problem, 4).unwrap();

        let mut tape = Tape::new();
        let params = TapedSolverParams::register(&solver, &mut tape);
        let recorded = solve_recorded(&solver, &params, &problem, 4, &mut tape).unwrap();

        assert_eq!(recorded.residuals.len(), inference.iterates.len());
        for (r, it) in recorded.residuals.iter().zip(inference.iterates.iter()) {
            assert_relative_eq!(r, &it.residual, epsilon = 1e-13);
        }
        for (a, b) in recorded.alphas.iter().zip(inference.alphas.iter()) {
            for (x1, x2) in a.iter().zip(b.iter()) {
                assert_relative_eq!(x1, x2, epsilon = 1e-13);
            }
        }
        for (b1, b2) in recorded.betas.iter().zip(inference.betas.iter()) {
            assert_relative_eq!(b1, b2, epsilon = 1e-13);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, a_hat, _) = fixture();
        let solver = solver_for(&a_hat, 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solver.ckpt");
        solver.save(&path).unwrap();
        let loaded = NeuralSolver::load(&path, &a_hat).unwrap();
        assert_eq!(solver.param_bytes(), loaded.param_bytes());
        assert_eq!(solver.m, loaded.m);
        assert_eq!(solver.update_rule, loaded.update_rule);
        assert_eq!(solver.support.as_ref(), loaded.support.as_ref());
    }
}
