//! The implicit layer `f(Z) = sigma(A Z W + b(X))`, its well-posedness
//! projection, the adjoint (implicit) backward pass and the readout head.

pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IgnnError, Result};
use crate::graph::sparse::SparseGraph;
use crate::solve::FixedPointMap;
use crate::tensor::matrix::{softmax_slice, spectral_norm_dense, DenseMatrix};

/// Elementwise activation of the equilibrium layer. ReLU is the default;
/// Tanh is kept for smooth-gradient tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f64::tanh),
        }
    }

    /// Elementwise derivative evaluated at the pre-activation.
    /// The ReLU subgradient at 0 is 0.
    pub fn derivative(&self, pre: &DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Relu => pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => pre.map(|v| {
                let t = v.tanh();
                1.0 - t * t
            }),
        }
    }
}

/// Equilibrium-layer parameters: recurrent weight W, input injection
/// (Omega), readout head, activation and the contraction budget kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct IgnnModel {
    /// d' x d' recurrent weight.
    pub w: DenseMatrix,
    /// d x d' input weight of the affine injection b(X).
    pub omega_w: DenseMatrix,
    /// 1 x d' input bias.
    pub omega_b: DenseMatrix,
    /// d' x C readout weight.
    pub readout_w: DenseMatrix,
    /// 1 x C readout bias.
    pub readout_b: DenseMatrix,
    pub activation: Activation,
    /// Contraction budget in (0, 1); `project_weights` keeps ||W|| <= kappa.
    pub kappa: f64,
}

impl IgnnModel {
    /// Seeded random model, spectral-norm projected so the layer is a
    /// contraction from the start.
    pub fn random(
        d: usize,
        hidden: usize,
        num_classes: usize,
        kappa: f64,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(IgnnError::Domain(format!("kappa {kappa} outside (0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale_w = 1.0 / (hidden as f64).sqrt();
        let scale_in = 1.0 / (d as f64).sqrt();
        let mut model = IgnnModel {
            w: DenseMatrix::random_uniform(hidden, hidden, scale_w, &mut rng),
            omega_w: DenseMatrix::random_uniform(d, hidden, scale_in, &mut rng),
            omega_b: DenseMatrix::random_uniform(1, hidden, 0.1, &mut rng),
            readout_w: DenseMatrix::random_uniform(hidden, num_classes, scale_w, &mut rng),
            readout_b: DenseMatrix::zeros(1, num_classes),
            activation,
            kappa,
        };
        model.project_weights();
        Ok(model)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.omega_w.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.readout_w.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w.data().len()
            + self.omega_w.data().len()
            + self.omega_b.data().len()
            + self.readout_w.data().len()
            + self.readout_b.data().len()
    }

    /// Rescale W onto the spectral ball of radius kappa when it exceeds it.
    /// With ||A_hat|| <= 1 and a 1-Lipschitz activation this makes the layer
    /// a contraction in Z with factor kappa.
    pub fn project_weights(&mut self) {
        let norm = spectral_norm_dense(&self.w, 300);
        if norm > self.kappa {
            let factor = self.kappa / norm;
            self.w = self.w.scale(factor);
        }
    }

    /// b(X) = X omega_w + omega_b.
    pub fn injection(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        features.matmul(&self.omega_w)?.add_row(&self.omega_b)
    }

    /// Byte-level hash of the equilibrium parameters; used to key Z* caches.
    pub fn theta_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64; // FNV-1a
        let mut feed = |m: &DenseMatrix| {
            for v in m.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        };
        feed(&self.w);
        feed(&self.omega_w);
        feed(&self.omega_b);
        h
    }
}

/// One equilibrium problem: a model bound to a normalized graph and its
/// features, with the injection b(X) cached. Rebuilt whenever Omega changes
/// (the borrow makes stale caches unrepresentable).
pub struct FixedPointProblem<'a> {
    pub model: &'a IgnnModel,
    pub graph: &'a SparseGraph,
    pub features: &'a DenseMatrix,
    bias: DenseMatrix,
}

impl<'a> FixedPointProblem<'a> {
    pub fn new(
        model: &'a IgnnModel,
        graph: &'a SparseGraph,
        features: &'a DenseMatrix,
    ) -> Result<Self> {
        if graph.n() != features.rows() {
            return Err(IgnnError::shape(
                "fixed_point_problem",
                (graph.n(), graph.n()),
                features.shape(),
            ));
        }
        if features.cols() != model.input_dim() {
            return Err(IgnnError::shape(
                "fixed_point_problem",
                features.shape(),
                model.omega_w.shape(),
            ));
        }
        let bias = model.injection(features)?;
        Ok(FixedPointProblem {
            model,
            graph,
            features,
            bias,
        })
    }

    /// Cached b(X), shape n x d'.
    pub fn bias(&self) -> &DenseMatrix {
        &self.bias
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Pre-activation A Z W + b(X).
    pub fn pre_activation(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        let az = self.graph.matmul_dense(z)?;
        let azw = az.matmul(&self.model.w)?;
        azw.add(&self.bias)
    }

    /// One layer application sigma(A Z W + b(X)).
    pub fn layer_forward(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.model.activation.apply(&self.pre_activation(z)?))
    }
}

impl FixedPointMap for FixedPointProblem<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.graph.n(), self.model.hidden_dim())
    }

    fn eval(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.layer_forward(z)
    }
}

/// Gradients of a scalar loss w.r.t. the equilibrium parameters and the
/// input features, obtained from the adjoint fixed point.
#[derive(Debug, Clone)]
pub struct ImplicitGrads {
    pub w: DenseMatrix,
    pub omega_w: DenseMatrix,
    pub omega_b: DenseMatrix,
    pub features: DenseMatrix,
    /// Picard iterations the adjoint solve used.
    pub adjoint_iters: usize,
}

/// Solve the adjoint equation `u = D .* (A^T u W^T + grad_z)` by Picard
/// iteration (D is the activation derivative at the converged
/// pre-activation), then form parameter gradients by one chain-rule step.
///
/// `z_star` must already satisfy the forward equilibrium to reasonable
/// accuracy (caller's responsibility).
pub fn implicit_backward(
    problem: &FixedPointProblem<'_>,
    z_star: &DenseMatrix,
    grad_z: &DenseMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<ImplicitGrads> {
    if grad_z.shape() != z_star.shape() {
        return Err(IgnnError::shape("implicit_backward", z_star.shape(), grad_z.shape()));
    }
    let pre = problem.pre_activation(z_star)?;
    let d_mask = problem.model.activation.derivative(&pre);

    let mut u = DenseMatrix::zeros(z_star.rows(), z_star.cols());
    let mut converged = false;
    let mut iters = 0;
    let mut residual = f64::INFINITY;
    for k in 0..max_iter {
        iters = k + 1;
        // next = D .* (A^T u W^T + grad_z)
        let atu = problem.graph.t_matmul_dense(&u)?;
        let atuwt = atu.matmul_t(&problem.model.w)?;
        let next = d_mask.hadamard(&atuwt.add(grad_z)?)?;
        residual = next.sub(&u)?.frob_norm() / next.frob_norm().max(1e-12);
        u = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged && grad_z.frob_norm() > 0.0 {
        return Err(IgnnError::Convergence {
            iterations: iters,
            residual,
        });
    }

    // One chain-rule step through the pre-activation.
    let az = problem.graph.matmul_dense(z_star)?;
    let grad_w = az.t_matmul(&u)?;
    let grad_omega_w = problem.features.t_matmul(&u)?;
    let grad_omega_b = u.col_sums();
    let grad_features = u.matmul_t(&problem.model.omega_w)?;
    Ok(ImplicitGrads {
        w: grad_w,
        omega_w: grad_omega_w,
        omega_b: grad_omega_b,
        features: grad_features,
        adjoint_iters: iters,
    })
}

/// Readout loss: mean softmax cross-entropy of `readout(Z)` logits over the
/// given split, with the gradients the training loop needs.
#[derive(Debug, Clone)]
pub struct ReadoutLoss {
    pub loss: f64,
    pub grad_z: DenseMatrix,
    pub grad_readout_w: DenseMatrix,
    pub grad_readout_b: DenseMatrix,
}

pub fn readout_loss(
    model: &IgnnModel,
    z: &DenseMatrix,
    labels: &[usize],
    split: &[usize],
) -> Result<ReadoutLoss> {
    if split.is_empty() {
        return Err(IgnnError::Domain("readout_loss over an empty split".into()));
    }
    let classes = model.num_classes();
    let logits = z.matmul(&model.readout_w)?.add_row(&model.readout_b)?;
    let inv = 1.0 / split.len() as f64;
    let mut loss = 0.0;
    // delta = (softmax - onehot) / |split| on split rows, 0 elsewhere.
    let mut delta = DenseMatrix::zeros(z.rows(), classes);
    for &node in split {
        if node >= z.rows() || labels[node] >= classes {
            return Err(IgnnError::Domain(format!(
                "split node {node} or its label out of range"
            )));
        }
        let probs = softmax_slice(logits.row(node))?;
        let p = probs[labels[node]].max(1e-300);
        loss -= p.ln() * inv;
        for c in 0..classes {
            let y = if c == labels[node] { 1.0 } else { 0.0 };
            delta.set(node, c, (probs[c] - y) * inv);
        }
    }
    let grad_z = delta.matmul_t(&model.readout_w)?;
    let grad_readout_w = z.t_matmul(&delta)?;
    let grad_readout_b = delta.col_sums();
    Ok(ReadoutLoss {
        loss,
        grad_z,
        grad_readout_w,
        grad_readout_b,
    })
}

/// Fraction of split nodes whose argmax logit matches the label.
pub fn accuracy(model: &IgnnModel, z: &DenseMatrix, labels: &[usize], split: &[usize]) -> Result<f64> {
    if split.is_empty() {
        return Err(IgnnError::Domain("accuracy over an empty split".into()));
    }
    let logits = z.matmul(&model.readout_w)?.add_row(&model.readout_b)?;
    let mut hits = 0usize;
    for &node in split {
        let row = logits.row(node);
        let mut best = 0usize;
        for (c, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = c;
            }
        }
        if best == labels[node] {
            hits += 1;
        }
    }
    Ok(hits as f64 / split.len() as f64)
}
