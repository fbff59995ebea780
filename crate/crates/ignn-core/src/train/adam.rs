//! Adam with bias correction, plus global-norm gradient clipping.

use crate::error::{IgnnError, Result};
use crate::tensor::matrix::DenseMatrix;

/// Adam state over an ordered list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    moments: Vec<(DenseMatrix, DenseMatrix)>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: shapes
                .iter()
                .map(|&(r, c)| (DenseMatrix::zeros(r, c), DenseMatrix::zeros(r, c)))
                .collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&DenseMatrix]) -> Self {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.shape()).collect();
        Self::new(lr, &shapes)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One bias-corrected update. `params` and `grads` must align with the
    /// shapes the state was built with.
    pub fn step(&mut self, params: &mut [&mut DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(IgnnError::Domain(format!(
                "adam: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.moments.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.moments.iter_mut())
        {
            if param.shape() != grad.shape() {
                return Err(IgnnError::shape("adam_step", param.shape(), grad.shape()));
            }
            for i in 0..param.data().len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                param.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns true when clipping actually triggered.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> bool {
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return false;
    }
    let factor = max_norm / norm;
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v *= factor;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_decreases_monotonically_after_warmup() {
        // f(x) = sum a_i (x_i - c_i)^2, grad 2 a (x - c).
        let a = [3.0, 0.5, 1.0];
        let c = [1.0, -2.0, 0.3];
        let mut x = DenseMatrix::from_rows(&[&[5.0, 5.0, 5.0]]);
        let loss = |x: &DenseMatrix| -> f64 {
            (0..3).map(|i| a[i] * (x.get(0, i) - c[i]).powi(2)).sum()
        };
        let mut adam = Adam::for_params(0.05, &[&x]);
        let mut history = Vec::new();
        for _ in 0..600 {
            let grad = DenseMatrix::from_vec(
                1,
                3,
                (0..3).map(|i| 2.0 * a[i] * (x.get(0, i) - c[i])).collect(),
            )
            .unwrap();
            adam.step(&mut [&mut x], &[grad]).unwrap();
            history.push(loss(&x));
        }
        // Monotone descent after warmup, down to a floor where momentum
        // oscillation becomes numerically irrelevant.
        for w in history[10..].windows(2) {
            if w[0] < 1e-9 {
                break;
            }
            assert!(w[1] <= w[0] + 1e-12, "loss went up: {} -> {}", w[0], w[1]);
        }
        assert!(history.last().unwrap() < &1e-6);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![DenseMatrix::filled(2, 2, 3.0), DenseMatrix::filled(1, 2, 3.0)];
        let clipped = clip_global_norm(&mut grads, 5.0);
        assert!(clipped);
        let total: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!((total.sqrt() - 5.0).abs() < 1e-12);
        let mut small = vec![DenseMatrix::filled(1, 1, 0.1)];
        assert!(!clip_global_norm(&mut small, 5.0));
    }
}
