//! The three-part unsupervised solver loss and its lambda schedules.
//!
//! Total loss over one recorded K-step solve:
//!   sum_{k=1..K} w_k(t) ||Z[k] - Z*||_F        (reconstruction)
//! + lambda2 ||Z[0] - Z*||_F                    (initializer)
//! + lambda3(t) sum_steps ||sum_i alpha_i G_i||_F   (alpha guidance)
//!
//! The reconstruction sum runs over the K update-produced iterates; the
//! initializer term alone covers Z[0]. With the warmup ramp enabled, w_k(t)
//! grows linearly from 0 to its configured value over the training run;
//! with decay enabled, lambda3(t) shrinks linearly to 0.

use crate::error::{IgnnError, Result};
use crate::neural::RecordedSolve;
use crate::tensor::matrix::DenseMatrix;
use crate::tensor::tape::{Tape, VarId};

/// Per-step weighting scheme for the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lambda1Schedule {
    /// w_k = lambda1 for every k.
    ConstantPerStep,
    /// Only the final iterate Z[K] carries weight lambda1.
    LastStepOnly,
    /// w_k = lambda1 * k / K for k = 1..K: strictly increasing, summing to
    /// lambda1 * (K+1) / 2.
    LinearIncreasing,
}

impl Lambda1Schedule {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "constant" => Ok(Lambda1Schedule::ConstantPerStep),
            "last" | "last-step" => Ok(Lambda1Schedule::LastStepOnly),
            "linear" | "linear-increasing" => Ok(Lambda1Schedule::LinearIncreasing),
            other => Err(IgnnError::Config(format!(
                "unknown lambda1_schedule '{other}'"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Lambda1Schedule::ConstantPerStep => "constant",
            Lambda1Schedule::LastStepOnly => "last",
            Lambda1Schedule::LinearIncreasing => "linear",
        }
    }
}

/// Weights of the three loss components plus their schedules.
#[derive(Debug, Clone)]
pub struct SolverLossWeights {
    pub lambda1: f64,
    pub lambda1_schedule: Lambda1Schedule,
    /// Ramp lambda1 from 0 to its value over the training steps.
    pub lambda1_warmup: bool,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Decay lambda3 linearly to 0 over the training steps.
    pub lambda3_decay: bool,
}

impl Default for SolverLossWeights {
    fn default() -> Self {
        SolverLossWeights {
            lambda1: 0.1,
            lambda1_schedule: Lambda1Schedule::LinearIncreasing,
            lambda1_warmup: true,
            lambda2: 5.0,
            lambda3: 1e-4,
            lambda3_decay: true,
        }
    }
}

impl SolverLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(IgnnError::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Warmup ramp factor for training step t of T; reaches 1 at the final
    /// step. Without warmup this is always 1.
    pub fn ramp(&self, step: usize, total_steps: usize) -> f64 {
        if !self.lambda1_warmup {
            return 1.0;
        }
        if total_steps <= 1 {
            return 1.0;
        }
        (step as f64 / (total_steps - 1) as f64).min(1.0)
    }

    /// Reconstruction weight for iterate k (1-based among K produced
    /// iterates) at training step t of T.
    pub fn reconstruction_weight(
        &self,
        k: usize,
        k_total: usize,
        step: usize,
        total_steps: usize,
    ) -> f64 {
        debug_assert!(k >= 1 && k <= k_total);
        let base = match self.lambda1_schedule {
            Lambda1Schedule::ConstantPerStep => self.lambda1,
            Lambda1Schedule::LastStepOnly => {
                if k == k_total {
                    self.lambda1
                } else {
                    0.0
                }
            }
            Lambda1Schedule::LinearIncreasing => self.lambda1 * k as f64 / k_total as f64,
        };
        base * self.ramp(step, total_steps)
    }

    /// Alpha-guidance weight at training step t of T.
    pub fn alpha_weight(&self, step: usize, total_steps: usize) -> f64 {
        if !self.lambda3_decay {
            return self.lambda3;
        }
        if total_steps <= 1 {
            return self.lambda3;
        }
        self.lambda3 * (1.0 - step as f64 / (total_steps - 1) as f64).max(0.0)
    }
}

/// Loss components realized at one training step (plain values,
/// for logging).
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub reconstruction: f64,
    pub init: f64,
    pub alpha: f64,
}

/// Output of [`solver_loss`]: the scalar tape root plus realized values.
pub struct SolverLoss {
    pub root: VarId,
    pub components: LossComponents,
}

/// Assemble the total loss on the tape holding `recorded`. `z_star` enters
/// as a constant; terms with exactly zero weight are skipped, so schedules
/// that zero a term contribute neither value nor gradient (bit-exact).
pub fn solver_loss(
    tape: &mut Tape,
    recorded: &RecordedSolve,
    z_star: &DenseMatrix,
    weights: &SolverLossWeights,
    step: usize,
    total_steps: usize,
) -> Result<SolverLoss> {
    weights.validate()?;
    let k_total = recorded.z_vars.len() - 1;
    let z_star_const = tape.constant(z_star.clone());
    let mut terms: Vec<VarId> = Vec::new();
    let mut components = LossComponents::default();

    // Reconstruction over the K produced iterates.
    if k_total > 0 {
        for (k, &z_var) in recorded.z_vars.iter().enumerate().skip(1) {
            let w = weights.reconstruction_weight(k, k_total, step, total_steps);
            if w == 0.0 {
                continue;
            }
            let diff = tape.sub(z_var, z_star_const)?;
            let norm = tape.frob_norm(diff);
            let weighted = tape.scale_const(norm, w);
            components.reconstruction += tape.value(weighted).get(0, 0);
            terms.push(weighted);
        }
    }

    // Initializer distance.
    if weights.lambda2 != 0.0 {
        let diff = tape.sub(recorded.z_vars[0], z_star_const)?;
        let norm = tape.frob_norm(diff);
        let weighted = tape.scale_const(norm, weights.lambda2);
        components.init = tape.value(weighted).get(0, 0);
        terms.push(weighted);
    }

    // Alpha guidance: the combined residual of every step.
    let w_alpha = weights.alpha_weight(step, total_steps);
    if w_alpha != 0.0 {
        for &combo in &recorded.combo_g_vars {
            let norm = tape.frob_norm(combo);
            let weighted = tape.scale_const(norm, w_alpha);
            components.alpha += tape.value(weighted).get(0, 0);
            terms.push(weighted);
        }
    }

    let root = match terms.len() {
        0 => tape.constant(DenseMatrix::zeros(1, 1)),
        1 => terms[0],
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    components.total = tape.value(root).get(0, 0);
    Ok(SolverLoss { root, components })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_increasing_weights_are_strictly_increasing_and_sum_exactly() {
        let weights = SolverLossWeights {
            lambda1: 0.4,
            lambda1_schedule: Lambda1Schedule::LinearIncreasing,
            lambda1_warmup: false,
            ..SolverLossWeights::default()
        };
        let k_total = 7;
        let ws: Vec<f64> = (1..=k_total)
            .map(|k| weights.reconstruction_weight(k, k_total, 0, 1))
            .collect();
        for pair in ws.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        let total: f64 = ws.iter().sum();
        let expected = 0.4 * (k_total as f64 + 1.0) / 2.0;
        assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");
    }

    #[test]
    fn last_step_only_zeroes_everything_before_k() {
        let weights = SolverLossWeights {
            lambda1: 0.3,
            lambda1_schedule: Lambda1Schedule::LastStepOnly,
            lambda1_warmup: false,
            ..SolverLossWeights::default()
        };
        for k in 1..5 {
            assert_eq!(weights.reconstruction_weight(k, 5, 0, 1), 0.0);
        }
        assert_eq!(weights.reconstruction_weight(5, 5, 0, 1), 0.3);
    }

    #[test]
    fn warmup_starts_at_zero_and_reaches_full() {
        let weights = SolverLossWeights::default();
        assert_eq!(weights.ramp(0, 100), 0.0);
        assert_eq!(weights.ramp(99, 100), 1.0);
        assert_eq!(weights.alpha_weight(99, 100), 0.0);
        assert!((weights.alpha_weight(0, 100) - weights.lambda3).abs() < 1e-18);
    }
}
