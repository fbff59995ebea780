//! Anderson acceleration with equality-constrained least-squares weights.

use std::collections::VecDeque;

use crate::error::{IgnnError, Result};
use crate::solve::{relative_residual, FixedPointMap, SolveTrace, SolverKindName, TraceBuilder};
use crate::tensor::matrix::DenseMatrix;

/// Result of the constrained least-squares weight solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AaWeights {
    /// Affine combination weights, renormalized to sum to 1.
    pub alpha: Vec<f64>,
    /// True when the damped system was still singular and the weights fell
    /// back to uniform.
    pub fallback: bool,
}

/// Solve `argmin ||G^T alpha|| s.t. 1^T alpha = 1` where the rows of `g`
/// are stacked residuals.
///
/// Uses the normal equations with Tikhonov damping
/// `lambda = 1e-8 * trace(G G^T) / rows`; a singular system after damping
/// falls back to uniform weights (flagged, not an error).
pub fn aa_weights(g: &DenseMatrix) -> Result<AaWeights> {
    if g.rows() == 0 {
        return Err(IgnnError::Domain("aa_weights needs at least one row".into()));
    }
    if !g.is_finite() {
        return Err(IgnnError::Numeric("aa_weights on non-finite residuals".into()));
    }
    let gram = g.matmul_t(g)?;
    aa_weights_from_gram(&gram)
}

/// Same solve, starting from the (m_k+1) x (m_k+1) Gram matrix G G^T.
pub fn aa_weights_from_gram(gram: &DenseMatrix) -> Result<AaWeights> {
    let m = gram.rows();
    if m == 0 || gram.cols() != m {
        return Err(IgnnError::Domain("gram matrix must be square".into()));
    }
    let trace: f64 = (0..m).map(|i| gram.get(i, i)).sum();
    let damping = 1e-8 * trace / m as f64;

    // KKT system: [S + lambda I, 1; 1^T, 0] [alpha; nu] = [0; 1].
    let dim = m + 1;
    let mut kkt = DenseMatrix::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            kkt.set(i, j, gram.get(i, j) + if i == j { damping } else { 0.0 });
        }
        kkt.set(i, m, 1.0);
        kkt.set(m, i, 1.0);
    }
    let mut rhs = vec![0.0; dim];
    rhs[m] = 1.0;

    let uniform = || AaWeights {
        alpha: vec![1.0 / m as f64; m],
        fallback: true,
    };
    let solution = match solve_linear(&mut kkt, &mut rhs) {
        Some(x) => x,
        None => return Ok(uniform()),
    };
    let mut alpha: Vec<f64> = solution[..m].to_vec();
    let total: f64 = alpha.iter().sum();
    if !total.is_finite() || total.abs() < 1e-12 {
        return Ok(uniform());
    }
    for a in alpha.iter_mut() {
        *a /= total;
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Ok(uniform());
    }
    Ok(AaWeights {
        alpha,
        fallback: false,
    })
}

/// Gaussian elimination with partial pivoting; returns None when singular.
fn solve_linear(a: &mut DenseMatrix, b: &mut [f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a.get(row, col).abs() > a.get(pivot, col).abs() {
                pivot = row;
            }
        }
        let pivot_value = a.get(pivot, col);
        if pivot_value.abs() < 1e-300 || !pivot_value.is_finite() {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = a.get(col, j);
                a.set(col, j, a.get(pivot, j));
                a.set(pivot, j, tmp);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a.get(row, col) / a.get(col, col);
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a.get(row, j) - factor * a.get(col, j);
                a.set(row, j, v);
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a.get(row, j) * x[j];
        }
        x[row] = acc / a.get(row, row);
    }
    Some(x)
}

/// Rolling window of the most recent iterates, their f values and residuals.
pub(crate) struct Window {
    capacity: usize,
    entries: VecDeque<WindowEntry>,
}

pub(crate) struct WindowEntry {
    pub z: DenseMatrix,
    pub fz: DenseMatrix,
    pub residual: DenseMatrix,
}

impl Window {
    pub fn new(m: usize) -> Self {
        Window {
            capacity: m + 1,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, z: DenseMatrix, fz: DenseMatrix) -> Result<()> {
        let residual = fz.sub(&z)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(WindowEntry { z, fz, residual });
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// Gram matrix of the flattened residuals.
    pub fn residual_gram(&self) -> Result<DenseMatrix> {
        let len = self.entries.len();
        let mut gram = DenseMatrix::zeros(len, len);
        for (i, a) in self.entries.iter().enumerate() {
            for (j, b) in self.entries.iter().enumerate().skip(i) {
                let v = a.residual.dot(&b.residual)?;
                gram.set(i, j, v);
                gram.set(j, i, v);
            }
        }
        Ok(gram)
    }
}

/// Classic Anderson acceleration (type II) over the last `m`+1 iterates.
///
/// Each step solves the constrained least-squares problem on the stored
/// residuals and mixes `beta * sum_i alpha_i f(z_i) + (1-beta) * sum_i
/// alpha_i z_i`; one new f evaluation per step. Stopping matches Picard's
/// relative-residual rule; a non-finite iterate aborts with a numeric error
/// carrying the step index.
pub fn anderson_solve(
    map: &dyn FixedPointMap,
    z0: &DenseMatrix,
    m: usize,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveTrace> {
    if m < 1 {
        return Err(IgnnError::Domain(format!("anderson window m {m} must be >= 1")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(IgnnError::Domain(format!("anderson beta {beta} outside (0, 1]")));
    }
    let mut builder = TraceBuilder::new(SolverKindName::ANDERSON);
    let mut window = Window::new(m);
    let mut f_evals = 0usize;
    let mut converged = false;

    let fz0 = map.eval(z0)?;
    f_evals += 1;
    let mut residual = relative_residual(&fz0, z0)?;
    builder.record(0, residual, z0);
    window.push(z0.clone(), fz0)?;

    if residual <= tol {
        return Ok(builder.finish(true, f_evals));
    }

    for step in 0..max_iter {
        let weights = {
            let gram = window.residual_gram()?;
            aa_weights_from_gram(&gram)?
        };
        let shape = map.shape();
        let mut z_next = DenseMatrix::zeros(shape.0, shape.1);
        for (entry, &a) in window.entries().zip(weights.alpha.iter()) {
            z_next.axpy(beta * a, &entry.fz)?;
            if beta < 1.0 {
                z_next.axpy((1.0 - beta) * a, &entry.z)?;
            }
        }
        if !z_next.is_finite() {
            return Err(IgnnError::Numeric(format!(
                "anderson produced a non-finite iterate at step {step}"
            )));
        }
        let fz_next = map.eval(&z_next)?;
        f_evals += 1;
        residual = relative_residual(&fz_next, &z_next)?;
        builder.push_step(weights.alpha.clone(), beta, weights.fallback);
        builder.record(step + 1, residual, &z_next);
        window.push(z_next, fz_next)?;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    Ok(builder.finish(converged, f_evals))
}

/// [`crate::solve::EquilibriumSolver`] wrapper with fixed window and beta.
#[derive(Debug, Clone, Copy)]
pub struct AndersonSolver {
    pub m: usize,
    pub beta: f64,
}

impl Default for AndersonSolver {
    fn default() -> Self {
        AndersonSolver { m: 5, beta: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::picard_solve;
    use approx::assert_relative_eq;

    #[test]
    fn single_row_forces_unit_weight() {
        let g = DenseMatrix::from_rows(&[&[0.4, -0.2, 0.1]]);
        let w = aa_weights(&g).unwrap();
        assert_eq!(w.alpha, vec![1.0]);
        assert!(!w.fallback);
    }

    #[test]
    fn opposite_rows_cancel() {
        let g = DenseMatrix::from_rows(&[&[0.3, -0.5], &[-0.3, 0.5]]);
        let w = aa_weights(&g).unwrap();
        assert_relative_eq!(w.alpha[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(w.alpha[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn orthonormal_rows_split_evenly() {
        let g = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = aa_weights(&g).unwrap();
        assert_relative_eq!(w.alpha[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(w.alpha[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identical_zero_rows_fall_back_to_uniform() {
        let g = DenseMatrix::zeros(3, 4);
        let w = aa_weights(&g).unwrap();
        assert!(w.fallback);
        for a in &w.alpha {
            assert_relative_eq!(*a, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_always_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=6);
            let cols = rng.gen_range(1..=8);
            let g = DenseMatrix::random_uniform(rows, cols, 1.0, &mut rng);
            let w = aa_weights(&g).unwrap();
            let total: f64 = w.alpha.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "sum {total}");
        }
    }

    /// Affine map f(z) = M z + c over flattened 4-vectors.
    struct AffineMap {
        m: DenseMatrix,
        c: DenseMatrix,
    }

    impl FixedPointMap for AffineMap {
        fn shape(&self) -> (usize, usize) {
            (self.c.rows(), 1)
        }

        fn eval(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
            self.m.matmul(z)?.add(&self.c)
        }
    }

    fn contractive_affine(seed: u64) -> AffineMap {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DenseMatrix::random_uniform(4, 4, 1.0, &mut rng);
        let norm = crate::tensor::matrix::spectral_norm_dense(&m, 300);
        m = m.scale(0.8 / norm);
        let c = DenseMatrix::random_uniform(4, 1, 1.0, &mut rng);
        AffineMap { m, c }
    }

    #[test]
    fn affine_map_with_spanned_krylov_space_is_exact_within_six() {
        // M = 0.6 I has a one-dimensional Krylov space, so the window spans
        // it immediately; the damped least squares then drives the residual
        // to zero within a handful of steps.
        let map = AffineMap {
            m: DenseMatrix::identity(4).scale(0.6),
            c: DenseMatrix::from_rows(&[&[1.0], &[-0.5], &[0.25], &[2.0]]),
        };
        let trace = anderson_solve(&map, &DenseMatrix::zeros(4, 1), 3, 1.0, 1e-10, 50).unwrap();
        assert!(trace.converged);
        let reached = trace.first_reaching(1e-10).unwrap().0;
        assert!(reached <= 6, "needed {reached} iterations");
    }

    #[test]
    fn affine_map_matches_direct_solve_oracle() {
        let map = contractive_affine(3);
        let trace = anderson_solve(&map, &DenseMatrix::zeros(4, 1), 3, 1.0, 1e-10, 50).unwrap();
        assert!(trace.converged);
        let reached = trace.first_reaching(1e-10).unwrap().0;
        assert!(reached <= 20, "needed {reached} iterations");

        // Direct linear solve (I - M) z = c as the oracle.
        let mut system = DenseMatrix::identity(4).sub(&map.m).unwrap();
        let mut rhs: Vec<f64> = (0..4).map(|i| map.c.get(i, 0)).collect();
        let solution = solve_linear(&mut system, &mut rhs).unwrap();
        for i in 0..4 {
            assert_relative_eq!(trace.final_z.get(i, 0), solution[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn first_step_with_m1_is_picard_step() {
        let map = contractive_affine(9);
        let z0 = DenseMatrix::zeros(4, 1);
        let anderson = anderson_solve(&map, &z0, 1, 1.0, 1e-15, 1).unwrap();
        let picard = picard_solve(&map, &z0, 1e-15, 2).unwrap();
        // Iterate 1 of both runs is f(z0).
        assert_relative_eq!(
            anderson.iterates[1].residual,
            picard.iterates[1].residual,
            epsilon = 1e-14
        );
    }

    #[test]
    fn anderson_beats_picard_on_slow_contraction() {
        let map = contractive_affine(17);
        let z0 = DenseMatrix::zeros(4, 1);
        let a = anderson_solve(&map, &z0, 5, 1.0, 1e-6, 500).unwrap();
        let p = picard_solve(&map, &z0, 1e-6, 500).unwrap();
        assert!(a.converged && p.converged);
        assert!(
            a.f_evals < p.f_evals,
            "anderson {} vs picard {}",
            a.f_evals,
            p.f_evals
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        let map = contractive_affine(1);
        let z0 = DenseMatrix::zeros(4, 1);
        assert!(anderson_solve(&map, &z0, 0, 1.0, 1e-6, 10).is_err());
        assert!(anderson_solve(&map, &z0, 3, 0.0, 1e-6, 10).is_err());
        assert!(anderson_solve(&map, &z0, 3, 1.5, 1e-6, 10).is_err());
    }
}
