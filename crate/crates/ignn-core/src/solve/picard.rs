//! Plain fixed-point iteration z <- f(z).

use crate::error::Result;
use crate::solve::{relative_residual, FixedPointMap, SolveTrace, SolverKindName, TraceBuilder};
use crate::tensor::matrix::DenseMatrix;

/// Picard iteration with relative-residual stopping.
///
/// Iterate k is z_k with z_0 = z0; each iterate costs one f evaluation, so
/// `max_iter` bounds the evaluation count. Running out of budget is not an
/// error: the trace comes back with `converged = false`.
pub fn picard_solve(
    map: &dyn FixedPointMap,
    z0: &DenseMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SolveTrace> {
    let mut builder = TraceBuilder::new(SolverKindName::PICARD);
    let mut z = z0.clone();
    let mut f_evals = 0usize;
    let mut converged = false;
    for k in 0..max_iter {
        let fz = map.eval(&z)?;
        f_evals += 1;
        let residual = relative_residual(&fz, &z)?;
        builder.record(k, residual, &z);
        if residual <= tol {
            converged = true;
            break;
        }
        z = fz;
    }
    Ok(builder.finish(converged, f_evals))
}

/// [`crate::solve::EquilibriumSolver`] wrapper around [`picard_solve`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PicardSolver;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::IgnnError;

    /// Scalar affine map f(z) = slope * z + offset on a 1x1 matrix.
    struct ScalarMap {
        slope: f64,
        offset: f64,
    }

    impl FixedPointMap for ScalarMap {
        fn shape(&self) -> (usize, usize) {
            (1, 1)
        }

        fn eval(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
            if !z.is_finite() {
                return Err(IgnnError::Numeric("non-finite iterate".into()));
            }
            Ok(z.map(|v| self.slope * v + self.offset))
        }
    }

    #[test]
    fn converges_to_scalar_fixed_point() {
        // f(z) = 0.5 z + 1 has fixed point 2.
        let map = ScalarMap { slope: 0.5, offset: 1.0 };
        let trace = picard_solve(&map, &DenseMatrix::zeros(1, 1), 1e-7, 200).unwrap();
        assert!(trace.converged);
        assert!(
            (trace.final_z.get(0, 0) - 2.0).abs() <= 1e-6,
            "z = {}",
            trace.final_z.get(0, 0)
        );
    }

    #[test]
    fn already_fixed_point_takes_one_eval() {
        let map = ScalarMap { slope: 1.0, offset: 0.0 };
        let z0 = DenseMatrix::filled(1, 1, 3.0);
        let trace = picard_solve(&map, &z0, 1e-10, 50).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.f_evals, 1);
        assert_eq!(trace.final_z, z0);
    }

    #[test]
    fn geometric_decay_iteration_count() {
        // Contraction factor 0.9, fixed point 1. The distance to the fixed
        // point after k iterations from 0 is 0.9^k, so |z - 1| <= 1e-6 first
        // holds at k = ceil(ln 1e-6 / ln 0.9) = 132. Run with a tight
        // stopping tolerance and locate that crossing from the trace: the
        // residual of iterate k is 0.1 * 0.9^k = 0.1 * |z_k - 1|.
        let map = ScalarMap { slope: 0.9, offset: 0.1 };
        let trace = picard_solve(&map, &DenseMatrix::zeros(1, 1), 1e-9, 400).unwrap();
        let expected = (1e-6f64.ln() / 0.9f64.ln()).ceil() as usize; // 132
        let crossing = trace
            .iterates
            .iter()
            .find(|r| r.residual <= 0.1 * 1e-6)
            .map(|r| r.k)
            .expect("crossing reached");
        assert!(
            crossing.abs_diff(expected) <= 2,
            "crossing {crossing}, expected {expected}"
        );
    }

    #[test]
    fn budget_exhaustion_flags_not_converged() {
        let map = ScalarMap { slope: 0.99, offset: 0.01 };
        let trace = picard_solve(&map, &DenseMatrix::zeros(1, 1), 1e-12, 5).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.f_evals, 5);
        assert_eq!(trace.iterates.len(), 5);
    }
}
