//! Row-major dense f64 matrices and the linear-algebra kernels the rest of
//! the crate is built on. Deliberately small: no BLAS, no views, no
//! broadcasting beyond what the models need.

use crate::error::{IgnnError, Result};
use rand::Rng;

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IgnnError::Domain(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Test/fixture helper: build from row slices, panicking on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Uniform entries in [-scale, scale].
    pub fn random_uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self * other. ikj loop keeps the inner walk contiguous.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(IgnnError::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// self^T * other.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(IgnnError::shape("t_matmul", self.shape(), other.shape()));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// self * other^T.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(IgnnError::shape("matmul_t", self.shape(), other.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (a, b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &DenseMatrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(IgnnError::shape(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(IgnnError::shape("add_assign", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(IgnnError::shape("axpy", self.shape(), other.shape()));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Broadcast-add a 1 x cols row vector to every row.
    pub fn add_row(&self, row: &DenseMatrix) -> Result<DenseMatrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(IgnnError::shape("add_row", self.shape(), row.shape()));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(row.data.iter()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &DenseMatrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(IgnnError::shape("dot", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// 1 x cols vector of column sums.
    pub fn col_sums(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i).iter()) {
                *o += v;
            }
        }
        out
    }

    /// 1 x cols vector of column means.
    pub fn mean_rows(&self) -> DenseMatrix {
        let mut out = self.col_sums();
        if self.rows > 0 {
            let inv = 1.0 / self.rows as f64;
            for v in out.data.iter_mut() {
                *v *= inv;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Numerically stable softmax of a nonempty slice; shift-invariant.
pub fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(IgnnError::Domain("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(IgnnError::Numeric("softmax of non-finite input".into()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Largest singular value by power iteration on M^T M.
///
/// Deterministic start vector; the Rayleigh-quotient estimate is
/// nondecreasing in the iteration count and exact for diagonal matrices.
pub fn spectral_norm_dense(m: &DenseMatrix, iterations: usize) -> f64 {
    power_iteration(m.cols(), iterations, |v| {
        // w = M^T (M v)
        let mut mv = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            let row = m.row(i);
            mv[i] = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        }
        let mut w = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            let row = m.row(i);
            for (wj, a) in w.iter_mut().zip(row.iter()) {
                *wj += a * mv[i];
            }
        }
        w
    })
}

/// Shared power-iteration core over the PSD operator v -> A^T A v supplied
/// as `gram_apply`. Returns sqrt of the final Rayleigh quotient.
pub(crate) fn power_iteration(
    dim: usize,
    iterations: usize,
    gram_apply: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    // Fixed pseudo-random start; a deterministic all-ones start can be
    // orthogonal to the leading singular vector.
    let mut v: Vec<f64> = (0..dim)
        .map(|i| (0.5 + (i as f64 + 1.0).sin()).abs() + 0.1)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let w = gram_apply(&v);
        let rayleigh: f64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        if rayleigh <= 0.0 {
            return 0.0;
        }
        let new_estimate = rayleigh.sqrt();
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(w.iter()) {
            *vi = wi / wnorm;
        }
        if (new_estimate - estimate).abs() <= 1e-13 * new_estimate.max(1.0) {
            return new_estimate;
        }
        estimate = new_estimate;
    }
    estimate
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1-rate) so expectations are preserved. `rate` must lie in [0, 1).
pub fn inverted_dropout_mask<R: Rng>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut R,
) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(IgnnError::Domain(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok(DenseMatrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 - rate;
    let inv = 1.0 / keep;
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { inv })
        .collect();
    DenseMatrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_hand_example() {
        // X=[[1,2],[3,4]], W=[[0,1],[1,0]] plus bias handled elsewhere.
        let x = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let out = x.matmul(&w).unwrap();
        assert_eq!(out, DenseMatrix::from_rows(&[&[2.0, 1.0], &[4.0, 3.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "got {msg}");
    }

    #[test]
    fn transpose_products_agree() {
        let a = DenseMatrix::from_rows(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let b = DenseMatrix::from_rows(&[&[2.0, 1.0], &[0.5, -1.0]]);
        // a^T b via the fused kernel vs explicit transpose.
        let fused = a.t_matmul(&b).unwrap();
        let explicit = a.transpose().matmul(&b).unwrap();
        assert_eq!(fused, explicit);
        // a b^T with a 2x3-compatible right factor.
        let c = DenseMatrix::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0]]);
        let fused_t = a.matmul_t(&c).unwrap();
        let explicit_t = a.matmul(&c.transpose()).unwrap();
        for (x, y) in fused_t.data().iter().zip(explicit_t.data().iter()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let s = softmax_slice(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.5, epsilon = 1e-15);

        // Huge equal inputs must not overflow.
        let s = softmax_slice(&[1000.0, 1000.0, 1000.0]).unwrap();
        for v in &s {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }

        // Closed form e^0 / (e^0 + 3).
        let s = softmax_slice(&[0.0, 3.0_f64.ln()]).unwrap();
        assert_relative_eq!(s[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(s[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_empty_is_domain_error() {
        assert!(matches!(
            softmax_slice(&[]),
            Err(IgnnError::Domain(_))
        ));
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        let i = DenseMatrix::identity(4);
        assert_relative_eq!(spectral_norm_dense(&i, 50), 1.0, epsilon = 1e-12);
        let d = DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]);
        assert_relative_eq!(spectral_norm_dense(&d, 200), 2.0, epsilon = 1e-9);
        let z = DenseMatrix::zeros(3, 3);
        assert_eq!(spectral_norm_dense(&z, 10), 0.0);
    }

    #[test]
    fn dropout_mask_preserves_expectation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mask = inverted_dropout_mask(200, 50, 0.5, &mut rng).unwrap();
        let mean = mask.sum() / (200.0 * 50.0);
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
        assert!(inverted_dropout_mask(2, 2, 1.0, &mut rng).is_err());
    }
}
