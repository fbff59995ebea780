//! CSR sparse graphs, symmetric normalization, deterministic top-weight
//! sparsification and power-iteration spectral norm estimates.

use crate::error::{IgnnError, Result};
use crate::tensor::matrix::{power_iteration, DenseMatrix};

/// Compressed sparse row adjacency with per-edge weights.
///
/// Immutable after construction; safe to share read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseGraph {
    /// Build a CSR matrix from (row, col, weight) triples. Rejects indices
    /// out of range and duplicate (row, col) pairs.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triples.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, w) in &sorted {
            if r >= n || c >= n {
                return Err(IgnnError::Domain(format!(
                    "edge ({r}, {c}) out of range for {n} nodes"
                )));
            }
            if prev == Some((r, c)) {
                return Err(IgnnError::Domain(format!("duplicate edge ({r}, {c})")));
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(w);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseGraph {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn empty(n: usize) -> Self {
        SparseGraph {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let triples: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triples(n, &triples).expect("identity triples are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// (column, weight) pairs of one row.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(self.values[lo..hi].iter())
            .map(|(&c, &v)| (c, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row_entries(i)
            .find(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, w) in self.row_entries(i) {
                out.push((i, j, w));
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row_entries(i).map(|(_, w)| w).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.triples()
            .iter()
            .all(|&(i, j, w)| (self.get(j, i) - w).abs() <= tol)
    }

    /// self * x for dense x (n x c).
    pub fn matmul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(IgnnError::shape("spmm", (self.n, self.n), x.shape()));
        }
        let c = x.cols();
        let mut out = DenseMatrix::zeros(self.n, c);
        for i in 0..self.n {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let out_row = out.row_mut(i);
            for idx in lo..hi {
                let j = self.col_idx[idx];
                let w = self.values[idx];
                let x_row = x.row(j);
                for (o, v) in out_row.iter_mut().zip(x_row.iter()) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// self^T * x for dense x (n x c); scatter over CSR entries.
    pub fn t_matmul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(IgnnError::shape("spmm_t", (self.n, self.n), x.shape()));
        }
        let c = x.cols();
        let mut out = DenseMatrix::zeros(self.n, c);
        for i in 0..self.n {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let x_row: Vec<f64> = x.row(i).to_vec();
            for idx in lo..hi {
                let j = self.col_idx[idx];
                let w = self.values[idx];
                let out_row = out.row_mut(j);
                for (o, v) in out_row.iter_mut().zip(x_row.iter()) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.triples() {
            out.set(i, j, w);
        }
        out
    }
}

/// Symmetric GCN normalization: D^{-1/2} (A + I) D^{-1/2} with
/// D_ii = 1 + sum_j A_ij. Requires nonnegative weights.
///
/// The output is symmetric for symmetric input and its spectral norm is
/// bounded by 1, which is what the contraction argument needs.
pub fn normalize_adjacency(a: &SparseGraph) -> Result<SparseGraph> {
    if a.values.iter().any(|&w| w < 0.0) {
        return Err(IgnnError::Domain(
            "normalize_adjacency requires nonnegative weights".into(),
        ));
    }
    let n = a.n;
    let mut degree = vec![1.0f64; n];
    for i in 0..n {
        for (_, w) in a.row_entries(i) {
            degree[i] += w;
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triples = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        let mut diag = 1.0; // the added self-loop
        for (j, w) in a.row_entries(i) {
            if j == i {
                diag += w;
            } else {
                triples.push((i, j, w * inv_sqrt[i] * inv_sqrt[j]));
            }
        }
        triples.push((i, i, diag * inv_sqrt[i] * inv_sqrt[i]));
    }
    SparseGraph::from_triples(n, &triples)
}

/// Row-normalize so each row sums to 1 (rows with zero sum are kept empty).
pub fn row_normalize(a: &SparseGraph) -> SparseGraph {
    let sums = a.row_sums();
    let mut triples = Vec::with_capacity(a.nnz());
    for i in 0..a.n {
        let s = sums[i];
        if s == 0.0 {
            continue;
        }
        for (j, w) in a.row_entries(i) {
            triples.push((i, j, w / s));
        }
    }
    SparseGraph::from_triples(a.n, &triples).expect("row_normalize preserves validity")
}

/// Deterministic top-weight sparsification.
///
/// Keeps all self-loops plus the top ceil(keep_fraction * |off-diagonal
/// entries|) off-diagonal entries ranked by weight, ties broken by
/// (row, col) lexicographic order. The result is re-symmetrized by keeping
/// an edge if either direction survived. `seed` is accepted for interface
/// stability with randomized sparsifiers; the top-weight rule ignores it.
pub fn sparsify(a_hat: &SparseGraph, keep_fraction: f64, _seed: u64) -> Result<SparseGraph> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(IgnnError::Domain(format!(
            "keep_fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let mut off: Vec<(usize, usize, f64)> = Vec::new();
    let mut loops: Vec<(usize, usize, f64)> = Vec::new();
    for (i, j, w) in a_hat.triples() {
        if i == j {
            loops.push((i, j, w));
        } else {
            off.push((i, j, w));
        }
    }
    let keep = (keep_fraction * off.len() as f64).ceil() as usize;
    off.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });
    let survivors: std::collections::BTreeSet<(usize, usize)> = off
        .iter()
        .take(keep)
        .map(|&(i, j, _)| (i, j))
        .collect();
    let mut triples = loops;
    for &(i, j, w) in &off {
        if survivors.contains(&(i, j)) || survivors.contains(&(j, i)) {
            triples.push((i, j, w));
        }
    }
    SparseGraph::from_triples(a_hat.n, &triples)
}

/// Power-iteration estimate of the largest singular value.
///
/// Nondecreasing in the iteration budget; returns 0 for the zero matrix.
pub fn spectral_norm_estimate(a: &SparseGraph, iterations: usize) -> f64 {
    if iterations == 0 {
        return 0.0;
    }
    power_iteration(a.n, iterations, |v| {
        // w = A^T (A v)
        let mut av = vec![0.0; a.n];
        for i in 0..a.n {
            av[i] = a.row_entries(i).map(|(j, w)| w * v[j]).sum();
        }
        let mut w = vec![0.0; a.n];
        for i in 0..a.n {
            for (j, val) in a.row_entries(i) {
                w[j] += val * av[i];
            }
        }
        w
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path3() -> SparseGraph {
        SparseGraph::from_triples(
            3,
            &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn normalize_single_isolated_node() {
        let a = SparseGraph::empty(1);
        let norm = normalize_adjacency(&a).unwrap();
        assert_relative_eq!(norm.get(0, 0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_two_node_edge() {
        let a = SparseGraph::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let norm = normalize_adjacency(&a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(norm.get(i, j), 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn normalize_empty_graph_is_identity() {
        let a = SparseGraph::empty(5);
        let norm = normalize_adjacency(&a).unwrap();
        assert_eq!(norm.nnz(), 5);
        for i in 0..5 {
            assert_relative_eq!(norm.get(i, i), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_negative_weights() {
        let a = SparseGraph::from_triples(2, &[(0, 1, -1.0), (1, 0, -1.0)]).unwrap();
        assert!(matches!(
            normalize_adjacency(&a),
            Err(IgnnError::Domain(_))
        ));
    }

    #[test]
    fn normalized_spectral_norm_at_most_one() {
        let norm = normalize_adjacency(&path3()).unwrap();
        assert!(norm.is_symmetric(1e-12));
        let s = spectral_norm_estimate(&norm, 300);
        assert!(s <= 1.0 + 1e-9, "spectral norm {s}");
    }

    #[test]
    fn sparsify_full_fraction_is_identity_on_edges() {
        let norm = normalize_adjacency(&path3()).unwrap();
        let s = sparsify(&norm, 1.0, 0).unwrap();
        assert_eq!(s, norm);
    }

    #[test]
    fn sparsify_keeps_max_weight_pair_and_loops() {
        // Path 0-1 (strong), 1-2 (weak).
        let a = SparseGraph::from_triples(
            3,
            &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.3), (2, 1, 0.3)],
        )
        .unwrap();
        let with_loops = {
            let mut t = a.triples();
            for i in 0..3 {
                t.push((i, i, 0.9));
            }
            SparseGraph::from_triples(3, &t).unwrap()
        };
        // 4 off-diagonal entries; fraction 0.25 keeps ceil(1) = 1 entry, then
        // re-symmetrization restores its mirror.
        let s = sparsify(&with_loops, 0.25, 0).unwrap();
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(s.get(1, 2), 0.0);
        for i in 0..3 {
            assert_eq!(s.get(i, i), 0.9);
        }
    }

    #[test]
    fn sparsify_tie_break_is_deterministic() {
        // Star with equal weights; repeated calls must agree.
        let mut triples = vec![(0usize, 0usize, 1.0f64)];
        for leaf in 1..5 {
            triples.push((0, leaf, 0.2));
            triples.push((leaf, 0, 0.2));
            triples.push((leaf, leaf, 1.0));
        }
        let star = SparseGraph::from_triples(5, &triples).unwrap();
        let s1 = sparsify(&star, 0.25, 1).unwrap();
        let s2 = sparsify(&star, 0.25, 2).unwrap();
        assert_eq!(s1, s2);
        // Lexicographic order keeps the smallest (row, col) entries:
        // (0,1) and (0,2) survive, their mirrors return via re-symmetrization.
        assert!(s1.get(0, 1) > 0.0 && s1.get(1, 0) > 0.0);
        assert!(s1.get(0, 2) > 0.0);
        assert_eq!(s1.get(0, 3), 0.0);
        assert_eq!(s1.get(0, 4), 0.0);
        assert!(s1.nnz() < star.nnz());
    }

    #[test]
    fn spectral_norm_diag_exact() {
        let d = SparseGraph::from_triples(2, &[(0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert_relative_eq!(spectral_norm_estimate(&d, 200), 2.0, epsilon = 1e-9);
        assert_relative_eq!(
            spectral_norm_estimate(&SparseGraph::identity(4), 10),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(spectral_norm_estimate(&SparseGraph::empty(3), 10), 0.0);
    }

    #[test]
    fn duplicate_edge_rejected() {
        assert!(SparseGraph::from_triples(2, &[(0, 1, 1.0), (0, 1, 2.0)]).is_err());
        assert!(SparseGraph::from_triples(2, &[(0, 3, 1.0)]).is_err());
    }

    #[test]
    fn spmm_matches_dense() {
        let g = path3();
        let x = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let sparse = g.matmul_dense(&x).unwrap();
        let dense = g.to_dense().matmul(&x).unwrap();
        assert_eq!(sparse, dense);
        let sparse_t = g.t_matmul_dense(&x).unwrap();
        let dense_t = g.to_dense().t_matmul(&x).unwrap();
        assert_eq!(sparse_t, dense_t);
    }
}
