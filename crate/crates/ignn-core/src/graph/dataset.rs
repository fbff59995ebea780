//! Dataset ingestion and synthetic graph generation.
//!
//! On-disk layout (all UTF-8 text):
//! - edge file: one undirected edge per line, `src<TAB>dst[<TAB>weight]`,
//!   0-based indices, weight defaults to 1.0, `#` starts a comment line;
//! - feature file: one node per line, tab-separated decimals, the line
//!   number is the node id;
//! - label file: one integer class id per line;
//! - splits file: three lines `train:`, `val:`, `test:` each followed on the
//!   same line by space-separated node indices.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IgnnError, Result};
use crate::graph::sparse::SparseGraph;
use crate::tensor::matrix::DenseMatrix;

/// A node-classification dataset: raw (unnormalized) adjacency, features,
/// labels and index splits. Callers normalize the graph explicitly.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.features.rows() != n || self.labels.len() != n {
            return Err(IgnnError::Domain(format!(
                "dataset inconsistent: {n} nodes, {} feature rows, {} labels",
                self.features.rows(),
                self.labels.len()
            )));
        }
        for &l in &self.labels {
            if l >= self.num_classes {
                return Err(IgnnError::Domain(format!(
                    "label {l} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for idx in self.train.iter().chain(&self.val).chain(&self.test) {
            if *idx >= n {
                return Err(IgnnError::Domain(format!("split index {idx} out of range")));
            }
            if !seen.insert(*idx) {
                return Err(IgnnError::Domain(format!(
                    "split index {idx} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> IgnnError {
    IgnnError::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Load a dataset from the four component files. The adjacency is the raw
/// symmetrized A (each undirected edge expanded to both directions);
/// normalization is an explicit separate step.
pub fn load_dataset(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    splits_path: &Path,
) -> Result<Dataset> {
    // Features first: the node count comes from here.
    let mut features_rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in read_lines(features_path)?.iter().enumerate() {
        let row: Vec<f64> = line
            .split('\t')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    parse_err(features_path, lineno + 1, format!("bad decimal '{tok}'"))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = features_rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    features_path,
                    lineno + 1,
                    format!("ragged row: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        features_rows.push(row);
    }
    let n = features_rows.len();
    let d = features_rows.first().map_or(0, |r| r.len());
    let mut feat_data = Vec::with_capacity(n * d);
    for row in &features_rows {
        feat_data.extend_from_slice(row);
    }
    let features = DenseMatrix::from_vec(n, d, feat_data)?;

    // Edges.
    let mut triples: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in read_lines(edges_path)?.iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split('\t').collect();
        if toks.len() != 2 && toks.len() != 3 {
            return Err(parse_err(
                edges_path,
                lineno + 1,
                "expected 'src<TAB>dst[<TAB>weight]'",
            ));
        }
        let src: usize = toks[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(edges_path, lineno + 1, format!("bad index '{}'", toks[0])))?;
        let dst: usize = toks[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(edges_path, lineno + 1, format!("bad index '{}'", toks[1])))?;
        let weight: f64 = if toks.len() == 3 {
            toks[2].trim().parse().map_err(|_| {
                parse_err(edges_path, lineno + 1, format!("bad weight '{}'", toks[2]))
            })?
        } else {
            1.0
        };
        if src >= n || dst >= n {
            return Err(parse_err(
                edges_path,
                lineno + 1,
                format!("node index out of range ({src} or {dst} >= {n})"),
            ));
        }
        let key = (src.min(dst), src.max(dst));
        if !seen.insert(key) {
            return Err(parse_err(
                edges_path,
                lineno + 1,
                format!("duplicate edge {src} {dst}"),
            ));
        }
        triples.push((src, dst, weight));
        if src != dst {
            triples.push((dst, src, weight));
        }
    }
    let graph = SparseGraph::from_triples(n, &triples)?;

    // Labels.
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in read_lines(labels_path)?.iter().enumerate() {
        let label: i64 = line.trim().parse().map_err(|_| {
            parse_err(labels_path, lineno + 1, format!("unknown label '{line}'"))
        })?;
        if label < 0 {
            return Err(parse_err(
                labels_path,
                lineno + 1,
                format!("unknown label '{line}'"),
            ));
        }
        labels.push(label as usize);
    }
    if labels.len() != n {
        return Err(parse_err(
            labels_path,
            labels.len() + 1,
            format!("{} labels for {n} nodes", labels.len()),
        ));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);

    // Splits.
    let lines = read_lines(splits_path)?;
    let parse_split = |prefix: &str, idx: usize| -> Result<Vec<usize>> {
        let line = lines
            .get(idx)
            .ok_or_else(|| parse_err(splits_path, idx + 1, format!("missing '{prefix}' line")))?;
        let rest = line
            .strip_prefix(prefix)
            .ok_or_else(|| parse_err(splits_path, idx + 1, format!("expected '{prefix}'")))?;
        rest.split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| parse_err(splits_path, idx + 1, format!("bad index '{tok}'")))
            })
            .collect()
    };
    let train = parse_split("train:", 0)?;
    let val = parse_split("val:", 1)?;
    let test = parse_split("test:", 2)?;

    let dataset = Dataset {
        graph,
        features,
        labels,
        num_classes,
        train,
        val,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Load from a directory with the canonical file names `edges.tsv`,
/// `features.tsv`, `labels.txt`, `splits.txt`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(
        &dir.join("edges.tsv"),
        &dir.join("features.tsv"),
        &dir.join("labels.txt"),
        &dir.join("splits.txt"),
    )
}

/// Write a dataset in the directory layout read by [`load_dataset_dir`].
/// Floats are printed with round-trip precision so save/load is lossless.
pub fn save_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for (i, j, w) in dataset.graph.triples() {
        if i > j {
            continue; // one line per undirected edge
        }
        writeln!(edges, "{i}\t{j}\t{w}").expect("string write");
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = String::new();
    for i in 0..dataset.n() {
        let row: Vec<String> = dataset.features.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(feats, "{}", row.join("\t")).expect("string write");
    }
    fs::write(dir.join("features.tsv"), feats)?;

    let labels: String = dataset
        .labels
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.join("labels.txt"), labels)?;

    let fmt = |ids: &[usize]| {
        ids.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let splits = format!(
        "train: {}\nval: {}\ntest: {}\n",
        fmt(&dataset.train),
        fmt(&dataset.val),
        fmt(&dataset.test)
    );
    fs::write(dir.join("splits.txt"), splits)?;
    Ok(())
}

/// Disjoint path graphs where the label of every node in a chain is a bit
/// carried only by the first node's features, so solving the task requires
/// propagating information at least `chain_len` hops.
///
/// Deterministic for a fixed seed.
pub fn synth_chain(num_chains: usize, chain_len: usize, d: usize, seed: u64) -> Result<Dataset> {
    if chain_len < 2 {
        return Err(IgnnError::Domain(format!(
            "chain_len {chain_len} must be at least 2"
        )));
    }
    if num_chains == 0 || d == 0 {
        return Err(IgnnError::Domain("empty chain dataset".into()));
    }
    let n = num_chains * chain_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    let mut labels = vec![0usize; n];
    let mut features = DenseMatrix::zeros(n, d);
    for chain in 0..num_chains {
        // First two chains get fixed bits so both classes always appear.
        let bit = match chain {
            0 => false,
            1 => true,
            _ => rng.gen_bool(0.5),
        };
        let base = chain * chain_len;
        for offset in 0..chain_len {
            let node = base + offset;
            labels[node] = bit as usize;
            for jj in 0..d {
                features.set(node, jj, rng.gen_range(-0.1..0.1));
            }
            if offset == 0 {
                let marker = if bit { 3.0 } else { -3.0 };
                features.set(node, 0, marker + features.get(node, 0));
            }
            if offset + 1 < chain_len {
                triples.push((node, node + 1, 1.0));
                triples.push((node + 1, node, 1.0));
            }
        }
    }
    let graph = SparseGraph::from_triples(n, &triples)?;
    // Round-robin node split: heads and tails land in every split.
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for node in 0..n {
        match node % 5 {
            3 => val.push(node),
            4 => test.push(node),
            _ => train.push(node),
        }
    }
    let dataset = Dataset {
        graph,
        features,
        labels,
        num_classes: 2,
        train,
        val,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Planted-community random graph: `num_classes` blocks, class centroids in
/// feature space with uniform noise of half-width `noise`, `avg_degree`
/// expected edges per node with a homophily bias. Split sizes follow
/// `train_n`/`val_n`, remainder to test.
///
/// Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn synth_blocks(
    n: usize,
    d: usize,
    num_classes: usize,
    avg_degree: f64,
    noise: f64,
    train_n: usize,
    val_n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 || num_classes == 0 {
        return Err(IgnnError::Domain("empty block dataset".into()));
    }
    if train_n + val_n > n {
        return Err(IgnnError::Domain(format!(
            "splits {train_n}+{val_n} exceed {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();

    let centroids = DenseMatrix::random_uniform(num_classes, d, 1.0, &mut rng);
    let mut features = DenseMatrix::zeros(n, d);
    for i in 0..n {
        let c = labels[i];
        for j in 0..d {
            features.set(i, j, centroids.get(c, j) + rng.gen_range(-noise..noise));
        }
    }

    let target_edges = ((avg_degree * n as f64) / 2.0).round() as usize;
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    let mut attempts = 0usize;
    while seen.len() < target_edges && attempts < target_edges * 50 {
        attempts += 1;
        let a = rng.gen_range(0..n);
        // Homophily bias: 70% of edges stay within the class.
        let b = if rng.gen_bool(0.7) {
            let same: usize = rng.gen_range(0..n / num_classes.max(1));
            (same * num_classes + labels[a]).min(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            triples.push((key.0, key.1, 1.0));
            triples.push((key.1, key.0, 1.0));
        }
    }
    let graph = SparseGraph::from_triples(n, &triples)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let train = order[..train_n].to_vec();
    let val = order[train_n..train_n + val_n].to_vec();
    let test = order[train_n + val_n..].to_vec();

    let dataset = Dataset {
        graph,
        features,
        labels,
        num_classes,
        train,
        val,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Ring communities: one ring per class (uniform degrees, class-pure
/// neighborhoods) plus `chords` random cross edges, with centroid features
/// and uniform noise of half-width `noise`.
///
/// Deterministic for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn synth_rings(
    n: usize,
    d: usize,
    num_classes: usize,
    chords: usize,
    noise: f64,
    train_n: usize,
    val_n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n < 3 * num_classes || d == 0 || num_classes == 0 {
        return Err(IgnnError::Domain("ring dataset too small".into()));
    }
    if train_n + val_n > n {
        return Err(IgnnError::Domain(format!(
            "splits {train_n}+{val_n} exceed {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Contiguous class blocks, each wired as a ring.
    let base = n / num_classes;
    let mut labels = vec![0usize; n];
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    let mut start = 0usize;
    for c in 0..num_classes {
        let size = if c + 1 == num_classes { n - start } else { base };
        for offset in 0..size {
            let node = start + offset;
            labels[node] = c;
            let next = start + (offset + 1) % size;
            let key = (node.min(next), node.max(next));
            if node != next && seen.insert(key) {
                triples.push((key.0, key.1, 1.0));
                triples.push((key.1, key.0, 1.0));
            }
        }
        start += size;
    }
    // Random chords across the whole graph.
    let mut added = 0usize;
    let mut attempts = 0usize;
    while added < chords && attempts < chords * 100 {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            triples.push((key.0, key.1, 1.0));
            triples.push((key.1, key.0, 1.0));
            added += 1;
        }
    }
    let graph = SparseGraph::from_triples(n, &triples)?;

    let centroids = DenseMatrix::random_uniform(num_classes, d, 1.0, &mut rng);
    let mut features = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            features.set(i, j, centroids.get(labels[i], j) + rng.gen_range(-noise..noise));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let train = order[..train_n].to_vec();
    let val = order[train_n..train_n + val_n].to_vec();
    let test = order[train_n + val_n..].to_vec();

    let dataset = Dataset {
        graph,
        features,
        labels,
        num_classes,
        train,
        val,
        test,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Citeseer-scale synthetic stand-in: 3327 nodes, ~4730 undirected edges,
/// 6 classes, compact 64-dim features, 360 train / 500 val / 1000 test.
/// Ring communities with sparse chords keep the equilibrium largely
/// feature-predictable, as in citation graphs.
pub fn synth_citeseer_like(seed: u64) -> Result<Dataset> {
    let n = 3327;
    let mut ds = synth_rings(n, 64, 6, 4732 - n, 0.05, 360, 500, seed)?;
    ds.test.truncate(1000);
    Ok(ds)
}

/// Tiny 3-node path fixture shared by solver and predictor tests:
/// 2 edges, 2 features, 2 classes.
pub fn fixture_path3() -> Dataset {
    let graph = SparseGraph::from_triples(
        3,
        &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)],
    )
    .expect("fixture triples");
    let features = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, -0.5]]);
    Dataset {
        graph,
        features,
        labels: vec![0, 1, 0],
        num_classes: 2,
        train: vec![0, 1],
        val: vec![],
        test: vec![2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(dir: &Path) {
        let mut f = fs::File::create(dir.join("edges.tsv")).unwrap();
        writeln!(f, "# tiny fixture").unwrap();
        writeln!(f, "0\t1").unwrap();
        writeln!(f, "1\t2\t0.5").unwrap();
        fs::write(dir.join("features.tsv"), "1.0\t0.0\n0.0\t1.0\n0.5\t0.5\n").unwrap();
        fs::write(dir.join("labels.txt"), "0\n1\n0\n").unwrap();
        fs::write(dir.join("splits.txt"), "train: 0 1\nval:\ntest: 2\n").unwrap();
    }

    #[test]
    fn load_three_node_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let ds = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.graph.get(1, 0), 1.0);
        assert_eq!(ds.graph.get(1, 2), 0.5);
        assert_eq!(ds.graph.get(2, 1), 0.5);
    }

    #[test]
    fn duplicate_edge_line_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("edges.tsv"), "0\t1\n1\t0\n").unwrap();
        let err = load_dataset_dir(dir.path()).unwrap_err();
        match err {
            IgnnError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_edge_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("edges.tsv"), "0\t7\n").unwrap();
        assert!(matches!(
            load_dataset_dir(dir.path()),
            Err(IgnnError::Parse { .. })
        ));
    }

    #[test]
    fn ragged_features_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        fs::write(dir.path().join("features.tsv"), "1.0\t0.0\n0.5\n1.0\t1.0\n").unwrap();
        assert!(matches!(
            load_dataset_dir(dir.path()),
            Err(IgnnError::Parse { .. })
        ));
    }

    #[test]
    fn save_load_round_trip_is_lossless() {
        let ds = synth_chain(2, 3, 4, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset_dir(&ds, dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(ds.graph, back.graph);
        assert_eq!(ds.features, back.features);
        assert_eq!(ds.labels, back.labels);
        assert_eq!(ds.train, back.train);
        assert_eq!(ds.val, back.val);
        assert_eq!(ds.test, back.test);
    }

    #[test]
    fn synth_chain_basics() {
        let ds = synth_chain(1, 2, 3, 0).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.graph.nnz(), 2);

        // Labels constant within each chain.
        let ds = synth_chain(4, 6, 8, 5).unwrap();
        for chain in 0..4 {
            let base = chain * 6;
            let l = ds.labels[base];
            for off in 1..6 {
                assert_eq!(ds.labels[base + off], l);
            }
        }

        // Determinism.
        let a = synth_chain(3, 4, 5, 99).unwrap();
        let b = synth_chain(3, 4, 5, 99).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.graph, b.graph);

        assert!(synth_chain(2, 1, 3, 0).is_err());
    }

    #[test]
    fn synth_blocks_shapes_and_determinism() {
        let a = synth_blocks(60, 8, 3, 4.0, 0.5, 20, 10, 7).unwrap();
        assert_eq!(a.n(), 60);
        assert_eq!(a.train.len(), 20);
        assert_eq!(a.val.len(), 10);
        assert_eq!(a.test.len(), 30);
        let b = synth_blocks(60, 8, 3, 4.0, 0.5, 20, 10, 7).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.train, b.train);
    }
}
