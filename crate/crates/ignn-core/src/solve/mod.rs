//! The solver contract shared by Picard, Anderson and the learned solver:
//! every solver consumes a fixed-point map and produces a [`SolveTrace`].

pub mod anderson;
pub mod picard;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{IgnnError, Result};
use crate::tensor::matrix::DenseMatrix;

pub use anderson::{aa_weights, anderson_solve, AaWeights, AndersonSolver};
pub use picard::{picard_solve, PicardSolver};

/// A fixed-point map z -> f(z) over n x d' matrices.
pub trait FixedPointMap {
    fn shape(&self) -> (usize, usize);
    fn eval(&self, z: &DenseMatrix) -> Result<DenseMatrix>;
}

/// Relative residual ||f(z) - z||_F / max(||z||_F, 1e-12).
pub fn relative_residual(fz: &DenseMatrix, z: &DenseMatrix) -> Result<f64> {
    Ok(fz.sub(z)?.frob_norm() / z.frob_norm().max(1e-12))
}

/// Per-iterate record: index, relative residual and elapsed wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub residual: f64,
    pub wall_time_s: f64,
}

/// Everything a solver run reports. `final_z` is the iterate with the
/// smallest recorded residual; when the tolerance was never reached the
/// `converged` flag stays false.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub solver: String,
    pub iterates: Vec<IterateRecord>,
    pub final_z: DenseMatrix,
    pub final_residual: f64,
    pub converged: bool,
    pub f_evals: usize,
    /// Mixing weights per update step (step k produced iterate k+1).
    pub alphas: Vec<Vec<f64>>,
    /// Mixing coefficient per update step.
    pub betas: Vec<f64>,
    /// Steps where the least-squares weights fell back to uniform.
    pub aa_fallbacks: Vec<usize>,
}

impl SolveTrace {
    pub fn new(solver: impl Into<String>) -> Self {
        SolveTrace {
            solver: solver.into(),
            iterates: Vec::new(),
            final_z: DenseMatrix::zeros(0, 0),
            final_residual: f64::INFINITY,
            converged: false,
            f_evals: 0,
            alphas: Vec::new(),
            betas: Vec::new(),
            aa_fallbacks: Vec::new(),
        }
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.iterates.last().map(|r| r.residual)
    }

    /// Residual at iterate k, if recorded.
    pub fn residual_at(&self, k: usize) -> Option<f64> {
        self.iterates.iter().find(|r| r.k == k).map(|r| r.residual)
    }

    /// f evaluations consumed up to and including iterate k. Every solver
    /// spends one evaluation per recorded iterate.
    pub fn f_evals_at(&self, k: usize) -> usize {
        k + 1
    }

    /// First iterate whose residual is at or below `target`, with its
    /// evaluation cost.
    pub fn first_reaching(&self, target: f64) -> Option<(usize, usize)> {
        self.iterates
            .iter()
            .find(|r| r.residual <= target)
            .map(|r| (r.k, self.f_evals_at(r.k)))
    }

    /// Export as CSV with header `k,residual,wall_time_s,f_evals,beta,alpha_json`.
    /// Iterate 0 has no mixing coefficients; its beta/alpha fields are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    /// Render as a CSV string.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| IgnnError::Domain(format!("csv utf8: {e}")))
    }

    fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer
            .write_record(["k", "residual", "wall_time_s", "f_evals", "beta", "alpha_json"])
            .map_err(csv_err)?;
        for record in &self.iterates {
            let step = record.k.checked_sub(1);
            let beta = step
                .and_then(|s| self.betas.get(s))
                .map(|b| b.to_string())
                .unwrap_or_default();
            let alpha = step
                .and_then(|s| self.alphas.get(s))
                .map(|a| serde_json::to_string(a).expect("json array"))
                .unwrap_or_default();
            writer
                .write_record([
                    record.k.to_string(),
                    record.residual.to_string(),
                    record.wall_time_s.to_string(),
                    self.f_evals_at(record.k).to_string(),
                    beta,
                    alpha,
                ])
                .map_err(csv_err)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Parse a CSV produced by [`SolveTrace::write_csv`]. Only the exported
    /// columns are recovered; the final iterate is not reconstructed.
    pub fn read_csv(path: &Path) -> Result<SolveTrace> {
        Self::read_csv_from(csv::Reader::from_path(path).map_err(csv_err)?)
    }

    /// Parse from CSV text.
    pub fn from_csv_string(text: &str) -> Result<SolveTrace> {
        Self::read_csv_from(csv::Reader::from_reader(text.as_bytes()))
    }

    fn read_csv_from<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<SolveTrace> {
        let mut trace = SolveTrace::new("csv");
        for row in reader.records() {
            let row = row.map_err(csv_err)?;
            let parse = |idx: usize, what: &str| -> Result<f64> {
                row.get(idx)
                    .ok_or_else(|| IgnnError::Domain(format!("missing column {what}")))?
                    .parse::<f64>()
                    .map_err(|e| IgnnError::Domain(format!("bad {what}: {e}")))
            };
            let k = parse(0, "k")? as usize;
            trace.iterates.push(IterateRecord {
                k,
                residual: parse(1, "residual")?,
                wall_time_s: parse(2, "wall_time_s")?,
            });
            if let Some(beta) = row.get(4) {
                if !beta.is_empty() {
                    trace.betas.push(beta.parse().map_err(|e| {
                        IgnnError::Domain(format!("bad beta: {e}"))
                    })?);
                }
            }
            if let Some(alpha) = row.get(5) {
                if !alpha.is_empty() {
                    let parsed: Vec<f64> = serde_json::from_str(alpha)
                        .map_err(|e| IgnnError::Domain(format!("bad alpha_json: {e}")))?;
                    trace.alphas.push(parsed);
                }
            }
        }
        trace.f_evals = trace.iterates.len();
        Ok(trace)
    }
}

fn csv_err(e: csv::Error) -> IgnnError {
    IgnnError::Domain(format!("csv: {e}"))
}

/// Shared bookkeeping for iterative solvers: tracks best iterate, residual
/// history and wall time.
pub(crate) struct TraceBuilder {
    trace: SolveTrace,
    best_residual: f64,
    started: Instant,
}

impl TraceBuilder {
    pub fn new(solver: &str) -> Self {
        TraceBuilder {
            trace: SolveTrace::new(solver),
            best_residual: f64::INFINITY,
            started: Instant::now(),
        }
    }

    /// Record iterate `k` with its residual; keeps the best z seen.
    pub fn record(&mut self, k: usize, residual: f64, z: &DenseMatrix) {
        self.trace.iterates.push(IterateRecord {
            k,
            residual,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        });
        if residual < self.best_residual {
            self.best_residual = residual;
            self.trace.final_z = z.clone();
            self.trace.final_residual = residual;
        }
    }

    pub fn push_step(&mut self, alpha: Vec<f64>, beta: f64, fallback: bool) {
        if fallback {
            self.trace.aa_fallbacks.push(self.trace.alphas.len());
        }
        self.trace.alphas.push(alpha);
        self.trace.betas.push(beta);
    }

    pub fn finish(mut self, converged: bool, f_evals: usize) -> SolveTrace {
        self.trace.converged = converged;
        self.trace.f_evals = f_evals;
        self.trace
    }
}

/// Marker names used in reports.
pub struct SolverKindName;

impl SolverKindName {
    pub const PICARD: &'static str = "picard";
    pub const ANDERSON: &'static str = "anderson";
    pub const NEURAL: &'static str = "neural";
}

/// Object-safe solver interface over a prepared fixed-point problem.
pub trait EquilibriumSolver {
    fn name(&self) -> &str;

    /// Solve starting from `z0`. Learned solvers may derive their own start
    /// and ignore `z0` (documented on the implementation).
    fn solve(
        &self,
        problem: &crate::model::FixedPointProblem<'_>,
        z0: &DenseMatrix,
        tol: f64,
        max_iter: usize,
    ) -> Result<SolveTrace>;
}

impl EquilibriumSolver for PicardSolver {
    fn name(&self) -> &str {
        SolverKindName::PICARD
    }

    fn solve(
        &self,
        problem: &crate::model::FixedPointProblem<'_>,
        z0: &DenseMatrix,
        tol: f64,
        max_iter: usize,
    ) -> Result<SolveTrace> {
        picard_solve(problem, z0, tol, max_iter)
    }
}

impl EquilibriumSolver for AndersonSolver {
    fn name(&self) -> &str {
        SolverKindName::ANDERSON
    }

    fn solve(
        &self,
        problem: &crate::model::FixedPointProblem<'_>,
        z0: &DenseMatrix,
        tol: f64,
        max_iter: usize,
    ) -> Result<SolveTrace> {
        anderson_solve(problem, z0, self.m, self.beta, tol, max_iter)
    }
}

