//! Flat key=value configuration shared by the library and the CLI.
//!
//! Unknown keys are rejected so typos fail loudly. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{IgnnError, Result};
use crate::neural::{NeuralSolverConfig, UpdateRule};
use crate::train::loss::{Lambda1Schedule, SolverLossWeights};

/// Everything the training loops and the CLI need, with defaults matching
/// the small-dataset regime (nhid 128, lr 0.002, K 10).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    // Loss weights.
    pub lambda1: f64,
    pub lambda1_schedule: Lambda1Schedule,
    pub lambda1_warmup: bool,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda3_decay: bool,
    // Optimization.
    pub lr: f64,
    /// Learning rate for solver training; defaults to `lr`.
    pub solver_lr: Option<f64>,
    pub epochs: usize,
    pub solver_steps: usize,
    pub t1: usize,
    pub t2: usize,
    pub warmup: usize,
    pub dropout: f64,
    // Model.
    pub nhid: usize,
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub activation: String,
    // Solver.
    pub m: usize,
    pub k: usize,
    pub p: usize,
    pub beta_max: f64,
    pub keep_fraction: f64,
    pub update_rule: UpdateRule,
    pub init_hidden: Option<usize>,
    pub predictor_hidden: usize,
    // Data / reproducibility.
    pub seed: u64,
    pub dataset: String,
    pub chain_count: usize,
    pub chain_len: usize,
    pub feat_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda1_schedule: Lambda1Schedule::LinearIncreasing,
            lambda1_warmup: true,
            lambda2: 5.0,
            lambda3: 1e-4,
            lambda3_decay: true,
            lr: 0.002,
            solver_lr: None,
            epochs: 100,
            solver_steps: 200,
            t1: 0, // 0 means "derive as ceil(0.07 * t2)"
            t2: 25,
            warmup: 0,
            dropout: 0.5,
            nhid: 128,
            kappa: 0.95,
            tol: 3e-6,
            max_iter: 300,
            activation: "relu".into(),
            m: 5,
            k: 10,
            p: 8,
            beta_max: 1.5,
            keep_fraction: 0.25,
            update_rule: UpdateRule::ClassicAa,
            init_hidden: None,
            predictor_hidden: 16,
            seed: 0,
            dataset: "synth-citeseer".into(),
            chain_count: 4,
            chain_len: 6,
            feat_dim: 8,
        }
    }
}

impl TrainConfig {
    pub fn solver_config(&self) -> NeuralSolverConfig {
        NeuralSolverConfig {
            m: self.m,
            k_unroll: self.k,
            p: self.p,
            beta_max: self.beta_max,
            keep_fraction: self.keep_fraction,
            update_rule: self.update_rule,
            init_hidden: self.init_hidden,
            predictor_hidden: self.predictor_hidden,
        }
    }

    pub fn loss_weights(&self) -> SolverLossWeights {
        SolverLossWeights {
            lambda1: self.lambda1,
            lambda1_schedule: self.lambda1_schedule,
            lambda1_warmup: self.lambda1_warmup,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda3_decay: self.lambda3_decay,
        }
    }

    pub fn solver_learning_rate(&self) -> f64 {
        self.solver_lr.unwrap_or(self.lr)
    }

    /// T1 solver-tuning steps per alternating cycle; the default derives
    /// 7% of T2, within the 4-10% band.
    pub fn effective_t1(&self) -> usize {
        if self.t1 > 0 {
            self.t1
        } else {
            ((0.07 * self.t2 as f64).ceil() as usize).max(1)
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                IgnnError::Config(format!("line {}: expected key=value, got '{line}'", idx + 1))
            })?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| IgnnError::Config(format!("line {}: {e}", idx + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| IgnnError::Config(format!("bad value '{value}' for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "on" => Ok(true),
                "false" | "0" | "off" => Ok(false),
                _ => Err(IgnnError::Config(format!("bad flag '{value}' for {key}"))),
            }
        }
        match key {
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda1_schedule" => self.lambda1_schedule = Lambda1Schedule::parse(value)?,
            "lambda1_warmup" => self.lambda1_warmup = flag(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "lambda3" => self.lambda3 = num(key, value)?,
            "lambda3_decay" => self.lambda3_decay = flag(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "solver_lr" => self.solver_lr = Some(num(key, value)?),
            "epochs" => self.epochs = num(key, value)?,
            "solver_steps" => self.solver_steps = num(key, value)?,
            "T1" | "t1" => self.t1 = num(key, value)?,
            "T2" | "t2" => self.t2 = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "nhid" => self.nhid = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "activation" => self.activation = value.to_string(),
            "m" => self.m = num(key, value)?,
            "K" | "k" => self.k = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "beta_max" => self.beta_max = num(key, value)?,
            "keep_fraction" => self.keep_fraction = num(key, value)?,
            "update_rule" => self.update_rule = UpdateRule::parse(value)?,
            "init_hidden" => self.init_hidden = Some(num(key, value)?),
            "predictor_hidden" => self.predictor_hidden = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "chain_count" => self.chain_count = num(key, value)?,
            "chain_len" => self.chain_len = num(key, value)?,
            "feat_dim" => self.feat_dim = num(key, value)?,
            other => return Err(IgnnError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(IgnnError::Config(format!("kappa {} outside (0, 1)", self.kappa)));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(IgnnError::Config(format!(
                "keep_fraction {} outside (0, 1]",
                self.keep_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(IgnnError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.m == 0 {
            return Err(IgnnError::Config("m must be >= 1".into()));
        }
        match self.activation.as_str() {
            "relu" | "tanh" => {}
            other => return Err(IgnnError::Config(format!("unknown activation '{other}'"))),
        }
        Ok(())
    }

    /// Canonical key=value rendering (sorted keys); hashing this gives a
    /// stable config fingerprint.
    pub fn canonical_string(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("lambda1", self.lambda1.to_string());
        map.insert("lambda1_schedule", self.lambda1_schedule.as_str().into());
        map.insert("lambda1_warmup", self.lambda1_warmup.to_string());
        map.insert("lambda2", self.lambda2.to_string());
        map.insert("lambda3", self.lambda3.to_string());
        map.insert("lambda3_decay", self.lambda3_decay.to_string());
        map.insert("lr", self.lr.to_string());
        if let Some(slr) = self.solver_lr {
            map.insert("solver_lr", slr.to_string());
        }
        map.insert("epochs", self.epochs.to_string());
        map.insert("solver_steps", self.solver_steps.to_string());
        map.insert("t1", self.t1.to_string());
        map.insert("t2", self.t2.to_string());
        map.insert("warmup", self.warmup.to_string());
        map.insert("dropout", self.dropout.to_string());
        map.insert("nhid", self.nhid.to_string());
        map.insert("kappa", self.kappa.to_string());
        map.insert("tol", self.tol.to_string());
        map.insert("max_iter", self.max_iter.to_string());
        map.insert("activation", self.activation.clone());
        map.insert("m", self.m.to_string());
        map.insert("k", self.k.to_string());
        map.insert("p", self.p.to_string());
        map.insert("beta_max", self.beta_max.to_string());
        map.insert("keep_fraction", self.keep_fraction.to_string());
        map.insert("update_rule", self.update_rule.as_str().into());
        if let Some(h) = self.init_hidden {
            map.insert("init_hidden", h.to_string());
        }
        map.insert("predictor_hidden", self.predictor_hidden.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("dataset", self.dataset.clone());
        map.insert("chain_count", self.chain_count.to_string());
        map.insert("chain_len", self.chain_len.to_string());
        map.insert("feat_dim", self.feat_dim.to_string());
        let mut out = String::new();
        for (k, v) in map {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }
}
