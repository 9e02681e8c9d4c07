use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ot::{OtMode, OtSettings};

/// Component toggles for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Drop the syntactic masks (every head sees every token).
    pub no_sm: bool,
    /// Drop the syntactic attention channel (β fixed at 0).
    pub no_ga: bool,
    /// Drop the transport channel (β fixed at 1).
    pub no_ot: bool,
    /// Drop the contrastive term (λ = 0).
    pub no_cl: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Embedding width; taken from the data when unset.
    pub dim: Option<usize>,
    pub heads: usize,
    pub layers: usize,
    /// Per-head distance thresholds; `1..=heads` when unset.
    pub thresholds: Option<Vec<usize>>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub ot_mode: OtMode,
    pub beta_init: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablations: Ablations,
    pub row_normalize_fused: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: None,
            heads: 5,
            layers: 6,
            thresholds: None,
            eps_min: 0.3,
            eps_max: 3.0,
            sinkhorn_iters: 50,
            sinkhorn_tol: 1e-9,
            ot_mode: OtMode::CostAware,
            beta_init: 0.5,
            lambda: 0.1,
            temperature: 0.1,
            dropout: 0.1,
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 42,
            ablations: Ablations::default(),
            row_normalize_fused: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    pub fn thresholds(&self) -> Vec<usize> {
        self.thresholds
            .clone()
            .unwrap_or_else(|| crate::syngraph::default_thresholds(self.heads))
    }

    /// λ after the contrastive ablation.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablations.no_cl {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn ot_settings(&self) -> OtSettings {
        OtSettings {
            mode: self.ot_mode,
            max_iters: self.sinkhorn_iters,
            tol: self.sinkhorn_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == Some(0) {
            return fail("dim must be positive");
        }
        if self.heads == 0 || self.layers == 0 || self.batch_size == 0 || self.sinkhorn_iters == 0 {
            return fail("heads, layers, batch_size and sinkhorn_iters must be positive");
        }
        if let Some(t) = &self.thresholds {
            if t.len() != self.heads {
                return fail("thresholds must list one value per head");
            }
            if t.contains(&0) || t.windows(2).any(|w| w[1] < w[0]) {
                return fail("thresholds must be positive and non-decreasing");
            }
        }
        if !(self.eps_min > 0.0 && self.eps_max >= self.eps_min) {
            return fail("require 0 < eps_min <= eps_max");
        }
        if !(self.sinkhorn_tol >= 0.0) {
            return fail("sinkhorn_tol must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.beta_init) {
            return fail("beta_init must lie in [0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return fail("lambda must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dim" => self.dim = Some(parse(key, value)?),
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "thresholds" => {
                self.thresholds = Some(
                    value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?,
                )
            }
            "eps_min" => self.eps_min = parse(key, value)?,
            "eps_max" => self.eps_max = parse(key, value)?,
            "sinkhorn_iters" => self.sinkhorn_iters = parse(key, value)?,
            "sinkhorn_tol" => self.sinkhorn_tol = parse(key, value)?,
            "ot_mode" => self.ot_mode = value.parse()?,
            "beta_init" => self.beta_init = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "no_sm" => self.ablations.no_sm = parse(key, value)?,
            "no_ga" => self.ablations.no_ga = parse(key, value)?,
            "no_ot" => self.ablations.no_ot = parse(key, value)?,
            "no_cl" => self.ablations.no_cl = parse(key, value)?,
            "row_normalize_fused" => self.row_normalize_fused = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = self.dim {
            let _ = writeln!(s, "dim = {d}");
        }
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "layers = {}", self.layers);
        if let Some(t) = &self.thresholds {
            let list: Vec<String> = t.iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "thresholds = {}", list.join(","));
        }
        let _ = writeln!(s, "eps_min = {:?}", self.eps_min);
        let _ = writeln!(s, "eps_max = {:?}", self.eps_max);
        let _ = writeln!(s, "sinkhorn_iters = {}", self.sinkhorn_iters);
        let _ = writeln!(s, "sinkhorn_tol = {:?}", self.sinkhorn_tol);
        let _ = writeln!(s, "ot_mode = {}", self.ot_mode);
        let _ = writeln!(s, "beta_init = {:?}", self.beta_init);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "temperature = {:?}", self.temperature);
        let _ = writeln!(s, "dropout = {:?}", self.dropout);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "no_sm = {}", self.ablations.no_sm);
        let _ = writeln!(s, "no_ga = {}", self.ablations.no_ga);
        let _ = writeln!(s, "no_ot = {}", self.ablations.no_ot);
        let _ = writeln!(s, "no_cl = {}", self.ablations.no_cl);
        let _ = writeln!(s, "row_normalize_fused = {}", self.row_normalize_fused);
        s
    }
}
