//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use normkit_core::aggregation::{AggregationStrategy, LatentMode};

use crate::failure::Failure;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Cohort file, relative to the config file's directory.
    pub cohort: PathBuf,
    /// Model checkpoint, relative to the config file's directory.
    pub model: PathBuf,
    /// Report directory, relative to the config file's directory.
    pub out: PathBuf,
    pub seed: u64,
    pub strategy: AggregationStrategy,
    pub latent_dim: usize,
    pub latent_dims: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub alpha: f64,
    pub fdr_q: f64,
    pub z_threshold: f64,
    pub mode: LatentMode,
    pub n_controls: usize,
    pub n_holdout: usize,
    pub n_per_stage: [usize; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cohort: PathBuf::from("cohort.csv"),
            model: PathBuf::from("model.ckpt"),
            out: PathBuf::from("out"),
            seed: 7,
            strategy: AggregationStrategy::Mopoe,
            latent_dim: 10,
            latent_dims: vec![5, 10, 15, 20],
            epochs: 500,
            lr: 1e-5,
            batch_size: 64,
            hidden: vec![64, 32],
            alpha: 0.001,
            fdr_q: 0.05,
            z_threshold: 1.96,
            mode: LatentMode::Mean,
            n_controls: 248,
            n_holdout: 48,
            n_per_stage: [60, 60, 60],
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, Failure> {
    raw.parse()
        .map_err(|_| Failure::config(format!("invalid value {raw:?} for {key}")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, Failure> {
    raw.split(',').map(|v| value(key, v.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Failure::config(format!("line {}: expected key = value", no + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !seen.insert(key.to_string()) {
                return Err(Failure::config(format!("line {}: duplicate key {key}", no + 1)));
            }
            cfg.set(key, raw)
                .map_err(|e| Failure::config(format!("line {}: {}", no + 1, e.message)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<(), Failure> {
        match key {
            "cohort" => self.cohort = PathBuf::from(raw),
            "model" => self.model = PathBuf::from(raw),
            "out" => self.out = PathBuf::from(raw),
            "seed" => self.seed = value(key, raw)?,
            "strategy" => self.strategy = value(key, raw)?,
            "latent_dim" => self.latent_dim = value(key, raw)?,
            "latent_dims" => self.latent_dims = list(key, raw)?,
            "epochs" => self.epochs = value(key, raw)?,
            "lr" => self.lr = value(key, raw)?,
            "batch_size" => self.batch_size = value(key, raw)?,
            "hidden" => self.hidden = list(key, raw)?,
            "alpha" => self.alpha = value(key, raw)?,
            "fdr_q" => self.fdr_q = value(key, raw)?,
            "z_threshold" => self.z_threshold = value(key, raw)?,
            "mode" => self.mode = value(key, raw)?,
            "n_controls" => self.n_controls = value(key, raw)?,
            "n_holdout" => self.n_holdout = value(key, raw)?,
            "n_per_stage" => {
                let v: Vec<usize> = list(key, raw)?;
                self.n_per_stage = v
                    .try_into()
                    .map_err(|_| Failure::config("n_per_stage needs three counts"))?;
            }
            _ => return Err(Failure::config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |m: &str| Err(Failure::config(m.to_string()));
        if self.latent_dim == 0 || self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return bad("latent dimensions must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.fdr_q > 0.0 && self.fdr_q <= 1.0) {
            return bad("fdr_q must lie in (0, 1]");
        }
        if !(self.z_threshold > 0.0) {
            return bad("z_threshold must be positive");
        }
        Ok(())
    }

    /// Effective values, one `key=value` line each, in a fixed order.
    pub fn echo(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "config.cohort={}", self.cohort.display());
        let _ = writeln!(out, "config.model={}", self.model.display());
        let _ = writeln!(out, "config.seed={}", self.seed);
        let _ = writeln!(out, "config.strategy={}", self.strategy);
        let _ = writeln!(out, "config.latent_dim={}", self.latent_dim);
        let _ = writeln!(out, "config.latent_dims={}", join(&self.latent_dims));
        let _ = writeln!(out, "config.epochs={}", self.epochs);
        let _ = writeln!(out, "config.lr={:e}", self.lr);
        let _ = writeln!(out, "config.batch_size={}", self.batch_size);
        let _ = writeln!(out, "config.hidden={}", join(&self.hidden));
        let _ = writeln!(out, "config.alpha={:e}", self.alpha);
        let _ = writeln!(out, "config.fdr_q={:e}", self.fdr_q);
        let _ = writeln!(out, "config.z_threshold={:e}", self.z_threshold);
        let _ = writeln!(out, "config.mode={}", self.mode);
        let _ = writeln!(out, "config.n_controls={}", self.n_controls);
        let _ = writeln!(out, "config.n_holdout={}", self.n_holdout);
        let _ = writeln!(out, "config.n_per_stage={}", join(&self.n_per_stage));
        out
    }
}
