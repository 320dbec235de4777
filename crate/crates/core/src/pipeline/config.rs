use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centers::TrainConfig;
use crate::cluster::KMeansConfig;
use crate::error::{Error, Result};
use crate::filter::{default_k_hat, DEFAULT_TAU};
use crate::repr::DEFAULT_GAMMA;
use crate::vocab::{default_k_tilde, SAMPLES_PER_FINE_CENTER};

pub const SEED_ENV: &str = "LAIC_SEED";

/// Input artifacts. Views are stacked EMB1 files with `V·N` rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub x: PathBuf,
    /// Corpus embeddings; names come from the JSON sidecar.
    pub w: PathBuf,
    pub strong: Option<PathBuf>,
    pub weak: Option<PathBuf>,
    /// Ground truth, used only for evaluation.
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KTildeMode {
    /// `3K` when the average class holds fewer than 300 samples, else `⌈N/300⌉`.
    #[default]
    Auto,
    SmallClasses,
    Large,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: InputPaths,
    pub out_dir: PathBuf,
    /// Number of clusters.
    pub k: usize,
    /// Nouns kept per fine center.
    pub theta: usize,
    pub gamma: f64,
    /// Neighbors scored by the filter; 10, or 1 when `k > 50`, if unset.
    pub k_hat: Option<usize>,
    pub tau: f64,
    pub k_tilde_mode: KTildeMode,
    /// Used only with `k_tilde_mode = "fixed"`.
    pub k_tilde: Option<usize>,
    pub seed: u64,
    pub kmeans: KMeansConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: InputPaths::default(),
            out_dir: PathBuf::from("laic-out"),
            k: 0,
            theta: 2,
            gamma: DEFAULT_GAMMA,
            k_hat: None,
            tau: DEFAULT_TAU,
            k_tilde_mode: KTildeMode::Auto,
            k_tilde: None,
            seed: 0,
            kmeans: KMeansConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths are
    /// resolved against the config file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.x);
        fix(&mut self.paths.w);
        for p in [&mut self.paths.strong, &mut self.paths.weak, &mut self.paths.labels]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
    }

    /// Applies `LAIC_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.theta == 0 {
            return Err(Error::Config("theta must be at least 1".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.k_hat == Some(0) {
            return Err(Error::Config("k_hat must be at least 1".into()));
        }
        if self.k_tilde_mode == KTildeMode::Fixed && !self.k_tilde.is_some_and(|k| k > 0) {
            return Err(Error::Config("k_tilde_mode = fixed needs k_tilde >= 1".into()));
        }
        self.train.validate()?;
        let mut required = vec![("x", &self.paths.x), ("w", &self.paths.w)];
        for (name, p) in [
            ("strong", &self.paths.strong),
            ("weak", &self.paths.weak),
            ("labels", &self.paths.labels),
        ] {
            if let Some(p) = p {
                required.push((name, p));
            }
        }
        for (name, p) in required {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(format!("input path `{name}` is not set")));
            }
            if !p.is_file() {
                return Err(Error::Config(format!("input `{name}` not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn effective_k_hat(&self) -> usize {
        self.k_hat.unwrap_or_else(|| default_k_hat(self.k))
    }

    pub fn effective_k_tilde(&self, n: usize) -> usize {
        match self.k_tilde_mode {
            KTildeMode::Auto => default_k_tilde(n, self.k, n < self.k * SAMPLES_PER_FINE_CENTER),
            KTildeMode::SmallClasses => default_k_tilde(n, self.k, true),
            KTildeMode::Large => default_k_tilde(n, self.k, false),
            KTildeMode::Fixed => self.k_tilde.unwrap_or(1),
        }
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        self.kmeans.with_seed(self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
