//! End-to-end orchestration over checkpointed stages.

mod config;
mod stages;

pub use config::{InputPaths, KTildeMode, PipelineConfig, SEED_ENV};
pub use stages::{
    run_assign, run_cluster, run_eval, run_filter, run_repr, run_stage, run_train, run_vocab, CenterInit, Checkpoints,
    ClusterSummary, EvalSummary, FilterSummary, Manifest, ReprSummary, TrainSummary, VocabSummary, CANDIDATES, CENTERS,
    CENTERS_EXPORT, C_EXPORT, C_MATRIX, FILTER_STATE, FINAL_LABELS, FINE_CENTERS, INIT_CENTERS, KMEANS_X_LABELS,
    LOSS_TRACE, METRICS, PSEUDO_LABELS, SELECTION, STAGES,
};

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centers::TrainConfig;
use crate::cluster::{KMeansConfig, NMI_NORMALIZATION};
use crate::error::{Error, Result, StageContext};
use crate::filter::FilterGain;
use crate::io::{read_json, read_matrix_f64, read_vocab, write_bytes, write_json};
use crate::report::{export_heatmap, nearest_noun_csv, nearest_noun_report, CorrelationGap, NearestNoun};

pub const REPORT_FILE: &str = "report.json";
pub const NEAREST_NOUNS: &str = "report/nearest_nouns.csv";
pub const HEATMAP: &str = "report/c_heatmap.png";
const LOCK_FILE: &str = ".lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another run (remove {} if it is stale)",
                out_dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Hyperparameters as actually applied, including automatic choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveHyperparameters {
    pub k: usize,
    pub theta: usize,
    pub gamma: f64,
    pub k_hat: usize,
    pub tau: f64,
    pub tau_effective: f64,
    pub k_tilde_mode: KTildeMode,
    pub k_tilde: usize,
    pub candidates: usize,
    pub seed: u64,
    pub nmi_normalization: String,
    pub kmeans: KMeansConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Present when ground truth was supplied.
    pub metrics: Option<Checkpoints>,
    pub filter: FilterSummary,
    pub filter_gain: Option<FilterGain>,
    pub correlation_gap: Option<CorrelationGap>,
    /// Relative to the output directory.
    pub loss_trace: String,
    pub fallback_classes: Vec<usize>,
    pub nearest_nouns: Vec<NearestNoun>,
    pub hyperparameters: EffectiveHyperparameters,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each stage manifest.
    pub manifests: BTreeMap<String, String>,
}

fn input_digests(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    out.insert("x".into(), stages::sha256_file(&cfg.paths.x)?);
    out.insert("w".into(), stages::sha256_file(&cfg.paths.w)?);
    for (name, p) in [
        ("strong", &cfg.paths.strong),
        ("weak", &cfg.paths.weak),
        ("labels", &cfg.paths.labels),
    ] {
        if let Some(p) = p {
            out.insert(name.into(), stages::sha256_file(p)?);
        }
    }
    Ok(out)
}

/// Assembles the run report from persisted artifacts and writes
/// `report.json`, the nearest-noun table and, with ground truth, the
/// heatmap of `C`.
pub fn build_report(cfg: &PipelineConfig) -> Result<RunReport> {
    let out = &cfg.out_dir;
    let vocab: VocabSummary = read_json(&out.join("vocab/summary.json"))?;
    let filter: FilterSummary = read_json(&out.join("filter/summary.json"))?;
    let train: TrainSummary = read_json(&out.join("train/summary.json"))?;
    let truth = stages::load_truth(cfg)?;
    let eval: Option<EvalSummary> = match truth {
        Some(_) => Some(read_json(&out.join(METRICS))?),
        None => None,
    };

    let centers = stages::load_centers(cfg)?;
    let u = read_vocab(out.join(CANDIDATES))?;
    let mut nearest = nearest_noun_report(&centers, &u)?;
    if let Some(e) = &eval {
        for row in &mut nearest {
            row.matched_class = e.metrics.final_centers.matching.get(row.center).copied();
        }
    }
    let class_names = stages::load_class_names(cfg);
    let dir = out.join("report");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_bytes(
        &out.join(NEAREST_NOUNS),
        nearest_noun_csv(&nearest, class_names.as_deref()).as_bytes(),
    )?;
    if let Some(truth) = &truth {
        let (c, _) = read_matrix_f64(out.join(C_MATRIX))?;
        export_heatmap(c.view(), truth, &out.join(HEATMAP))?;
    }

    let mut manifests = BTreeMap::new();
    for stage in STAGES {
        let path = out.join(stage).join("manifest.json");
        if path.is_file() {
            manifests.insert(stage.to_string(), stages::sha256_file(&path)?);
        }
    }
    let report = RunReport {
        metrics: eval.as_ref().map(|e| e.metrics.clone()),
        filter: filter.clone(),
        filter_gain: eval.as_ref().map(|e| e.filter_gain.clone()),
        correlation_gap: eval.as_ref().map(|e| e.correlation_gap),
        loss_trace: LOSS_TRACE.to_string(),
        fallback_classes: train.fallback_classes,
        nearest_nouns: nearest,
        hyperparameters: EffectiveHyperparameters {
            k: cfg.k,
            theta: cfg.theta,
            gamma: cfg.gamma,
            k_hat: filter.k_hat,
            tau: cfg.tau,
            tau_effective: filter.tau_effective,
            k_tilde_mode: cfg.k_tilde_mode,
            k_tilde: vocab.k_tilde,
            candidates: vocab.candidates,
            seed: cfg.seed,
            nmi_normalization: NMI_NORMALIZATION.to_string(),
            kmeans: cfg.kmeans_config(),
            train: cfg.train_config(),
        },
        inputs: input_digests(cfg)?,
        manifests,
    };
    write_json(&report, &out.join(REPORT_FILE))?;
    Ok(report)
}

/// Validates `cfg`, runs every stage in order and writes the report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let has_truth = cfg.paths.labels.is_some();
    for stage in STAGES {
        if stage == "eval" && !has_truth {
            continue;
        }
        log::info!("stage {stage}");
        run_stage(cfg, stage)?;
    }
    build_report(cfg).stage("report")
}
