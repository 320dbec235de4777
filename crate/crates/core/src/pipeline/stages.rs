//! Checkpointed stages. Each stage reads its inputs from the configured
//! files and from earlier stage directories, and writes `<out>/<stage>/`
//! with a manifest of SHA-256 digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::centers::{assign, init_centers, train_centers, write_trace_csv, SemanticCenters};
use crate::cluster::{evaluate, kmeans, MetricsReport};
use crate::error::{Error, Result, StageContext};
use crate::filter::{build_state, filter_gain_report, knn_graph, FilterGain, PseudoLabelState, SelectionExport};
use crate::io::{
    l2_normalize_rows, read_embedding, read_json, read_labels, read_matrix_f64, read_vocab, sidecar_path,
    write_embedding, write_json, write_labels, write_matrix_f64, write_vocab, EmbeddingMatrix, LabelVector, ViewBundle,
    VocabSet,
};
use crate::linalg::{argmax, normalize_rows};
use crate::report::{row_correlation_gap, CorrelationGap};
use crate::repr::{ridge_representation, RidgeSolver};
use crate::vocab::{compute_fine_centers, select_candidates};

pub const STAGES: [&str; 7] = ["vocab", "repr", "cluster", "filter", "train", "assign", "eval"];

pub const CANDIDATES: &str = "vocab/candidates.emb";
pub const FINE_CENTERS: &str = "vocab/fine_centers.emb8";
pub const C_MATRIX: &str = "repr/c.emb8";
pub const C_EXPORT: &str = "repr/c.emb";
pub const PSEUDO_LABELS: &str = "cluster/pseudo.lab";
pub const KMEANS_X_LABELS: &str = "cluster/kmeans_x.lab";
pub const FILTER_STATE: &str = "filter/state.json";
pub const SELECTION: &str = "filter/selection.json";
pub const INIT_CENTERS: &str = "train/init_centers.emb8";
pub const CENTERS: &str = "train/centers.emb8";
pub const CENTERS_EXPORT: &str = "train/centers.emb";
pub const LOSS_TRACE: &str = "train/loss_trace.csv";
pub const FINAL_LABELS: &str = "assign/final.lab";
pub const METRICS: &str = "eval/metrics.json";

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    /// File name within the stage directory → SHA-256.
    pub files: BTreeMap<String, String>,
}

fn write_manifest(out: &Path, stage: &str) -> Result<()> {
    let dir = out.join(stage);
    let mut files = BTreeMap::new();
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "manifest.json" || !entry.path().is_file() {
            continue;
        }
        files.insert(name, sha256_file(&entry.path())?);
    }
    write_json(
        &Manifest {
            stage: stage.to_string(),
            files,
        },
        &dir.join("manifest.json"),
    )
}

/// Removes stale output of a stage before it is rewritten.
fn fresh_stage_dir(out: &Path, stage: &str) -> Result<PathBuf> {
    let dir = out.join(stage);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub(crate) fn load_x(cfg: &PipelineConfig) -> Result<EmbeddingMatrix> {
    let x = read_embedding(&cfg.paths.x)?;
    if x.is_normalized() {
        Ok(x)
    } else {
        log::info!("normalizing image features from {}", cfg.paths.x.display());
        l2_normalize_rows(&x)
    }
}

fn load_w(cfg: &PipelineConfig) -> Result<VocabSet> {
    let w = read_vocab(&cfg.paths.w)?;
    if w.embeddings().is_normalized() {
        Ok(w)
    } else {
        VocabSet::new(w.names().to_vec(), l2_normalize_rows(w.embeddings())?, w.source())
    }
}

fn load_views(cfg: &PipelineConfig, x: EmbeddingMatrix) -> Result<ViewBundle> {
    let read = |p: &Option<PathBuf>| -> Result<Option<EmbeddingMatrix>> { p.as_ref().map(read_embedding).transpose() };
    let strong = read(&cfg.paths.strong)?;
    let weak = read(&cfg.paths.weak)?;
    ViewBundle::from_stacked(x, strong.as_ref(), weak.as_ref())
}

pub(crate) fn load_truth(cfg: &PipelineConfig) -> Result<Option<LabelVector>> {
    cfg.paths.labels.as_ref().map(read_labels).transpose()
}

/// Class names from an optional `{"names": [...]}` sidecar next to the labels.
pub(crate) fn load_class_names(cfg: &PipelineConfig) -> Option<Vec<String>> {
    #[derive(Deserialize)]
    struct Names {
        names: Vec<String>,
    }
    let path = sidecar_path(cfg.paths.labels.as_ref()?);
    path.is_file()
        .then(|| read_json::<Names>(&path).ok().map(|n| n.names))
        .flatten()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSummary {
    pub k_tilde: usize,
    pub corpus_size: usize,
    pub candidates: usize,
}

pub fn run_vocab(cfg: &PipelineConfig) -> Result<VocabSummary> {
    let out = &cfg.out_dir;
    let x = load_x(cfg)?;
    let w = load_w(cfg)?;
    let k_tilde = cfg.effective_k_tilde(x.rows());
    let fine = compute_fine_centers(&x, k_tilde, &cfg.kmeans_config())?;
    let selection = select_candidates(&w, &fine, cfg.theta)?;
    let dir = fresh_stage_dir(out, "vocab")?;
    write_vocab(
        &selection.union,
        out.join(CANDIDATES),
        Some(selection.provenance.clone()),
    )?;
    write_matrix_f64(fine.centers.view(), false, out.join(FINE_CENTERS))?;
    let summary = VocabSummary {
        k_tilde,
        corpus_size: w.len(),
        candidates: selection.len(),
    };
    write_json(&summary, &dir.join("summary.json"))?;
    write_manifest(out, "vocab")?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprSummary {
    pub rows: usize,
    pub candidates: usize,
    pub dim: usize,
    pub gamma: f64,
    pub normal_equation_residual: f64,
}

pub fn run_repr(cfg: &PipelineConfig) -> Result<ReprSummary> {
    let out = &cfg.out_dir;
    let x = load_x(cfg)?;
    let u = read_vocab(out.join(CANDIDATES))?;
    let r = ridge_representation(&x, &u, cfg.gamma)?;
    let residual = r.normal_equation_residual(x.to_f64().view(), u.embeddings().to_f64().view());
    let dir = fresh_stage_dir(out, "repr")?;
    write_matrix_f64(r.c.view(), false, out.join(C_MATRIX))?;
    write_embedding(&EmbeddingMatrix::from_f64(r.c.view(), false)?, out.join(C_EXPORT))?;
    let (rows, candidates, dim) = r.source_dims;
    let summary = ReprSummary {
        rows,
        candidates,
        dim,
        gamma: r.gamma,
        normal_equation_residual: residual,
    };
    write_json(&summary, &dir.join("summary.json"))?;
    write_manifest(out, "repr")?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub inertia_c: f64,
    pub iterations_c: usize,
    pub inertia_x: f64,
    pub iterations_x: usize,
}

/// K-means on the rows of `C` gives the pseudo-labels; K-means on `X` is the
/// baseline.
pub fn run_cluster(cfg: &PipelineConfig) -> Result<ClusterSummary> {
    let out = &cfg.out_dir;
    let (c, _) = read_matrix_f64(out.join(C_MATRIX))?;
    let x = load_x(cfg)?;
    let on_c = kmeans(c.view(), cfg.k, &cfg.kmeans_config())?;
    let on_x = kmeans(x.to_f64().view(), cfg.k, &cfg.kmeans_config())?;
    let dir = fresh_stage_dir(out, "cluster")?;
    write_labels(&on_c.labels, out.join(PSEUDO_LABELS))?;
    write_labels(&on_x.labels, out.join(KMEANS_X_LABELS))?;
    let summary = ClusterSummary {
        inertia_c: on_c.inertia,
        iterations_c: on_c.iterations,
        inertia_x: on_x.inertia,
        iterations_x: on_x.iterations,
    };
    write_json(&summary, &dir.join("summary.json"))?;
    write_manifest(out, "cluster")?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub k_hat: usize,
    pub tau: f64,
    pub tau_effective: f64,
    pub selected: usize,
    pub total: usize,
    pub fraction_selected: f64,
}

impl FilterSummary {
    fn of(state: &PseudoLabelState) -> Self {
        let total = state.labels.len();
        Self {
            k_hat: state.neighbors.k_hat,
            tau: state.tau,
            tau_effective: state.tau_effective,
            selected: state.selected.len(),
            total,
            fraction_selected: state.selected.len() as f64 / total as f64,
        }
    }
}

pub fn run_filter(cfg: &PipelineConfig) -> Result<FilterSummary> {
    let out = &cfg.out_dir;
    let (c, _) = read_matrix_f64(out.join(C_MATRIX))?;
    let pseudo = read_labels(out.join(PSEUDO_LABELS))?;
    let k_hat = cfg.effective_k_hat();
    if k_hat >= c.nrows() {
        return Err(Error::KHatTooLarge { k_hat, n: c.nrows() });
    }
    let neighbors = knn_graph(c.view(), k_hat)?;
    let state = build_state(pseudo, neighbors, cfg.tau)?;
    let dir = fresh_stage_dir(out, "filter")?;
    write_json(&state, &out.join(FILTER_STATE))?;
    write_json(&SelectionExport::from(&state), &out.join(SELECTION))?;
    let summary = FilterSummary::of(&state);
    write_json(&summary, &dir.join("summary.json"))?;
    write_manifest(out, "filter")?;
    Ok(summary)
}

/// Fallback initial center for every pseudo-class: the fine center whose
/// ridge representation is closest in cosine to the class's mean row of `C`.
pub(crate) fn fallback_centers(
    c: &Array2<f64>,
    pseudo: &LabelVector,
    fine: &Array2<f64>,
    u: &VocabSet,
    gamma: f64,
) -> Result<Array2<f64>> {
    let solver = RidgeSolver::new(u.embeddings().to_f64().view(), gamma)?;
    let fine_c = normalize_rows(solver.project(fine.view())?.view());
    let k = pseudo.num_classes();
    let mut centroids = Array2::<f64>::zeros((k, c.ncols()));
    for (i, &l) in pseudo.values().iter().enumerate() {
        let mut row = centroids.row_mut(l);
        row += &c.row(i);
    }
    let centroids = normalize_rows(centroids.view());
    let mut out = Array2::<f64>::zeros((k, fine.ncols()));
    for (class, centroid) in centroids.axis_iter(Axis(0)).enumerate() {
        let best = argmax(fine_c.dot(&centroid).iter().copied());
        out.row_mut(class).assign(&fine.row(best));
    }
    Ok(out)
}

/// How the centers were initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterInit {
    /// Per-class means of the high-quality set.
    LabeledMeans,
    /// Seeded random unit vectors; used when the supervised term is switched
    /// off, so that no pseudo-label reaches the centers.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub init: CenterInit,
    pub steps: usize,
    /// Pseudo-classes that had no high-quality member and were initialized
    /// from the fallback.
    pub fallback_classes: Vec<usize>,
    pub max_norm_error: f64,
}

pub fn run_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let out = &cfg.out_dir;
    let x = load_x(cfg)?;
    let state: PseudoLabelState = read_json(&out.join(FILTER_STATE))?;
    let (c, _) = read_matrix_f64(out.join(C_MATRIX))?;
    let (fine, _) = read_matrix_f64(out.join(FINE_CENTERS))?;
    let u = read_vocab(out.join(CANDIDATES))?;
    let train_cfg = cfg.train_config();

    let labeled: Vec<(usize, usize)> = state.selected.iter().map(|&i| (i, state.labels.values()[i])).collect();
    let mut covered = vec![false; state.labels.num_classes()];
    for &(_, l) in &labeled {
        covered[l] = true;
    }
    let fallback_classes: Vec<usize> = (0..covered.len()).filter(|&k| !covered[k]).collect();
    let fallback = if fallback_classes.is_empty() {
        None
    } else {
        log::warn!("pseudo-classes {fallback_classes:?} have no high-quality member; using fine-center fallback");
        Some(fallback_centers(&c, &state.labels, &fine, &u, cfg.gamma)?)
    };
    let xf = x.to_f64();
    let (init_kind, init) = if train_cfg.switches.sup {
        let init = init_centers(
            xf.view(),
            &labeled,
            &state.labels,
            fallback.as_ref().map(|f| f.view()),
            train_cfg.temperature,
        )?;
        (CenterInit::LabeledMeans, init)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        let s = Array2::from_shape_fn((state.labels.num_classes(), xf.ncols()), |_| rng.sample(StandardNormal));
        (CenterInit::Random, SemanticCenters::new(s, train_cfg.temperature)?)
    };
    let views = load_views(cfg, x)?;
    let outcome = train_centers(&views, &labeled, &state.unselected, init.clone(), &train_cfg)?;
    let centers = outcome.centers;
    let max_norm_error = centers.max_norm_error();
    if max_norm_error > crate::centers::UNIT_TOLERANCE {
        return Err(Error::InvariantViolation(format!(
            "center norm drifted by {max_norm_error}"
        )));
    }
    let dir = fresh_stage_dir(out, "train")?;
    write_matrix_f64(init.matrix(), true, out.join(INIT_CENTERS))?;
    write_matrix_f64(centers.matrix(), true, out.join(CENTERS))?;
    write_embedding(
        &EmbeddingMatrix::from_f64(centers.matrix(), true)?,
        out.join(CENTERS_EXPORT),
    )?;
    write_trace_csv(&outcome.trace, &out.join(LOSS_TRACE))?;
    let summary = TrainSummary {
        init: init_kind,
        steps: centers.step(),
        fallback_classes,
        max_norm_error,
    };
    write_json(&summary, &dir.join("summary.json"))?;
    write_manifest(out, "train")?;
    Ok(summary)
}

pub(crate) fn load_centers(cfg: &PipelineConfig) -> Result<SemanticCenters> {
    let (s, _) = read_matrix_f64(cfg.out_dir.join(CENTERS))?;
    SemanticCenters::new(s, cfg.train.temperature)
}

pub fn run_assign(cfg: &PipelineConfig) -> Result<LabelVector> {
    let out = &cfg.out_dir;
    let x = load_x(cfg)?;
    let centers = load_centers(cfg)?;
    let labels = assign(x.to_f64().view(), &centers)?;
    fresh_stage_dir(out, "assign")?;
    write_labels(&labels, out.join(FINAL_LABELS))?;
    write_manifest(out, "assign")?;
    Ok(labels)
}

/// Metrics at the three checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub kmeans_x: MetricsReport,
    pub no_train: MetricsReport,
    #[serde(rename = "final")]
    pub final_centers: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: Checkpoints,
    pub filter_gain: FilterGain,
    pub correlation_gap: CorrelationGap,
}

/// Needs ground-truth labels.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalSummary> {
    let out = &cfg.out_dir;
    let truth = load_truth(cfg)?.ok_or_else(|| Error::Config("evaluation needs `paths.labels`".into()))?;
    let pseudo = read_labels(out.join(PSEUDO_LABELS))?;
    let kmeans_x = read_labels(out.join(KMEANS_X_LABELS))?;
    let final_labels = read_labels(out.join(FINAL_LABELS))?;
    let state: PseudoLabelState = read_json(&out.join(FILTER_STATE))?;
    let (c, _) = read_matrix_f64(out.join(C_MATRIX))?;
    let summary = EvalSummary {
        metrics: Checkpoints {
            kmeans_x: evaluate(&kmeans_x, &truth)?,
            no_train: evaluate(&pseudo, &truth)?,
            final_centers: evaluate(&final_labels, &truth)?,
        },
        filter_gain: filter_gain_report(&state, &truth)?,
        correlation_gap: row_correlation_gap(c.view(), &truth)?,
    };
    fresh_stage_dir(out, "eval")?;
    write_json(&summary, &out.join(METRICS))?;
    write_manifest(out, "eval")?;
    Ok(summary)
}

/// Runs one named stage.
pub fn run_stage(cfg: &PipelineConfig, stage: &str) -> Result<()> {
    let name: &'static str = STAGES
        .iter()
        .find(|s| **s == stage)
        .ok_or_else(|| Error::Config(format!("unknown stage `{stage}`")))?;
    let result = match name {
        "vocab" => run_vocab(cfg).map(drop),
        "repr" => run_repr(cfg).map(drop),
        "cluster" => run_cluster(cfg).map(drop),
        "filter" => run_filter(cfg).map(drop),
        "train" => run_train(cfg).map(drop),
        "assign" => run_assign(cfg).map(drop),
        _ => run_eval(cfg).map(drop),
    };
    result.stage(name)
}
