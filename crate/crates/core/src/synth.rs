//! Planted-cluster benchmarks with known ground truth.
//!
//! Classes are orthonormal directions; images are a direction plus isotropic
//! Gaussian noise (per-coordinate standard deviation `noise`), normalized.
//! The noun corpus holds nouns aligned with each class direction plus random
//! distractors. Augmented views are the image plus further isotropic noise,
//! renormalized.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    sidecar_path, stack_views, write_embedding, write_json, write_labels, write_vocab, EmbeddingMatrix, LabelVector,
    ViewBundle, VocabSet,
};
use crate::linalg::normalize_rows;
use crate::pipeline::InputPaths;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k: usize,
    pub n_per: usize,
    pub d: usize,
    pub nouns_per_class: usize,
    pub distractors: usize,
    pub noise: f64,
    /// Extra directions, orthogonal to every class direction and absent from
    /// the corpus, along which images vary with standard deviation
    /// `nuisance_scale · noise`.
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
    pub noun_noise: f64,
    pub strong_views: usize,
    pub weak_views: usize,
    pub sigma_strong: f64,
    pub sigma_weak: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 5,
            n_per: 200,
            d: 32,
            nouns_per_class: 10,
            distractors: 100,
            noise: 0.3,
            nuisance_dims: 4,
            nuisance_scale: 2.0,
            noun_noise: 0.02,
            strong_views: 4,
            weak_views: 4,
            sigma_strong: 0.1,
            sigma_weak: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub x: EmbeddingMatrix,
    pub w: VocabSet,
    pub truth: LabelVector,
    pub views: ViewBundle,
    pub directions: Array2<f64>,
    /// Planted class of every corpus noun; `None` for distractors.
    pub noun_class: Vec<Option<usize>>,
}

impl SyntheticData {
    /// Writes `x.emb`, `w.emb` (+ sidecar), stacked `strong.emb` and
    /// `weak.emb`, and `truth.lab` with a class-name sidecar.
    pub fn write(&self, dir: &Path) -> Result<InputPaths> {
        let paths = InputPaths {
            x: dir.join("x.emb"),
            w: dir.join("w.emb"),
            strong: (!self.views.strong().is_empty()).then(|| dir.join("strong.emb")),
            weak: (!self.views.weak().is_empty()).then(|| dir.join("weak.emb")),
            labels: Some(dir.join("truth.lab")),
        };
        write_embedding(&self.x, &paths.x)?;
        write_vocab(&self.w, &paths.w, None)?;
        if let Some(p) = &paths.strong {
            write_embedding(&stack_views(self.views.strong())?, p)?;
        }
        if let Some(p) = &paths.weak {
            write_embedding(&stack_views(self.views.weak())?, p)?;
        }
        let truth_path = dir.join("truth.lab");
        write_labels(&self.truth, &truth_path)?;
        let names: Vec<String> = (0..self.truth.num_classes()).map(|c| format!("class{c}")).collect();
        write_json(&serde_json::json!({ "names": names }), &sidecar_path(&truth_path))?;
        Ok(paths)
    }
}

/// `k` orthonormal directions in `R^d` (Gram–Schmidt on Gaussian draws).
pub fn orthonormal_directions(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut dirs = Array2::<f64>::zeros((k, d));
    let mut i = 0;
    while i < k {
        let mut v: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(rng));
        for j in 0..i {
            let proj = v.dot(&dirs.row(j));
            v.scaled_add(-proj, &dirs.row(j));
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-8 {
            dirs.row_mut(i).assign(&(v / n));
            i += 1;
        }
    }
    dirs
}

fn jitter(base: ArrayView1<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma checked non-negative");
    let mut v = base.to_owned();
    if sigma > 0.0 {
        v.mapv_inplace(|x| x + normal.sample(rng));
    }
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        base.to_owned()
    }
}

fn jitter_rows(m: &Array2<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = m.clone();
    for (mut row, src) in out.axis_iter_mut(Axis(0)).zip(m.axis_iter(Axis(0))) {
        row.assign(&jitter(src, sigma, rng));
    }
    out
}

pub fn make_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.k < 1 || cfg.n_per < 1 || cfg.d < cfg.k + cfg.nuisance_dims {
        return Err(Error::BadDims(format!(
            "need k >= 1, n_per >= 1 and d >= k + nuisance_dims (k = {}, n_per = {}, d = {}, nuisance_dims = {})",
            cfg.k, cfg.n_per, cfg.d, cfg.nuisance_dims
        )));
    }
    if cfg.nouns_per_class * cfg.k + cfg.distractors == 0 {
        return Err(Error::BadDims("corpus would be empty".into()));
    }
    for s in [
        cfg.noise,
        cfg.nuisance_scale,
        cfg.noun_noise,
        cfg.sigma_strong,
        cfg.sigma_weak,
    ] {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::BadDims(format!("noise levels must be finite and >= 0, got {s}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let basis = orthonormal_directions(cfg.k + cfg.nuisance_dims, cfg.d, &mut rng);
    let dirs = basis.slice(ndarray::s![..cfg.k, ..]).to_owned();
    let nuisance = basis.slice(ndarray::s![cfg.k.., ..]).to_owned();
    let nuisance_sigma = cfg.nuisance_scale * cfg.noise;

    let n = cfg.k * cfg.n_per;
    let mut x = Array2::<f64>::zeros((n, cfg.d));
    let mut truth = Vec::with_capacity(n);
    for class in 0..cfg.k {
        for j in 0..cfg.n_per {
            let i = class * cfg.n_per + j;
            let mut base = dirs.row(class).to_owned();
            for v in nuisance.axis_iter(Axis(0)) {
                let g: f64 = StandardNormal.sample(&mut rng);
                base.scaled_add(nuisance_sigma * g, &v);
            }
            x.row_mut(i).assign(&jitter(base.view(), cfg.noise, &mut rng));
            truth.push(class);
        }
    }

    let mut names = Vec::new();
    let mut nouns = Vec::new();
    let mut noun_class = Vec::new();
    for class in 0..cfg.k {
        for j in 0..cfg.nouns_per_class {
            names.push(format!("class{class}_noun{j}"));
            nouns.push(jitter(dirs.row(class), cfg.noun_noise, &mut rng));
            noun_class.push(Some(class));
        }
    }
    for j in 0..cfg.distractors {
        let raw: Array1<f64> = Array1::from_shape_fn(cfg.d, |_| StandardNormal.sample(&mut rng));
        names.push(format!("distractor{j}"));
        nouns.push(jitter(raw.view(), 0.0, &mut rng));
        noun_class.push(None);
    }
    let noun_views: Vec<_> = nouns.iter().map(|v| v.view()).collect();
    let w_matrix = ndarray::stack(Axis(0), &noun_views).expect("equal lengths");

    let strong: Vec<EmbeddingMatrix> = (0..cfg.strong_views)
        .map(|_| EmbeddingMatrix::from_f64(jitter_rows(&x, cfg.sigma_strong, &mut rng).view(), true))
        .collect::<Result<_>>()?;
    let weak: Vec<EmbeddingMatrix> = (0..cfg.weak_views)
        .map(|_| EmbeddingMatrix::from_f64(jitter_rows(&x, cfg.sigma_weak, &mut rng).view(), true))
        .collect::<Result<_>>()?;

    let x = EmbeddingMatrix::from_f64(x.view(), true)?;
    let w = VocabSet::new(
        names,
        EmbeddingMatrix::from_f64(w_matrix.view(), true)?,
        format!("synthetic(seed={})", cfg.seed),
    )?;
    Ok(SyntheticData {
        views: ViewBundle::new(x.clone(), strong, weak)?,
        x,
        w,
        truth: LabelVector::new(truth, cfg.k)?,
        directions: dirs,
        noun_class,
    })
}

/// Features with clean labels and a boundary-corrupted copy.
#[derive(Debug, Clone)]
pub struct PlantedLabels {
    pub features: Array2<f64>,
    pub truth: LabelVector,
    pub pseudo: LabelVector,
    pub corrupted: Vec<usize>,
}

/// Relabels the `corruption` fraction of samples with the smallest margin
/// (own-direction cosine minus best other cosine) to their runner-up class.
pub fn planted_pseudo_labels(
    k: usize,
    n_per: usize,
    d: usize,
    noise: f64,
    corruption: f64,
    seed: u64,
) -> Result<PlantedLabels> {
    if k < 2 || d < k || n_per == 0 {
        return Err(Error::BadDims(format!("k = {k}, d = {d}, n_per = {n_per}")));
    }
    if !(0.0..=1.0).contains(&corruption) {
        return Err(Error::BadDims(format!("corruption {corruption} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = orthonormal_directions(k, d, &mut rng);
    let n = k * n_per;
    let mut features = Array2::<f64>::zeros((n, d));
    let mut truth = Vec::with_capacity(n);
    for class in 0..k {
        for j in 0..n_per {
            features
                .row_mut(class * n_per + j)
                .assign(&jitter(dirs.row(class), noise, &mut rng));
            truth.push(class);
        }
    }
    let sims = normalize_rows(features.view()).dot(&dirs.t());
    let mut margins: Vec<(usize, f64, usize)> = (0..n)
        .map(|i| {
            let own = sims[[i, truth[i]]];
            let (runner, best_other) = (0..k)
                .filter(|&c| c != truth[i])
                .map(|c| (c, sims[[i, c]]))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            (i, own - best_other, runner)
        })
        .collect();
    margins.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let flips = (corruption * n as f64).round() as usize;
    let mut pseudo = truth.clone();
    let mut corrupted: Vec<usize> = Vec::with_capacity(flips);
    for &(i, _, runner) in margins.iter().take(flips) {
        pseudo[i] = runner;
        corrupted.push(i);
    }
    corrupted.sort_unstable();
    Ok(PlantedLabels {
        features,
        truth: LabelVector::new(truth, k)?,
        pseudo: LabelVector::new(pseudo, k)?,
        corrupted,
    })
}
