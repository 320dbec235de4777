//! Pairwise cosine statistics between image and text embeddings.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::normalize_rows;

/// Rows beyond this are subsampled with a fixed stride.
pub const MAX_ROWS: usize = 2000;
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub pairs: u64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Counts over `HISTOGRAM_BINS` equal bins of `[-1, 1]`.
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub image_image: SimilarityStats,
    pub image_text: SimilarityStats,
    pub text_text: SimilarityStats,
    pub image_rows_used: usize,
    pub text_rows_used: usize,
}

fn strided(m: ArrayView2<f64>) -> Array2<f64> {
    if m.nrows() <= MAX_ROWS {
        return m.to_owned();
    }
    let step = m.nrows().div_ceil(MAX_ROWS);
    let idx: Vec<usize> = (0..m.nrows()).step_by(step).collect();
    m.select(Axis(0), &idx)
}

fn stats(values: impl Iterator<Item = f64>) -> SimilarityStats {
    let mut hist = vec![0u64; HISTOGRAM_BINS];
    let (mut n, mut sum, mut sq) = (0u64, 0.0, 0.0);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
        min = min.min(v);
        max = max.max(v);
        let bin = (((v + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor();
        hist[(bin.max(0.0) as usize).min(HISTOGRAM_BINS - 1)] += 1;
    }
    let mean = if n > 0 { sum / n as f64 } else { 0.0 };
    let var = if n > 0 {
        (sq / n as f64 - mean * mean).max(0.0)
    } else {
        0.0
    };
    SimilarityStats {
        pairs: n,
        mean,
        std: var.sqrt(),
        min: if n > 0 { min } else { 0.0 },
        max: if n > 0 { max } else { 0.0 },
        histogram: hist,
    }
}

fn within(m: &Array2<f64>) -> SimilarityStats {
    let g = m.dot(&m.t());
    let n = g.nrows();
    stats(
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| g[[i, j]]),
    )
}

/// Cosine statistics within images (distinct pairs), within texts, and
/// across the two modalities.
pub fn diagnose(images: ArrayView2<f64>, texts: ArrayView2<f64>) -> Result<Diagnosis> {
    if images.ncols() != texts.ncols() {
        return Err(Error::DimMismatch(format!(
            "image dim {} vs text dim {}",
            images.ncols(),
            texts.ncols()
        )));
    }
    let x = normalize_rows(strided(images).view());
    let t = normalize_rows(strided(texts).view());
    let cross = x.dot(&t.t());
    Ok(Diagnosis {
        image_image: within(&x),
        image_text: stats(cross.iter().copied()),
        text_text: within(&t),
        image_rows_used: x.nrows(),
        text_rows_used: t.nrows(),
    })
}

/// One row per histogram bin: `bin_low,bin_high,image_image,image_text,text_text`.
pub fn histogram_csv(d: &Diagnosis) -> String {
    let mut out = String::from("bin_low,bin_high,image_image,image_text,text_text\n");
    let width = 2.0 / HISTOGRAM_BINS as f64;
    for b in 0..HISTOGRAM_BINS {
        let lo = -1.0 + b as f64 * width;
        writeln!(
            out,
            "{:.3},{:.3},{},{},{}",
            lo,
            lo + width,
            d.image_image.histogram[b],
            d.image_text.histogram[b],
            d.text_text.histogram[b]
        )
        .expect("writing to String");
    }
    out
}
