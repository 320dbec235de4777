//! Interpretability and visualization outputs.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::centers::SemanticCenters;
use crate::error::{Error, Result};
use crate::io::{LabelVector, VocabSet};
use crate::linalg::{argmax, normalize_rows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNoun {
    pub center: usize,
    pub noun: String,
    pub noun_index: usize,
    pub cosine: f64,
    /// Ground-truth class matched to this center, when evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_class: Option<usize>,
}

/// The candidate noun closest to each center, lowest index on ties.
pub fn nearest_noun_report(s: &SemanticCenters, u: &VocabSet) -> Result<Vec<NearestNoun>> {
    let nouns = normalize_rows(u.embeddings().to_f64().view());
    if nouns.ncols() != s.dim() {
        return Err(Error::DimMismatch(format!(
            "noun dim {} vs center dim {}",
            nouns.ncols(),
            s.dim()
        )));
    }
    let sims = s.matrix().dot(&nouns.t());
    Ok(sims
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(center, row)| {
            let j = argmax(row.iter().copied());
            NearestNoun {
                center,
                noun: u.names()[j].clone(),
                noun_index: j,
                cosine: row[j],
                matched_class: None,
            }
        })
        .collect())
}

/// CSV with one row per center; `class` is filled from `class_names` when a
/// matching is known.
pub fn nearest_noun_csv(rows: &[NearestNoun], class_names: Option<&[String]>) -> String {
    let mut out = String::from("center,class,noun,cosine\n");
    for r in rows {
        let class = match (r.matched_class, class_names) {
            (Some(c), Some(names)) if c < names.len() => names[c].clone(),
            (Some(c), _) => c.to_string(),
            (None, _) => String::new(),
        };
        writeln!(out, "{},{},{},{:.6}", r.center, class, r.noun, r.cosine).expect("writing to String");
    }
    out
}

/// Mean Pearson correlation between rows of `c` within the same true class
/// and across classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGap {
    pub within: f64,
    pub between: f64,
    pub gap: f64,
}

pub fn row_correlation_gap(c: ArrayView2<f64>, truth: &LabelVector) -> Result<CorrelationGap> {
    if c.nrows() != truth.len() {
        return Err(Error::LengthMismatch {
            left: c.nrows(),
            right: truth.len(),
        });
    }
    // standardize rows so that corr(i, j) = z_i · z_j
    let mut z = c.to_owned();
    let mut nonconstant = vec![true; c.nrows()];
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.mean().unwrap_or(0.0);
        row.mapv_inplace(|v| v - mean);
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        } else {
            nonconstant[i] = false;
        }
    }
    let k = truth.num_classes();
    let mut sums = Array2::<f64>::zeros((k, c.ncols()));
    let mut counts = vec![0usize; k];
    let mut self_terms = vec![0.0; k];
    for (i, &l) in truth.values().iter().enumerate() {
        let mut s = sums.row_mut(l);
        s += &z.row(i);
        counts[l] += 1;
        if nonconstant[i] {
            self_terms[l] += 1.0;
        }
    }
    let total: Array1<f64> = sums.sum_axis(Axis(0));
    let mut within_sum = 0.0;
    let mut within_pairs = 0.0;
    let mut class_sq = 0.0;
    for l in 0..k {
        let s = sums.row(l);
        let sq = s.dot(&s);
        class_sq += sq;
        within_sum += sq - self_terms[l];
        within_pairs += (counts[l] * counts[l].saturating_sub(1)) as f64;
    }
    let n = c.nrows() as f64;
    let all_pairs = n * (n - 1.0);
    let between_sum = total.dot(&total) - class_sq;
    let between_pairs = all_pairs - within_pairs;
    let within = if within_pairs > 0.0 {
        within_sum / within_pairs
    } else {
        0.0
    };
    let between = if between_pairs > 0.0 {
        between_sum / between_pairs
    } else {
        0.0
    };
    Ok(CorrelationGap {
        within,
        between,
        gap: within - between,
    })
}

/// Grayscale raster of `c` with rows grouped by true class (stable order)
/// and a black rule row between consecutive classes. Values are min–max
/// scaled to 0..=255; a constant matrix renders mid-gray.
pub fn heatmap_pixels(c: ArrayView2<f64>, truth: &LabelVector) -> Result<(u32, u32, Vec<u8>)> {
    if c.nrows() != truth.len() {
        return Err(Error::LengthMismatch {
            left: c.nrows(),
            right: truth.len(),
        });
    }
    let mut order: Vec<usize> = (0..c.nrows()).collect();
    order.sort_by_key(|&i| truth.values()[i]);
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let scale = |v: f64| -> u8 {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    };
    let width = c.ncols();
    let mut pixels = Vec::with_capacity(order.len() * width);
    let mut rows = 0u32;
    let mut prev: Option<usize> = None;
    for &i in &order {
        let class = truth.values()[i];
        if prev.is_some_and(|p| p != class) {
            pixels.extend(std::iter::repeat_n(0u8, width));
            rows += 1;
        }
        prev = Some(class);
        pixels.extend(c.row(i).iter().map(|&v| scale(v)));
        rows += 1;
    }
    Ok((width as u32, rows, pixels))
}

pub fn export_heatmap(c: ArrayView2<f64>, truth: &LabelVector, path: &Path) -> Result<()> {
    let (width, height, pixels) = heatmap_pixels(c, truth)?;
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, width, height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    crate::io::write_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::EmbeddingMatrix;
    use ndarray::array;

    #[test]
    fn center_equal_to_noun() {
        let u = VocabSet::new(
            vec!["cat".into(), "dog".into()],
            EmbeddingMatrix::new(array![[1.0f32, 0.0], [0.6, 0.8]], true).unwrap(),
            "t",
        )
        .unwrap();
        let s = SemanticCenters::new(array![[0.6, 0.8], [1.0, 0.1]], 0.01).unwrap();
        let r = nearest_noun_report(&s, &u).unwrap();
        assert_eq!(r[0].noun, "dog");
        assert!((r[0].cosine - 1.0).abs() < 1e-7);
        assert_eq!(r[1].noun, "cat");
        let csv = nearest_noun_csv(&r, None);
        assert!(csv.starts_with("center,class,noun,cosine\n0,,dog,"));
    }

    #[test]
    fn single_pixel_heatmap() {
        let (w, h, p) = heatmap_pixels(array![[0.3]].view(), &LabelVector::new(vec![0], 1).unwrap()).unwrap();
        assert_eq!((w, h), (1, 1));
        assert_eq!(p, vec![128]);
    }

    #[test]
    fn rows_grouped_with_rules() {
        let c = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let truth = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let (w, h, p) = heatmap_pixels(c.view(), &truth).unwrap();
        assert_eq!((w, h), (2, 4));
        assert_eq!(p, vec![255, 0, 255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn heatmap_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let c = array![[1.0, 0.5, 0.0], [0.1, 0.9, 0.3]];
        let truth = LabelVector::new(vec![1, 0], 2).unwrap();
        export_heatmap(c.view(), &truth, &dir.path().join("a.png")).unwrap();
        export_heatmap(c.view(), &truth, &dir.path().join("b.png")).unwrap();
        let a = std::fs::read(dir.path().join("a.png")).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b.png")).unwrap());
        assert_eq!(&a[1..4], b"PNG");
    }

    #[test]
    fn correlation_gap_matches_pairwise_scan() {
        let c = array![
            [1.0, 0.2, 0.1, 0.0],
            [0.9, 0.1, 0.3, 0.1],
            [0.8, 0.3, 0.0, 0.2],
            [0.1, 0.9, 0.2, 0.7],
            [0.0, 1.0, 0.4, 0.6]
        ];
        let truth = LabelVector::new(vec![0, 0, 0, 1, 1], 2).unwrap();
        let g = row_correlation_gap(c.view(), &truth).unwrap();

        let corr = |a: usize, b: usize| {
            let (ra, rb) = (c.row(a), c.row(b));
            let (ma, mb) = (ra.mean().unwrap(), rb.mean().unwrap());
            let da: Vec<f64> = ra.iter().map(|v| v - ma).collect();
            let db: Vec<f64> = rb.iter().map(|v| v - mb).collect();
            let num: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
            num / (da.iter().map(|x| x * x).sum::<f64>().sqrt() * db.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let (mut w, mut wn, mut b, mut bn) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                if truth.values()[i] == truth.values()[j] {
                    w += corr(i, j);
                    wn += 1.0;
                } else {
                    b += corr(i, j);
                    bn += 1.0;
                }
            }
        }
        assert!((g.within - w / wn).abs() < 1e-12);
        assert!((g.between - b / bn).abs() < 1e-12);
        assert!(g.gap > 0.0);
    }
}
