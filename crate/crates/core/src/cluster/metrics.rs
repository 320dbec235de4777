//! NMI, Hungarian-matched accuracy, and ARI from a shared contingency table.
//!
//! NMI is normalized by the arithmetic mean of the two entropies.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, Matching};
use crate::error::{Error, Result};
use crate::io::LabelVector;

/// Name of the NMI normalization, echoed into run reports.
pub const NMI_NORMALIZATION: &str = "arithmetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
    /// `matching[predicted] = true class`.
    pub matching: Vec<usize>,
}

/// Square `K×K` table with `K = max(pred classes, true classes)`;
/// rows are predicted clusters, columns true classes.
pub fn contingency(pred: &LabelVector, truth: &LabelVector) -> Result<Array2<u64>> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let k = pred.num_classes().max(truth.num_classes());
    let mut table = Array2::<u64>::zeros((k, k));
    for (&p, &t) in pred.values().iter().zip(truth.values()) {
        table[[p, t]] += 1;
    }
    Ok(table)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn nmi_from(table: &Array2<u64>, n: f64) -> f64 {
    let rows: Vec<u64> = table.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<u64> = table.columns().into_iter().map(|c| c.sum()).collect();
    let h_pred = entropy(rows.iter().copied(), n);
    let h_true = entropy(cols.iter().copied(), n);
    let mut mi = 0.0;
    for ((i, j), &c) in table.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += (c / n) * ((c * n) / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    let denom = 0.5 * (h_pred + h_true);
    if denom <= 0.0 {
        // both partitions are a single block
        return 1.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn ari_from(table: &Array2<u64>, n: u64) -> f64 {
    let sum_cells: f64 = table.iter().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.rows().into_iter().map(|r| comb2(r.sum())).sum();
    let sum_cols: f64 = table.columns().into_iter().map(|c| comb2(c.sum())).sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        // degenerate: both partitions trivial in the same way
        return 1.0;
    }
    (sum_cells - expected) / (max_index - expected)
}

pub fn evaluate(pred: &LabelVector, truth: &LabelVector) -> Result<MetricsReport> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as u64;
    if n == 0 {
        return Err(Error::DimensionZero("samples"));
    }
    let Matching { permutation, matched } = hungarian_match(&table)?;
    Ok(MetricsReport {
        nmi: nmi_from(&table, n as f64),
        acc: matched as f64 / n as f64,
        ari: ari_from(&table, n),
        matching: permutation,
    })
}

/// Accuracy of `pred` restricted to `subset`, under a fixed matching.
pub fn matched_accuracy(pred: &LabelVector, truth: &LabelVector, matching: &[usize], subset: &[usize]) -> Option<f64> {
    if subset.is_empty() {
        return None;
    }
    let hits = subset
        .iter()
        .filter(|&&i| matching[pred.values()[i]] == truth.values()[i])
        .count();
    Some(hits as f64 / subset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[usize], k: usize) -> LabelVector {
        LabelVector::new(v.to_vec(), k).unwrap()
    }

    #[test]
    fn identical_labelings_are_perfect() {
        let t = labels(&[0, 0, 1, 1, 2, 2, 2], 3);
        let m = evaluate(&t, &t).unwrap();
        assert!((m.nmi - 1.0).abs() < 1e-12);
        assert_eq!(m.acc, 1.0);
        assert!((m.ari - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permuted_labelings_are_perfect() {
        let t = labels(&[0, 0, 1, 1, 2, 2, 2], 3);
        let p = labels(&[2, 2, 0, 0, 1, 1, 1], 3);
        let m = evaluate(&p, &t).unwrap();
        assert_eq!(m.acc, 1.0);
        assert!((m.nmi - 1.0).abs() < 1e-12);
        assert!((m.ari - 1.0).abs() < 1e-12);
        assert_eq!(m.matching, vec![1, 2, 0]);
    }

    #[test]
    fn known_values() {
        // sklearn: normalized_mutual_info_score([0,0,1,1],[0,0,1,2]) = 0.8,
        // adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        let p = labels(&[0, 0, 1, 1], 2);
        let t = labels(&[0, 0, 1, 2], 3);
        let m = evaluate(&p, &t).unwrap();
        assert!((m.nmi - 0.8).abs() < 1e-12, "{}", m.nmi);
        assert!((m.ari - 4.0 / 7.0).abs() < 1e-12, "{}", m.ari);
        assert_eq!(m.acc, 0.75);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            evaluate(&labels(&[0, 1], 2), &labels(&[0], 2)),
            Err(Error::LengthMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn nmi_is_symmetric() {
        let a = labels(&[0, 1, 1, 2, 0, 2, 1, 0], 3);
        let b = labels(&[1, 1, 0, 0, 1, 2, 2, 0], 3);
        let ab = evaluate(&a, &b).unwrap().nmi;
        let ba = evaluate(&b, &a).unwrap().nmi;
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn subset_accuracy_reuses_matching() {
        let t = labels(&[0, 0, 1, 1], 2);
        let p = labels(&[1, 1, 0, 1], 2);
        let m = evaluate(&p, &t).unwrap();
        assert_eq!(m.matching, vec![1, 0]);
        assert_eq!(matched_accuracy(&p, &t, &m.matching, &[0, 1, 2]), Some(1.0));
        assert_eq!(matched_accuracy(&p, &t, &m.matching, &[3]), Some(0.0));
        assert_eq!(matched_accuracy(&p, &t, &m.matching, &[]), None);
    }
}
