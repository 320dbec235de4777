//! Neighbor-consistency filtering of pseudo-labels.
//!
//! A sample's score is the fraction of its `k̂` cosine nearest neighbors (in
//! the rows of `C`) that share its pseudo-label; samples scoring at least
//! `τ` form the high-quality set `D_L`, the rest form `D_U`.

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{evaluate, matched_accuracy};
use crate::error::{Error, Result};
use crate::io::LabelVector;
use crate::linalg::normalize_rows;

pub const DEFAULT_K_HAT: usize = 10;
pub const DEFAULT_TAU: f64 = 1.0;
/// Above this many clusters the neighborhood shrinks to a single neighbor.
pub const LARGE_K_THRESHOLD: usize = 50;

/// `k̂` used when the configuration does not pin one.
pub fn default_k_hat(num_clusters: usize) -> usize {
    if num_clusters > LARGE_K_THRESHOLD {
        1
    } else {
        DEFAULT_K_HAT
    }
}

/// `N × k̂` neighbor indices, most similar first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub k_hat: usize,
    pub indices: Vec<Vec<usize>>,
}

impl NeighborTable {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Exact cosine k-NN over the rows of `c`, excluding self; ties go to the
/// lower index.
pub fn knn_graph(c: ArrayView2<f64>, k_hat: usize) -> Result<NeighborTable> {
    let n = c.nrows();
    if k_hat == 0 || k_hat >= n {
        return Err(Error::KHatTooLarge { k_hat, n });
    }
    let unit = normalize_rows(c);
    let indices = (0..n)
        .into_par_iter()
        .map(|i| {
            let sims = unit.dot(&unit.row(i));
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let cmp = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
            order.select_nth_unstable_by(k_hat - 1, cmp);
            order.truncate(k_hat);
            order.sort_by(cmp);
            order
        })
        .collect();
    Ok(NeighborTable { k_hat, indices })
}

/// Number of neighbors agreeing with each sample's label.
pub fn agreement_counts(labels: &LabelVector, neighbors: &NeighborTable) -> Result<Vec<usize>> {
    if labels.len() != neighbors.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: neighbors.len(),
        });
    }
    let l = labels.values();
    neighbors
        .indices
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != neighbors.k_hat {
                return Err(Error::DimMismatch(format!(
                    "neighbor row {i} has {} entries, expected {}",
                    row.len(),
                    neighbors.k_hat
                )));
            }
            Ok(row.iter().filter(|&&j| l[j] == l[i]).count())
        })
        .collect()
}

/// `α_i`: fraction of neighbors sharing `ŷ_i`.
pub fn consistency_scores(labels: &LabelVector, neighbors: &NeighborTable) -> Result<Vec<f64>> {
    let k = neighbors.k_hat as f64;
    Ok(agreement_counts(labels, neighbors)?
        .into_iter()
        .map(|c| c as f64 / k)
        .collect())
}

/// Smallest agreement count that satisfies `count / k̂ ≥ τ`.
fn required_count(tau: f64, k_hat: usize) -> usize {
    let raw = tau * k_hat as f64;
    // absorb rounding in τ·k̂ so that e.g. τ = 0.3, k̂ = 10 needs exactly 3
    (raw - 1e-9).ceil().max(0.0) as usize
}

fn split(counts: &[usize], required: usize) -> (Vec<usize>, Vec<usize>) {
    (0..counts.len()).partition(|&i| counts[i] >= required)
}

/// `(D_L, D_U)` at threshold `τ`; errors when nothing qualifies.
pub fn select_high_quality(counts: &[usize], k_hat: usize, tau: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    let (selected, unselected) = split(counts, required_count(tau, k_hat));
    if selected.is_empty() {
        return Err(Error::EmptySelection { tau });
    }
    Ok((selected, unselected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelState {
    pub labels: LabelVector,
    pub neighbors: NeighborTable,
    pub alpha: Vec<f64>,
    pub selected: Vec<usize>,
    pub unselected: Vec<usize>,
    pub tau: f64,
    /// Threshold actually applied after any relaxation.
    pub tau_effective: f64,
}

/// Scores every sample and selects `D_L`.
///
/// When nothing reaches `τ`, the threshold drops one neighbor at a time until
/// at least `K` samples are selected and every pseudo-class present in
/// `labels` has a member, or until every sample is selected.
pub fn build_state(labels: LabelVector, neighbors: NeighborTable, tau: f64) -> Result<PseudoLabelState> {
    let counts = agreement_counts(&labels, &neighbors)?;
    let k_hat = neighbors.k_hat;
    let alpha = counts.iter().map(|&c| c as f64 / k_hat as f64).collect();
    let (selected, unselected, tau_effective) = match select_high_quality(&counts, k_hat, tau) {
        Ok((s, u)) => (s, u, tau),
        Err(Error::EmptySelection { .. }) => {
            let present = distinct(labels.values());
            let mut required = required_count(tau, k_hat);
            loop {
                required = required.saturating_sub(1);
                let (s, u) = split(&counts, required);
                let covered = distinct(s.iter().map(|&i| labels.values()[i]).collect::<Vec<_>>().as_slice());
                if (s.len() >= labels.num_classes() && covered == present) || required == 0 {
                    let eff = required as f64 / k_hat as f64;
                    log::warn!("no sample reached tau = {tau}; relaxed to {eff} ({} selected)", s.len());
                    break (s, u, eff);
                }
            }
        }
        Err(e) => return Err(e),
    };
    Ok(PseudoLabelState {
        labels,
        neighbors,
        alpha,
        selected,
        unselected,
        tau,
        tau_effective,
    })
}

fn distinct(values: &[usize]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Pseudo-label accuracy before and after filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGain {
    pub acc_before: f64,
    /// `None` when `D_L` is empty.
    pub acc_after: Option<f64>,
    pub fraction_selected: f64,
}

/// The matching is computed on the full pseudo-label set and reused for the
/// selected subset.
pub fn filter_gain_report(state: &PseudoLabelState, truth: &LabelVector) -> Result<FilterGain> {
    let metrics = evaluate(&state.labels, truth)?;
    Ok(FilterGain {
        acc_before: metrics.acc,
        acc_after: matched_accuracy(&state.labels, truth, &metrics.matching, &state.selected),
        fraction_selected: state.selected.len() as f64 / state.labels.len() as f64,
    })
}

/// Audit export of `D_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionExport {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub tau_effective: f64,
}

impl From<&PseudoLabelState> for SelectionExport {
    fn from(state: &PseudoLabelState) -> Self {
        Self {
            indices: state.selected.clone(),
            labels: state.selected.iter().map(|&i| state.labels.values()[i]).collect(),
            tau_effective: state.tau_effective,
        }
    }
}
