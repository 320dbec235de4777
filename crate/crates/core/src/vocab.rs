//! Dataset-specific candidate nouns.
//!
//! Images are split into `k̃` fine clusters, every corpus noun is routed to
//! the fine center it is most similar to, and each center keeps its `θ`
//! closest nouns. The union of those lists is the candidate set.

use ndarray::{Array2, Axis};

use crate::cluster::{cluster_means, kmeans, KMeansConfig};
use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, VocabSet};
use crate::linalg::normalize_rows;

/// Samples per fine center in the default rule.
pub const SAMPLES_PER_FINE_CENTER: usize = 300;

/// `⌈n/300⌉`, or `3k` for datasets whose classes are smaller than 300.
pub fn default_k_tilde(n: usize, k: usize, small_classes: bool) -> usize {
    if small_classes {
        3 * k
    } else {
        n.div_ceil(SAMPLES_PER_FINE_CENTER)
    }
}

/// Fine-grained image centers: means of a K-means partition of `X`.
#[derive(Debug, Clone)]
pub struct FineCenters {
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    pub k_tilde: usize,
}

pub fn compute_fine_centers(x: &EmbeddingMatrix, k_tilde: usize, kmeans_config: &KMeansConfig) -> Result<FineCenters> {
    if k_tilde == 0 || k_tilde > x.rows() {
        return Err(Error::KTooLarge {
            k: k_tilde,
            rows: x.rows(),
        });
    }
    let data = x.to_f64();
    let result = kmeans(data.view(), k_tilde, kmeans_config)?;
    let assignment = result.labels.into_values();
    Ok(FineCenters {
        centers: cluster_means(data.view(), &assignment, k_tilde),
        assignment,
        k_tilde,
    })
}

/// Nearest fine center by cosine for every noun, lowest index on ties.
pub fn assign_nouns(w: &VocabSet, centers: &FineCenters) -> Result<Vec<usize>> {
    let words = normalize_rows(w.embeddings().to_f64().view());
    let p = normalize_rows(centers.centers.view());
    if words.ncols() != p.ncols() {
        return Err(Error::DimMismatch(format!(
            "noun dim {} vs center dim {}",
            words.ncols(),
            p.ncols()
        )));
    }
    let sims = words.dot(&p.t());
    Ok(sims
        .axis_iter(Axis(0))
        .map(|row| crate::linalg::argmax(row.iter().copied()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct CandidateSelection {
    /// Fine center for each corpus noun.
    pub noun_assignment: Vec<usize>,
    /// Up to `θ` corpus indices per fine center, most similar first.
    pub per_center_top: Vec<Vec<usize>>,
    /// Corpus indices of the candidate set, in selection order.
    pub union_indices: Vec<usize>,
    /// Fine center each candidate was chosen for.
    pub provenance: Vec<usize>,
    pub union: VocabSet,
}

impl CandidateSelection {
    pub fn len(&self) -> usize {
        self.union_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.union_indices.is_empty()
    }
}

pub fn select_candidates(w: &VocabSet, centers: &FineCenters, theta: usize) -> Result<CandidateSelection> {
    if theta == 0 {
        return Err(Error::Config("theta must be at least 1".into()));
    }
    let noun_assignment = assign_nouns(w, centers)?;
    let words = normalize_rows(w.embeddings().to_f64().view());
    let p = normalize_rows(centers.centers.view());

    let mut per_center_top = Vec::with_capacity(centers.k_tilde);
    let mut union_indices = Vec::new();
    let mut provenance = Vec::new();
    let mut taken = vec![false; w.len()];
    for r in 0..centers.k_tilde {
        let mut members: Vec<(usize, f64)> = noun_assignment
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == r)
            .map(|(i, _)| (i, words.row(i).dot(&p.row(r))))
            .collect();
        // descending cosine, lowest noun index first on ties
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        members.truncate(theta);
        let top: Vec<usize> = members.into_iter().map(|(i, _)| i).collect();
        for &i in &top {
            if !taken[i] {
                taken[i] = true;
                union_indices.push(i);
                provenance.push(r);
            }
        }
        per_center_top.push(top);
    }
    if union_indices.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let union = w.select(&union_indices, format!("{} (candidates, theta={theta})", w.source()))?;
    Ok(CandidateSelection {
        noun_assignment,
        per_center_top,
        union_indices,
        provenance,
        union,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn vocab(rows: Array2<f32>) -> VocabSet {
        let names = (0..rows.nrows()).map(|i| format!("n{i}")).collect();
        VocabSet::new(names, EmbeddingMatrix::new(rows, false).unwrap(), "test").unwrap()
    }

    fn fine(centers: Array2<f64>) -> FineCenters {
        let k = centers.nrows();
        FineCenters {
            centers,
            assignment: Vec::new(),
            k_tilde: k,
        }
    }

    #[test]
    fn k_tilde_rules() {
        assert_eq!(default_k_tilde(13000, 10, false), 44);
        assert_eq!(default_k_tilde(300, 10, false), 1);
        assert_eq!(default_k_tilde(301, 10, false), 2);
        assert_eq!(default_k_tilde(5640, 47, true), 141);
    }

    #[test]
    fn singleton_groups_become_centers() {
        let pts = array![[10.0f32, 0.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 10.0]];
        let x = EmbeddingMatrix::new(ndarray::concatenate![Axis(0), pts.view(), pts.view()], false).unwrap();
        let f = compute_fine_centers(&x, 3, &KMeansConfig::default()).unwrap();
        let mut got: Vec<Vec<f64>> = f.centers.rows().into_iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(
            got,
            vec![vec![10.0, 0.0, 0.0], vec![0.0, 10.0, 0.0], vec![0.0, 0.0, 10.0]]
        );
    }

    #[test]
    fn identical_points_single_center() {
        let x = EmbeddingMatrix::new(array![[0.6f32, 0.8], [0.6, 0.8], [0.6, 0.8]], true).unwrap();
        let f = compute_fine_centers(&x, 1, &KMeansConfig::default()).unwrap();
        assert!((f.centers[[0, 0]] - 0.6f32 as f64).abs() < 1e-15);
        assert!((f.centers[[0, 1]] - 0.8f32 as f64).abs() < 1e-15);
    }

    #[test]
    fn centers_are_partition_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = Array2::<f64>::from_shape_fn((300, 8), |_| StandardNormal.sample(&mut rng));
        let x = crate::io::l2_normalize_rows(&EmbeddingMatrix::from_f64(raw.view(), false).unwrap()).unwrap();
        let f = compute_fine_centers(&x, 7, &KMeansConfig::default()).unwrap();
        let data = x.to_f64();
        for r in 0..7 {
            let members: Vec<usize> = (0..300).filter(|&i| f.assignment[i] == r).collect();
            assert!(!members.is_empty());
            for c in 0..8 {
                let mean = members.iter().map(|&i| data[[i, c]]).sum::<f64>() / members.len() as f64;
                assert!((mean - f.centers[[r, c]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_many_fine_centers() {
        let x = EmbeddingMatrix::new(array![[1.0f32, 0.0]], true).unwrap();
        assert!(matches!(
            compute_fine_centers(&x, 2, &KMeansConfig::default()),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn noun_equal_to_center_routes_there() {
        let c = fine(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let w = vocab(array![[0.0f32, 0.0, 2.0]]);
        assert_eq!(assign_nouns(&w, &c).unwrap(), vec![2]);
    }

    #[test]
    fn orthogonal_noun_ties_to_lowest() {
        let c = fine(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let w = vocab(array![[0.0f32, 0.0, 1.0]]);
        assert_eq!(assign_nouns(&w, &c).unwrap(), vec![0]);
    }

    #[test]
    fn theta_clamps_to_assigned_count() {
        let c = fine(array![[1.0, 0.0], [0.0, 1.0]]);
        let w = vocab(array![[1.0f32, 0.1], [1.0, 0.3], [0.1, 1.0]]);
        let s = select_candidates(&w, &c, 5).unwrap();
        assert_eq!(s.per_center_top, vec![vec![0, 1], vec![2]]);
        assert_eq!(s.union_indices, vec![0, 1, 2]);
        assert_eq!(s.provenance, vec![0, 0, 1]);
        assert_eq!(s.union.names(), &["n0", "n1", "n2"]);
    }

    #[test]
    fn empty_center_contributes_nothing() {
        let c = fine(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let w = vocab(array![[1.0f32, 0.1], [0.2, 1.0], [1.0, 0.0]]);
        let s = select_candidates(&w, &c, 1).unwrap();
        assert_eq!(s.per_center_top, vec![vec![2], vec![1], vec![]]);
        assert_eq!(s.len(), 2);
    }
}
