mod common;

use common::{brute_force_matching, gaussian, random_table, relative_frobenius, ridge_by_gradient_descent};
use laic_core::centers::{assign, SemanticCenters};
use laic_core::cluster::{evaluate, hungarian_match, kmeans, KMeansConfig};
use laic_core::filter::{agreement_counts, knn_graph};
use laic_core::io::{EmbeddingMatrix, LabelVector, VocabSet};
use laic_core::repr::{residual_objective, ridge_representation_f64};
use laic_core::vocab::{assign_nouns, compute_fine_centers, select_candidates};
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cos(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn unit_rows(m: Array2<f64>) -> Array2<f64> {
    let mut m = m;
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

fn vocab(m: &Array2<f64>) -> VocabSet {
    let names = (0..m.nrows()).map(|i| format!("n{i}")).collect();
    VocabSet::new(names, EmbeddingMatrix::from_f64(m.view(), false).unwrap(), "test").unwrap()
}

#[test]
fn ridge_matches_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = unit_rows(gaussian(50, 8, &mut rng));
    let u = unit_rows(gaussian(20, 8, &mut rng));
    let r = ridge_representation_f64(x.view(), u.view(), 5.0).unwrap();
    let oracle = ridge_by_gradient_descent(&x, &u, 5.0);
    assert!(relative_frobenius(&r.c, &oracle) < 1e-4);
    assert!(r.normal_equation_residual(x.view(), u.view()) < 1e-8);
}

#[test]
fn ridge_objective_rises_under_perturbation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = unit_rows(gaussian(30, 6, &mut rng));
    let u = unit_rows(gaussian(12, 6, &mut rng));
    let r = ridge_representation_f64(x.view(), u.view(), 5.0).unwrap();
    let best = residual_objective(x.view(), u.view(), r.c.view(), 5.0).unwrap();
    for _ in 0..100 {
        let mut p = gaussian(30, 12, &mut rng);
        let n = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        p *= 1e-3 / n;
        let moved = residual_objective(x.view(), u.view(), (&r.c + &p).view(), 5.0).unwrap();
        assert!(moved >= best);
    }
}

#[test]
fn hungarian_matches_all_permutations_of_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let t = random_table(6, &mut rng);
        let m = hungarian_match(&t).unwrap();
        assert_eq!(m.matched, brute_force_matching(&t));
        let total: u64 = m.permutation.iter().enumerate().map(|(r, &c)| t[[r, c]]).sum();
        assert_eq!(total, m.matched);
    }
}

#[test]
fn knn_matches_full_cosine_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let c = gaussian(100, 10, &mut rng);
    let g = knn_graph(c.view(), 7).unwrap();
    for i in 0..100 {
        let mut all: Vec<(usize, f64)> = (0..100)
            .filter(|&j| j != i)
            .map(|j| (j, cos(c.row(i), c.row(j))))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<usize> = all[..7].iter().map(|p| p.0).collect();
        assert_eq!(g.indices[i], want, "row {i}");
    }
}

#[test]
fn agreement_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let c = gaussian(80, 6, &mut rng);
    let g = knn_graph(c.view(), 5).unwrap();
    let labels = LabelVector::new((0..80).map(|_| rng.random_range(0..4)).collect(), 4).unwrap();
    let counts = agreement_counts(&labels, &g).unwrap();
    for i in 0..80 {
        let mut n = 0;
        for &j in &g.indices[i] {
            if labels.values()[j] == labels.values()[i] {
                n += 1;
            }
        }
        assert_eq!(counts[i], n);
    }
}

#[test]
fn fine_centers_are_partition_means_and_nouns_route_by_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = unit_rows(gaussian(300, 8, &mut rng));
    let xe = EmbeddingMatrix::from_f64(x.view(), true).unwrap();
    let fine = compute_fine_centers(&xe, 5, &KMeansConfig::default()).unwrap();
    for r in 0..5 {
        let members: Vec<usize> = (0..300).filter(|&i| fine.assignment[i] == r).collect();
        for col in 0..8 {
            let mean = members.iter().map(|&i| xe.values()[[i, col]] as f64).sum::<f64>() / members.len() as f64;
            assert!((fine.centers[[r, col]] - mean).abs() < 1e-6);
        }
    }

    let w = unit_rows(gaussian(50, 8, &mut rng));
    let nouns = vocab(&w);
    let routed = assign_nouns(&nouns, &fine).unwrap();
    let wf = nouns.embeddings().to_f64();
    for i in 0..50 {
        let mut best = 0;
        for r in 1..5 {
            if cos(wf.row(i), fine.centers.row(r)) > cos(wf.row(i), fine.centers.row(best)) {
                best = r;
            }
        }
        assert_eq!(routed[i], best);
    }

    let sel = select_candidates(&nouns, &fine, 3).unwrap();
    for r in 0..5 {
        let mut mine: Vec<(usize, f64)> = (0..50)
            .filter(|&i| routed[i] == r)
            .map(|i| (i, cos(wf.row(i), fine.centers.row(r))))
            .collect();
        mine.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let want: Vec<usize> = mine.iter().take(3).map(|p| p.0).collect();
        assert_eq!(sel.per_center_top[r], want);
    }
}

#[test]
fn kmeans_labels_are_nearest_centers() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = gaussian(200, 5, &mut rng);
    let r = kmeans(x.view(), 4, &KMeansConfig::default()).unwrap();
    for i in 0..200 {
        let d = |k: usize| (0..5).map(|c| (x[[i, c]] - r.centers[[k, c]]).powi(2)).sum::<f64>();
        let mine = d(r.labels.values()[i]);
        for k in 0..4 {
            assert!(mine <= d(k) + 1e-12);
        }
    }
}

#[test]
fn center_assignment_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = gaussian(60, 7, &mut rng);
    let s = SemanticCenters::new(gaussian(5, 7, &mut rng), 0.01).unwrap();
    let labels = assign(x.view(), &s).unwrap();
    for i in 0..60 {
        let scores: Vec<f64> = (0..5).map(|k| cos(x.row(i), s.matrix().row(k))).collect();
        let best = (0..5).fold(0, |b, k| if scores[k] > scores[b] { k } else { b });
        assert_eq!(labels.values()[i], best);
    }
}

#[test]
fn random_labelings_have_near_zero_ari() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let truth = LabelVector::new((0..500).map(|i| i % 10).collect(), 10).unwrap();
        let pred = LabelVector::new((0..500).map(|_| rng.random_range(0..10)).collect(), 10).unwrap();
        let m = evaluate(&pred, &truth).unwrap();
        assert!(m.ari.abs() <= 0.05, "seed {seed}: ari {}", m.ari);
    }
}
