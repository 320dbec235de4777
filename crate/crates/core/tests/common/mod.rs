//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use laic_core::centers::{
    loss_con_and_grad, loss_ent_and_grad, loss_sup_and_grad, total_loss_and_grad, Batch, ConsistencyOn, LabeledSample,
    LossSwitches, SemanticCenters, UnlabeledSample,
};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
}

// ---- gradient oracle -------------------------------------------------------

pub struct GradCase {
    pub centers: SemanticCenters,
    pub batch: Batch,
    pub q: f64,
    pub mode: ConsistencyOn,
}

pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=6);
    let d = rng.random_range(2..=8);
    let nl = rng.random_range(1..=5);
    let nu = rng.random_range(1..=5);
    let t = [0.05, 0.1, 0.3, 1.0][rng.random_range(0..4)];
    let q = [0.3, 0.8, 1.0][rng.random_range(0..3)];
    let mode = if rng.random_bool(0.5) {
        ConsistencyOn::Logits
    } else {
        ConsistencyOn::Softmax
    };
    let centers = SemanticCenters::new(gaussian(k, d, &mut rng), t).unwrap();
    let labeled = (0..nl)
        .map(|_| LabeledSample {
            view: gaussian_vec(d, &mut rng),
            label: rng.random_range(0..k),
        })
        .collect();
    let unlabeled = (0..nu)
        .map(|_| {
            let strong = gaussian_vec(d, &mut rng);
            let weak = &strong + &gaussian_vec(d, &mut rng).mapv(|v| 0.3 * v);
            UnlabeledSample { strong, weak }
        })
        .collect();
    GradCase {
        centers,
        batch: Batch { labeled, unlabeled },
        q,
        mode,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Sup,
    Con,
    Ent,
    Total,
}

pub const TERMS: [Term; 4] = [Term::Sup, Term::Con, Term::Ent, Term::Total];

pub fn eval_term(case: &GradCase, s: &SemanticCenters, term: Term) -> (f64, Array2<f64>) {
    let strong: Vec<ArrayView1<f64>> = case
        .batch
        .labeled
        .iter()
        .map(|l| l.view.view())
        .chain(case.batch.unlabeled.iter().map(|u| u.strong.view()))
        .collect();
    match term {
        Term::Sup => loss_sup_and_grad(&case.batch.labeled, s, case.q).unwrap(),
        Term::Con => loss_con_and_grad(&case.batch.unlabeled, s, case.mode).unwrap(),
        Term::Ent => loss_ent_and_grad(&strong, s).unwrap(),
        Term::Total => {
            let (b, g) =
                total_loss_and_grad(&case.batch, s, case.q, 2.0, 0.1, LossSwitches::default(), case.mode).unwrap();
            (b.total, g)
        }
    }
}

/// Largest entrywise relative error between the analytic gradient and a
/// central difference with step `h`. Entries whose magnitudes are both
/// below `floor` are compared absolutely against `floor`.
pub fn fd_relative_error(case: &GradCase, term: Term, h: f64, floor: f64) -> f64 {
    let s0 = case.centers.matrix().to_owned();
    let t = case.centers.temperature();
    let (_, analytic) = eval_term(case, &case.centers, term);
    let mut worst: f64 = 0.0;
    for i in 0..s0.nrows() {
        for j in 0..s0.ncols() {
            let mut plus = s0.clone();
            plus[[i, j]] += h;
            let mut minus = s0.clone();
            minus[[i, j]] -= h;
            // loss depends on rows only through their direction, so the
            // normalization inside `new` does not change its value
            let fp = eval_term(case, &SemanticCenters::new(plus, t).unwrap(), term).0;
            let fm = eval_term(case, &SemanticCenters::new(minus, t).unwrap(), term).0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[[i, j]];
            let scale = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

// ---- ridge oracle ----------------------------------------------------------

/// Plain gradient descent on `‖X − CU‖² + γ‖C‖²` from zero, step `1/L` with
/// `L` bounded through the Frobenius norm of `U`.
pub fn ridge_by_gradient_descent(x: &Array2<f64>, u: &Array2<f64>, gamma: f64) -> Array2<f64> {
    let l = 2.0 * (u.iter().map(|v| v * v).sum::<f64>() + gamma);
    let mut c = Array2::<f64>::zeros((x.nrows(), u.nrows()));
    for _ in 0..200_000 {
        let grad = (c.dot(u) - x).dot(&u.t()) * 2.0 + &c * (2.0 * gamma);
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.scaled_add(-1.0 / l, &grad);
        if gnorm < 1e-13 {
            break;
        }
    }
    c
}

pub fn relative_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

// ---- assignment oracle -----------------------------------------------------

/// Largest total over every permutation of the columns.
pub fn brute_force_matching(table: &Array2<u64>) -> u64 {
    fn go(table: &Array2<u64>, row: usize, used: &mut [bool], acc: u64, best: &mut u64) {
        if row == table.nrows() {
            *best = (*best).max(acc);
            return;
        }
        for col in 0..table.ncols() {
            if !used[col] {
                used[col] = true;
                go(table, row + 1, used, acc + table[[row, col]], best);
                used[col] = false;
            }
        }
    }
    let mut best = 0;
    go(table, 0, &mut vec![false; table.ncols()], 0, &mut best);
    best
}

pub fn random_table(k: usize, rng: &mut ChaCha8Rng) -> Array2<u64> {
    Array2::from_shape_fn((k, k), |_| rng.random_range(0..50))
}
