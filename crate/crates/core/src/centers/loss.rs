//! Semi-supervised objective over the semantic centers, with analytic
//! gradients.
//!
//! ```text
//! L = L_sup + λ₁ L_con − λ₂ L_ent
//! L_sup = mean_{D_L} (1 − p(ŷ | A_s(x))^q) / q
//! L_con = mean_{D_U} ‖P(A_s(x)) − P(A_w(x))‖²
//! L_ent = −Σ_k q(k) log q(k),   q(k) = mean p(k | A_s(x)) over the batch
//! ```
//!
//! Every term is first differentiated with respect to the logits of each
//! evaluated view; those are pushed through `∂ℓ_k/∂s_k = (x̂ − cos·ŝ_k)/(T‖s_k‖)`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::{cosines, softmax, SemanticCenters};
use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Debug, Clone)]
pub struct LabeledSample {
    /// Strong view of a high-quality sample.
    pub view: Array1<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct UnlabeledSample {
    pub strong: Array1<f64>,
    pub weak: Array1<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
}

impl Batch {
    /// Strong views of every sample, the population of the entropy term.
    fn strong_views(&self) -> Vec<ArrayView1<'_, f64>> {
        self.labeled
            .iter()
            .map(|s| s.view.view())
            .chain(self.unlabeled.iter().map(|s| s.strong.view()))
            .collect()
    }
}

/// What the consistency term compares between two views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyOn {
    /// Raw logit vectors `(ℓ_1, …, ℓ_K)`. With free unit-norm centers this
    /// term is minimized by rotating every center toward the leading
    /// principal direction of the data, so it is not the default.
    Logits,
    /// Softmax distributions.
    #[default]
    Softmax,
}

/// Ablation switches; a disabled term gets zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSwitches {
    pub sup: bool,
    pub con: bool,
    pub ent: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            sup: true,
            con: true,
            ent: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup: f64,
    pub con: f64,
    pub ent: f64,
    /// `w_sup·sup + λ₁·con − λ₂·ent`, with disabled terms weighted 0.
    pub total: f64,
}

/// Logits, probabilities, and the pieces needed to backpropagate one view.
struct ViewEval {
    unit_x: Array1<f64>,
    cos: Array1<f64>,
    logits: Array1<f64>,
    probs: Array1<f64>,
}

struct Geometry<'a> {
    s: ndarray::ArrayView2<'a, f64>,
    norms: Vec<f64>,
    inv_t: f64,
}

impl<'a> Geometry<'a> {
    fn new(centers: &'a SemanticCenters) -> Self {
        let s = centers.matrix();
        Self {
            norms: s.axis_iter(Axis(0)).map(norm).collect(),
            s,
            inv_t: 1.0 / centers.temperature(),
        }
    }

    fn eval(&self, x: ArrayView1<f64>) -> Result<ViewEval> {
        let cos = cosines(x, self.s)?;
        let logits = cos.mapv(|c| c * self.inv_t);
        let probs = softmax(&logits);
        let nx = norm(x);
        Ok(ViewEval {
            unit_x: x.mapv(|v| v / nx),
            cos,
            logits,
            probs,
        })
    }

    /// `grad[k] += dlogit[k] · ∂ℓ_k/∂s_k`.
    fn backprop(&self, view: &ViewEval, dlogit: &Array1<f64>, grad: &mut Array2<f64>) {
        for (k, mut g) in grad.axis_iter_mut(Axis(0)).enumerate() {
            let coef = dlogit[k] * self.inv_t / self.norms[k];
            if coef == 0.0 {
                continue;
            }
            let cos_over_norm = view.cos[k] / self.norms[k];
            for ((gj, &xj), &sj) in g.iter_mut().zip(view.unit_x.iter()).zip(self.s.row(k).iter()) {
                *gj += coef * (xj - cos_over_norm * sj);
            }
        }
    }
}

fn log_softmax_at(logits: &Array1<f64>, k: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

pub fn loss_sup_and_grad(batch: &[LabeledSample], centers: &SemanticCenters, q: f64) -> Result<(f64, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("GCE exponent q must lie in (0, 1], got {q}")));
    }
    let geom = Geometry::new(centers);
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(centers.matrix().raw_dim());
    let mut value = 0.0;
    for sample in batch {
        if sample.label >= centers.k() {
            return Err(Error::LabelOutOfRange {
                index: 0,
                value: sample.label,
                num_classes: centers.k(),
            });
        }
        let v = geom.eval(sample.view.view())?;
        let p_q = (q * log_softmax_at(&v.logits, sample.label)).exp();
        value += (1.0 - p_q) / q;
        // ∂/∂ℓ_j (1 − p_y^q)/q = −p_y^q (δ_jy − p_j)
        let mut dlogit = v.probs.mapv(|p| p_q * p / n);
        dlogit[sample.label] -= p_q / n;
        geom.backprop(&v, &dlogit, &mut grad);
    }
    Ok((value / n, grad))
}

/// Generalized cross-entropy on strong views of `D_L` samples.
pub fn loss_sup(batch: &[LabeledSample], centers: &SemanticCenters, q: f64) -> Result<f64> {
    loss_sup_and_grad(batch, centers, q).map(|(v, _)| v)
}

pub fn loss_con_and_grad(
    batch: &[UnlabeledSample],
    centers: &SemanticCenters,
    mode: ConsistencyOn,
) -> Result<(f64, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let geom = Geometry::new(centers);
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(centers.matrix().raw_dim());
    let mut value = 0.0;
    for sample in batch {
        let s = geom.eval(sample.strong.view())?;
        let w = geom.eval(sample.weak.view())?;
        let (a, b) = match mode {
            ConsistencyOn::Logits => (&s.logits, &w.logits),
            ConsistencyOn::Softmax => (&s.probs, &w.probs),
        };
        let diff = a - b;
        value += diff.dot(&diff);
        let g = diff.mapv(|d| 2.0 * d / n);
        let (ds, dw) = match mode {
            ConsistencyOn::Logits => (g.clone(), -&g),
            ConsistencyOn::Softmax => (softmax_vjp(&s.probs, &g), softmax_vjp(&w.probs, &(-&g))),
        };
        geom.backprop(&s, &ds, &mut grad);
        geom.backprop(&w, &dw, &mut grad);
    }
    Ok((value / n, grad))
}

/// Squared distance between the strong- and weak-view predictions of `D_U`
/// samples.
pub fn loss_con(batch: &[UnlabeledSample], centers: &SemanticCenters, mode: ConsistencyOn) -> Result<f64> {
    loss_con_and_grad(batch, centers, mode).map(|(v, _)| v)
}

/// `Jᵀ g` for the softmax Jacobian at `p`.
fn softmax_vjp(p: &Array1<f64>, g: &Array1<f64>) -> Array1<f64> {
    let dot = p.dot(g);
    p * &g.mapv(|gi| gi - dot)
}

fn plogq(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * q.ln()
    }
}

pub fn loss_ent_and_grad(views: &[ArrayView1<f64>], centers: &SemanticCenters) -> Result<(f64, Array2<f64>)> {
    if views.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let geom = Geometry::new(centers);
    let n = views.len() as f64;
    let evals = views.iter().map(|x| geom.eval(*x)).collect::<Result<Vec<_>>>()?;
    let mut mean = Array1::<f64>::zeros(centers.k());
    for v in &evals {
        mean += &v.probs;
    }
    mean.mapv_inplace(|p| p / n);
    let value = -mean.iter().map(|&q| plogq(q, q)).sum::<f64>();

    // ∂H/∂ℓ_ij = (1/n) p_ij (−log q_j + Σ_k p_ik log q_k)
    let mut grad = Array2::zeros(centers.matrix().raw_dim());
    for v in &evals {
        let avg_log: f64 = v.probs.iter().zip(mean.iter()).map(|(&p, &q)| plogq(p, q)).sum();
        let dlogit: Array1<f64> = v
            .probs
            .iter()
            .zip(mean.iter())
            .map(|(&p, &q)| (avg_log * p - plogq(p, q)) / n)
            .collect();
        geom.backprop(v, &dlogit, &mut grad);
    }
    Ok((value, grad))
}

/// Entropy of the batch-mean prediction; maximized during training.
pub fn loss_ent(views: &[ArrayView1<f64>], centers: &SemanticCenters) -> Result<f64> {
    loss_ent_and_grad(views, centers).map(|(v, _)| v)
}

/// Weighted objective and its gradient with respect to every center row.
///
/// Terms whose population is empty in this batch (no `D_L` or no `D_U`
/// members) contribute zero.
pub fn total_loss_and_grad(
    batch: &Batch,
    centers: &SemanticCenters,
    q: f64,
    lambda1: f64,
    lambda2: f64,
    switches: LossSwitches,
    mode: ConsistencyOn,
) -> Result<(LossBreakdown, Array2<f64>)> {
    if batch.labeled.is_empty() && batch.unlabeled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = Array2::zeros(centers.matrix().raw_dim());
    let mut total = 0.0;

    let sup = if batch.labeled.is_empty() {
        0.0
    } else {
        let (v, g) = loss_sup_and_grad(&batch.labeled, centers, q)?;
        if switches.sup {
            grad += &g;
            total += v;
        }
        v
    };
    let con = if batch.unlabeled.is_empty() {
        0.0
    } else {
        let (v, g) = loss_con_and_grad(&batch.unlabeled, centers, mode)?;
        if switches.con {
            grad.scaled_add(lambda1, &g);
            total += lambda1 * v;
        }
        v
    };
    let (ent, g) = loss_ent_and_grad(&batch.strong_views(), centers)?;
    if switches.ent {
        grad.scaled_add(-lambda2, &g);
        total -= lambda2 * ent;
    }
    Ok((LossBreakdown { sup, con, ent, total }, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn centers(s: Array2<f64>, t: f64) -> SemanticCenters {
        SemanticCenters::new(s, t).unwrap()
    }

    #[test]
    fn confident_predictions_have_zero_sup() {
        let c = centers(array![[1.0, 0.0], [-1.0, 0.0]], 0.001);
        let batch = vec![LabeledSample {
            view: array![1.0, 0.0],
            label: 0,
        }];
        let (v, g) = loss_sup_and_grad(&batch, &c, 0.8).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x.abs() < 1e-300));
    }

    #[test]
    fn gce_at_half_probability() {
        // two centers with equal cosine: p = 0.5
        let c = centers(array![[1.0, 0.0], [0.0, 1.0]], 1.0);
        let batch = vec![LabeledSample {
            view: array![1.0, 1.0],
            label: 1,
        }];
        let v = loss_sup(&batch, &c, 0.8).unwrap();
        let oracle = (1.0 - 0.5f64.powf(0.8)) / 0.8;
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.532064).abs() < 1e-6);
        let v1 = loss_sup(&batch, &c, 1.0).unwrap();
        assert!((v1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sup_errors() {
        let c = centers(array![[1.0, 0.0]], 1.0);
        assert!(matches!(loss_sup(&[], &c, 0.8), Err(Error::EmptyBatch)));
        let b = vec![LabeledSample {
            view: array![1.0, 0.0],
            label: 0,
        }];
        assert!(loss_sup(&b, &c, 0.0).is_err());
        assert!(loss_sup(&b, &c, 1.5).is_err());
    }

    #[test]
    fn identical_views_have_zero_con() {
        let c = centers(array![[1.0, 0.0], [0.3, 0.7]], 0.01);
        let b = vec![UnlabeledSample {
            strong: array![0.2, 0.9],
            weak: array![0.2, 0.9],
        }];
        for mode in [ConsistencyOn::Logits, ConsistencyOn::Softmax] {
            assert_eq!(loss_con(&b, &c, mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_center_con_is_squared_logit_gap() {
        let c = centers(array![[1.0, 0.0]], 0.5);
        let b = vec![UnlabeledSample {
            strong: array![1.0, 0.0],
            weak: array![0.0, 1.0],
        }];
        // logits 2 and 0
        assert!((loss_con(&b, &c, ConsistencyOn::Logits).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(loss_con(&b, &c, ConsistencyOn::Softmax).unwrap(), 0.0);
    }

    #[test]
    fn uniform_mean_prediction_has_max_entropy() {
        let s = Array2::from_shape_fn((10, 10), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let c = centers(s, 0.01);
        let views: Vec<Array1<f64>> = (0..10)
            .map(|i| Array1::from_shape_fn(10, |j| if i == j { 1.0 } else { 0.0 }))
            .collect();
        let refs: Vec<_> = views.iter().map(|v| v.view()).collect();
        let h = loss_ent(&refs, &c).unwrap();
        assert!((h - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn collapsed_prediction_has_zero_entropy() {
        let c = centers(array![[1.0, 0.0], [-1.0, 0.0]], 0.001);
        let views = [array![1.0, 0.0], array![1.0, 0.1]];
        let refs: Vec<_> = views.iter().map(|v| v.view()).collect();
        assert!(loss_ent(&refs, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn breakdown_recombines_with_default_weights() {
        let c = centers(array![[1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.0, 0.4, 1.0]], 0.1);
        let batch = Batch {
            labeled: vec![LabeledSample {
                view: array![0.9, 0.1, 0.2],
                label: 0,
            }],
            unlabeled: vec![UnlabeledSample {
                strong: array![0.1, 0.8, 0.5],
                weak: array![0.2, 0.7, 0.4],
            }],
        };
        let (b, _) = total_loss_and_grad(
            &batch,
            &c,
            0.8,
            2.0,
            0.1,
            LossSwitches::default(),
            ConsistencyOn::Logits,
        )
        .unwrap();
        assert!((b.total - (b.sup + 2.0 * b.con - 0.1 * b.ent)).abs() < 1e-12);
    }

    #[test]
    fn perfect_confidence_without_regularizers_has_zero_gradient() {
        let c = centers(array![[1.0, 0.0], [0.0, 1.0]], 0.001);
        let batch = Batch {
            labeled: vec![
                LabeledSample {
                    view: array![1.0, 0.0],
                    label: 0,
                },
                LabeledSample {
                    view: array![0.0, 1.0],
                    label: 1,
                },
            ],
            unlabeled: Vec::new(),
        };
        let (b, g) = total_loss_and_grad(
            &batch,
            &c,
            0.8,
            0.0,
            0.0,
            LossSwitches::default(),
            ConsistencyOn::Logits,
        )
        .unwrap();
        assert_eq!(b.sup, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
