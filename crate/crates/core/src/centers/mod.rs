//! Continuous semantic centers.
//!
//! Each cluster `k` owns a unit vector `s_k` in the shared embedding space.
//! A feature `x` scores `ℓ_k(x) = cos(x, s_k) / T` against every center, the
//! softmax of those logits is the assignment distribution, and the final
//! cluster is the center with the largest cosine.

mod loss;
mod train;

pub use loss::{
    loss_con, loss_con_and_grad, loss_ent, loss_ent_and_grad, loss_sup, loss_sup_and_grad, total_loss_and_grad, Batch,
    ConsistencyOn, LabeledSample, LossBreakdown, LossSwitches, UnlabeledSample,
};
pub use train::{train_centers, write_trace_csv, TraceRow, TrainConfig, TrainOutcome};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::io::LabelVector;
use crate::linalg::{argmax, norm, normalize_rows};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// Re-projected rows must stay within this of unit norm.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCenters {
    s: Array2<f64>,
    temperature: f64,
    step: usize,
}

impl SemanticCenters {
    /// Normalizes the rows of `s`; zero rows are rejected.
    pub fn new(s: Array2<f64>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if s.nrows() == 0 || s.ncols() == 0 {
            return Err(Error::DimensionZero("centers"));
        }
        if let Some(index) = s.axis_iter(Axis(0)).position(|r| norm(r) == 0.0) {
            return Err(Error::ZeroRow { index });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("non-finite center".into()));
        }
        Ok(Self {
            s: normalize_rows(s.view()),
            temperature,
            step: 0,
        })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.s.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.s
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn k(&self) -> usize {
        self.s.nrows()
    }

    pub fn dim(&self) -> usize {
        self.s.ncols()
    }

    /// `s ← normalize(s − lr·grad)`.
    pub(crate) fn apply_update(&mut self, grad: &Array2<f64>, lr: f64) -> Result<()> {
        self.s.scaled_add(-lr, grad);
        for (index, mut row) in self.s.axis_iter_mut(Axis(0)).enumerate() {
            let n = norm(row.view());
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroRow { index });
            }
            row.mapv_inplace(|v| v / n);
        }
        self.step += 1;
        Ok(())
    }

    pub fn max_norm_error(&self) -> f64 {
        self.s
            .axis_iter(Axis(0))
            .map(|r| (norm(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Cosine of `x` against every center.
pub(crate) fn cosines(x: ArrayView1<f64>, s: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.len() != s.ncols() {
        return Err(Error::DimMismatch(format!(
            "feature dim {} vs center dim {}",
            x.len(),
            s.ncols()
        )));
    }
    let nx = norm(x);
    if nx == 0.0 || !nx.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(s.axis_iter(Axis(0)).map(|sk| x.dot(&sk) / (nx * norm(sk))).collect())
}

/// `(ℓ_1, …, ℓ_K)` with `ℓ_k = cos(x, s_k) / T`.
pub fn logit_vector(x: ArrayView1<f64>, centers: &SemanticCenters) -> Result<Array1<f64>> {
    let t = centers.temperature;
    Ok(cosines(x, centers.matrix())?.mapv(|c| c / t))
}

pub(crate) fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|l| (l - max).exp());
    let z = exp.sum();
    exp / z
}

/// `p(k | x)`, the softmax of the logits.
pub fn predict_probs(x: ArrayView1<f64>, centers: &SemanticCenters) -> Result<Array1<f64>> {
    Ok(softmax(&logit_vector(x, centers)?))
}

/// Nearest center by cosine for every row, lowest index on ties.
pub fn assign(x: ArrayView2<f64>, centers: &SemanticCenters) -> Result<LabelVector> {
    let labels = x
        .axis_iter(Axis(0))
        .map(|row| cosines(row, centers.matrix()).map(|c| argmax(c.iter().copied())))
        .collect::<Result<Vec<_>>>()?;
    LabelVector::new(labels, centers.k())
}

/// Initial centers: per pseudo-class mean of the high-quality features.
///
/// Classes without high-quality members take the matching row of
/// `fallback` when given, otherwise the mean of every sample carrying that
/// pseudo-label.
pub fn init_centers(
    x: ArrayView2<f64>,
    labeled: &[(usize, usize)],
    pseudo: &LabelVector,
    fallback: Option<ArrayView2<f64>>,
    temperature: f64,
) -> Result<SemanticCenters> {
    let k = pseudo.num_classes();
    if pseudo.len() != x.nrows() {
        return Err(Error::LengthMismatch {
            left: pseudo.len(),
            right: x.nrows(),
        });
    }
    if let Some(f) = fallback {
        if f.dim() != (k, x.ncols()) {
            return Err(Error::DimMismatch(format!(
                "fallback centers {:?}, expected {:?}",
                f.dim(),
                (k, x.ncols())
            )));
        }
    }
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for &(i, label) in labeled {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                index: i,
                value: label,
                num_classes: k,
            });
        }
        let mut row = sums.row_mut(label);
        row += &x.row(i);
        counts[label] += 1;
    }
    for class in 0..k {
        if counts[class] > 0 {
            continue;
        }
        if let Some(f) = fallback {
            sums.row_mut(class).assign(&f.row(class));
            counts[class] = 1;
            continue;
        }
        for (i, &l) in pseudo.values().iter().enumerate() {
            if l == class {
                let mut row = sums.row_mut(class);
                row += &x.row(i);
                counts[class] += 1;
            }
        }
        if counts[class] == 0 {
            return Err(Error::InvariantViolation(format!(
                "pseudo-class {class} has no members to initialize from"
            )));
        }
    }
    SemanticCenters::new(sums, temperature)
}
