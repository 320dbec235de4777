//! Small dense helpers: row normalization, cosine, and a Cholesky solver.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};

use crate::error::{Error, Result};

/// Copy of `m` with unit-norm rows; zero rows stay zero.
pub fn normalize_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor `L` of a symmetric positive-definite
/// matrix, `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::FactorizationFailure { pivot: j, value: diag });
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    /// Solves `A y = b` in place by forward then backward substitution.
    pub fn solve_in_place(&self, mut b: ArrayViewMut1<f64>) {
        let l = &self.lower;
        let n = l.nrows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[[i, k]] * b[k];
            }
            b[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l[[k, i]] * b[k];
            }
            b[i] = s / l[[i, i]];
        }
    }
}
