//! Image–text representation by ridge regression.
//!
//! Every image feature is reconstructed from the whole candidate set,
//!
//! ```text
//! min_C ‖X − C U‖²_F + γ‖C‖²_F   ⇒   C = X Uᵀ (U Uᵀ + γ I_M)⁻¹
//! ```
//!
//! and the rows of `C` become the new sample representations. The `M×M`
//! Gram system is factored once by Cholesky and each row of `C` is found by
//! two triangular solves, so no inverse is ever formed.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, VocabSet};
use crate::linalg::{frobenius, Cholesky};

pub const DEFAULT_GAMMA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReprMatrix {
    pub c: Array2<f64>,
    pub gamma: f64,
    /// `(N, M, d)`.
    pub source_dims: (usize, usize, usize),
}

/// Factored `(U Uᵀ + γI)` for a fixed candidate set.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    u: Array2<f64>,
    gamma: f64,
    chol: Cholesky,
}

impl RidgeSolver {
    pub fn new(u: ArrayView2<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        let mut gram = u.dot(&u.t());
        for i in 0..gram.nrows() {
            gram[[i, i]] += gamma;
        }
        Ok(Self {
            u: u.to_owned(),
            gamma,
            chol: Cholesky::factor(gram.view())?,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Ridge coefficients for each row of `x`.
    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.u.ncols() {
            return Err(Error::DimMismatch(format!(
                "image dim {} vs noun dim {}",
                x.ncols(),
                self.u.ncols()
            )));
        }
        let mut c = x.dot(&self.u.t());
        c.axis_iter_mut(Axis(0))
            .into_par_iter()
            .for_each(|row| self.chol.solve_in_place(row));
        if let Some((idx, _)) = c.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: idx / c.ncols(),
                col: idx % c.ncols(),
            });
        }
        Ok(c)
    }
}

pub fn ridge_representation(x: &EmbeddingMatrix, u: &VocabSet, gamma: f64) -> Result<ReprMatrix> {
    ridge_representation_f64(x.to_f64().view(), u.embeddings().to_f64().view(), gamma)
}

pub fn ridge_representation_f64(x: ArrayView2<f64>, u: ArrayView2<f64>, gamma: f64) -> Result<ReprMatrix> {
    if x.ncols() != u.ncols() {
        return Err(Error::DimMismatch(format!(
            "image dim {} vs noun dim {}",
            x.ncols(),
            u.ncols()
        )));
    }
    let solver = RidgeSolver::new(u, gamma)?;
    Ok(ReprMatrix {
        c: solver.project(x)?,
        gamma,
        source_dims: (x.nrows(), u.nrows(), u.ncols()),
    })
}

/// `‖X − C U‖²_F + γ‖C‖²_F`.
pub fn residual_objective(x: ArrayView2<f64>, u: ArrayView2<f64>, c: ArrayView2<f64>, gamma: f64) -> Result<f64> {
    if c.nrows() != x.nrows() || c.ncols() != u.nrows() || x.ncols() != u.ncols() {
        return Err(Error::DimMismatch(format!(
            "X {:?}, U {:?}, C {:?}",
            x.dim(),
            u.dim(),
            c.dim()
        )));
    }
    let recon = &x - &c.dot(&u);
    let fit = recon.iter().map(|v| v * v).sum::<f64>();
    let reg = c.iter().map(|v| v * v).sum::<f64>();
    Ok(fit + gamma * reg)
}

impl ReprMatrix {
    /// `‖C(UUᵀ + γI) − XUᵀ‖_F / ‖XUᵀ‖_F` (absolute when `XUᵀ = 0`).
    pub fn normal_equation_residual(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> f64 {
        let mut gram = u.dot(&u.t());
        for i in 0..gram.nrows() {
            gram[[i, i]] += self.gamma;
        }
        let rhs = x.dot(&u.t());
        let resid = self.c.dot(&gram) - &rhs;
        let scale = frobenius(rhs.view());
        let r = frobenius(resid.view());
        if scale > 0.0 {
            r / scale
        } else {
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn zero_images_give_zero_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(4, 3, &mut rng);
        let r = ridge_representation_f64(Array2::zeros((5, 3)).view(), u.view(), 5.0).unwrap();
        assert!(r.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        let r = ridge_representation_f64(array![[2.0]].view(), array![[1.0]].view(), 1.0).unwrap();
        assert!((r.c[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_c_objective_is_data_norm() {
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let u = array![[1.0, 0.0]];
        let v = residual_objective(x.view(), u.view(), Array2::zeros((2, 1)).view(), 5.0).unwrap();
        assert_eq!(v, 15.0);
    }

    #[test]
    fn dims_checked() {
        let x = array![[1.0, 2.0]];
        let u = array![[1.0, 0.0, 0.0]];
        assert!(matches!(
            ridge_representation_f64(x.view(), u.view(), 5.0),
            Err(Error::DimMismatch(_))
        ));
        assert!(residual_objective(x.view(), array![[1.0, 0.0]].view(), Array2::zeros((1, 2)).view(), 1.0).is_err());
    }

    #[test]
    fn non_positive_gamma_rejected() {
        let x = array![[1.0]];
        assert!(ridge_representation_f64(x.view(), x.view(), 0.0).is_err());
        assert!(ridge_representation_f64(x.view(), x.view(), -1.0).is_err());
    }

    #[test]
    fn non_finite_nouns_fail_factorization() {
        let x = array![[1.0, 0.0]];
        let u = array![[f64::NAN, 0.0]];
        assert!(matches!(
            ridge_representation_f64(x.view(), u.view(), 5.0),
            Err(Error::FactorizationFailure { .. })
        ));
    }

    #[test]
    fn closed_form_is_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = crate::linalg::normalize_rows(random(30, 8, &mut rng).view());
        let u = crate::linalg::normalize_rows(random(12, 8, &mut rng).view());
        let r = ridge_representation_f64(x.view(), u.view(), 5.0).unwrap();
        let best = residual_objective(x.view(), u.view(), r.c.view(), 5.0).unwrap();
        for _ in 0..100 {
            let mut delta = random(30, 12, &mut rng);
            let scale = 1e-3 / frobenius(delta.view());
            delta.mapv_inplace(|v| v * scale);
            let perturbed = &r.c + &delta;
            let v = residual_objective(x.view(), u.view(), perturbed.view(), 5.0).unwrap();
            assert!(best <= v);
        }
        assert!(r.normal_equation_residual(x.view(), u.view()) < 1e-12);
    }

    #[test]
    fn larger_gamma_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = crate::linalg::normalize_rows(random(20, 6, &mut rng).view());
        let u = crate::linalg::normalize_rows(random(9, 6, &mut rng).view());
        let mut last = f64::INFINITY;
        for gamma in [0.01, 0.1, 1.0, 5.0, 50.0, 1e3] {
            let n = frobenius(ridge_representation_f64(x.view(), u.view(), gamma).unwrap().c.view());
            assert!(n <= last);
            last = n;
        }
        let huge = ridge_representation_f64(x.view(), u.view(), 1e9).unwrap();
        assert!(frobenius(huge.c.view()) < 1e-6);
    }
}
