//! Mini-batch SGD over the semantic centers with a cosine-annealed step.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_and_grad, Batch, ConsistencyOn, LabeledSample, LossSwitches, UnlabeledSample};
use super::{SemanticCenters, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::io::ViewBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// GCE exponent.
    pub q: f64,
    /// Consistency weight.
    pub lambda1: f64,
    /// Entropy weight.
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step size; annealed per epoch as `lr0·(1 + cos(π e/E))/2`.
    pub lr0: f64,
    pub temperature: f64,
    pub seed: u64,
    pub switches: LossSwitches,
    pub consistency_on: ConsistencyOn,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            q: 0.8,
            lambda1: 2.0,
            lambda2: 0.1,
            epochs: 20,
            batch_size: 32,
            lr0: 2e-3,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            switches: LossSwitches::default(),
            consistency_on: ConsistencyOn::Softmax,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q must lie in (0, 1], got {}", self.q));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.lr0;
        }
        let t = epoch as f64 / self.epochs as f64;
        0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub sup: f64,
    pub con: f64,
    pub ent: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub centers: SemanticCenters,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    /// Mean of the supervised term per epoch.
    pub fn epoch_mean_sup(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        let mut sums = vec![(0.0, 0usize); epochs];
        for r in &self.trace {
            sums[r.epoch].0 += r.sup;
            sums[r.epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// CSV columns: `step,sup,con,ent,total,lr`.
pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::from("step,sup,con,ent,total,lr\n");
    for r in trace {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.step, r.sup, r.con, r.ent, r.total, r.lr
        )
        .expect("writing to String");
    }
    crate::io::write_bytes(path, out.as_bytes())
}

fn pick_view(blocks: usize, rng: &mut ChaCha8Rng) -> usize {
    if blocks <= 1 {
        0
    } else {
        rng.random_range(0..blocks)
    }
}

/// Optimizes `init` over `D_L` (sample index, pseudo-label) and `D_U`.
///
/// An epoch walks `D_L` once in shuffled mini-batches; each step pairs the
/// labeled batch with the next `batch_size` samples of a shuffled `D_U`
/// cycle. Every sample draws one strong and one weak view uniformly per
/// step. Without strong views the base features stand in for them.
pub fn train_centers(
    views: &ViewBundle,
    labeled: &[(usize, usize)],
    unlabeled: &[usize],
    init: SemanticCenters,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptySelection { tau: f64::NAN });
    }
    let con_needed = config.switches.con && !unlabeled.is_empty();
    if con_needed && views.strong().is_empty() {
        return Err(Error::MissingView("consistency loss needs strong views".into()));
    }
    if con_needed && views.weak().is_empty() {
        return Err(Error::MissingView("consistency loss needs weak views".into()));
    }
    if views.base().dim() != init.dim() {
        return Err(Error::DimMismatch(format!(
            "features have dim {}, centers {}",
            views.base().dim(),
            init.dim()
        )));
    }
    let strong: Vec<Array2<f64>> = if views.strong().is_empty() {
        vec![views.base().to_f64()]
    } else {
        views.strong().iter().map(|m| m.to_f64()).collect()
    };
    let weak: Vec<Array2<f64>> = views.weak().iter().map(|m| m.to_f64()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centers = init;
    let mut trace = Vec::new();
    let mut dl: Vec<(usize, usize)> = labeled.to_vec();
    let mut du: Vec<usize> = unlabeled.to_vec();
    du.shuffle(&mut rng);
    let mut du_cursor = 0;
    let bs = config.batch_size;

    for epoch in 0..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        dl.shuffle(&mut rng);
        for chunk in dl.chunks(bs) {
            let mut batch = Batch::default();
            for &(i, label) in chunk {
                let v = pick_view(strong.len(), &mut rng);
                batch.labeled.push(LabeledSample {
                    view: strong[v].row(i).to_owned(),
                    label,
                });
            }
            if !du.is_empty() && !weak.is_empty() {
                for _ in 0..bs.min(du.len()) {
                    if du_cursor == du.len() {
                        du.shuffle(&mut rng);
                        du_cursor = 0;
                    }
                    let i = du[du_cursor];
                    du_cursor += 1;
                    let sv = pick_view(strong.len(), &mut rng);
                    let wv = pick_view(weak.len(), &mut rng);
                    batch.unlabeled.push(UnlabeledSample {
                        strong: strong[sv].row(i).to_owned(),
                        weak: weak[wv].row(i).to_owned(),
                    });
                }
            }
            let (loss, grad) = total_loss_and_grad(
                &batch,
                &centers,
                config.q,
                config.lambda1,
                config.lambda2,
                config.switches,
                config.consistency_on,
            )?;
            let step = centers.step();
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergenceDetected { step, loss: loss.total });
            }
            centers.apply_update(&grad, lr)?;
            trace.push(TraceRow {
                step,
                epoch,
                sup: loss.sup,
                con: loss.con,
                ent: loss.ent,
                total: loss.total,
                lr,
            });
        }
    }
    Ok(TrainOutcome { centers, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::EmbeddingMatrix;
    use ndarray::array;

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at_epoch(0), 2e-3);
        assert!((c.lr_at_epoch(10) - 1e-3).abs() < 1e-15);
        assert!(c.lr_at_epoch(19) < 2e-5);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let base = EmbeddingMatrix::new(array![[1.0f32, 0.0], [0.0, 1.0]], true).unwrap();
        let views = ViewBundle::new(base.clone(), vec![base.clone()], vec![base]).unwrap();
        let init = SemanticCenters::new(array![[0.8, 0.6], [0.6, 0.8]], 0.01).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_centers(&views, &[(0, 0), (1, 1)], &[], init.clone(), &cfg).unwrap();
        assert_eq!(out.centers, init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn missing_weak_views_rejected() {
        let base = EmbeddingMatrix::new(array![[1.0f32, 0.0], [0.0, 1.0]], true).unwrap();
        let views = ViewBundle::new(base.clone(), vec![base], vec![]).unwrap();
        let init = SemanticCenters::new(array![[1.0, 0.0], [0.0, 1.0]], 0.01).unwrap();
        let err = train_centers(&views, &[(0, 0)], &[1], init, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingView(_)));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            TrainConfig {
                q: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda1: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn trace_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let row = TraceRow {
            step: 0,
            epoch: 0,
            sup: 0.5,
            con: 1.0,
            ent: 0.1,
            total: 2.49,
            lr: 2e-3,
        };
        write_trace_csv(&[row], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,sup,con,ent,total,lr\n0,5e-1,"));
    }
}
