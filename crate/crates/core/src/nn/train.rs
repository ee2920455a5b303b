use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::model::{input_tensor, Branch, Model};
use super::{NnError, Tensor};
use crate::par;
use crate::simulator::splitmix64;
use crate::wave::{compute_metrics, Dataset, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    /// Std of Gaussian noise added to each normalized training input.
    pub noise_augment_sigma: f64,
    pub seed: u64,
    /// Start each output bias at the mean training target.
    pub init_head_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            max_epochs: 30,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            noise_augment_sigma: 0.0,
            seed: 0,
            init_head_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(NnError::BadConfig("batch_size and early_stop_patience must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::BadConfig(format!("learning_rate {}", self.learning_rate)));
        }
        if !(self.noise_augment_sigma >= 0.0 && self.noise_augment_sigma.is_finite()) {
            return Err(NnError::BadConfig(format!("noise_augment_sigma {}", self.noise_augment_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured in train mode while fitting.
    pub train_loss: Vec<f64>,
    /// Infer-mode validation loss after each epoch.
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Last epoch run.
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    pub val_metrics: Vec<Metrics>,
}

/// Adaptive-moment optimizer state for one branch.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
}

impl Adam {
    pub fn new(branch: &Branch, lr: f64) -> Self {
        let zeros: Vec<Vec<Vec<f64>>> = branch
            .layers
            .iter()
            .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, branch: &mut Branch, grads: &[Vec<Vec<f64>>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (li, layer) in branch.layers.iter_mut().enumerate() {
            for (pi, p) in layer.params_mut().into_iter().enumerate() {
                let (m, v, g) = (&mut self.m[li][pi], &mut self.v[li][pi], &grads[li][pi]);
                for j in 0..p.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                    p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// Mean over the three targets of each target's mean absolute error.
pub fn mae_loss(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> f64 {
    let n = pred.len() as f64;
    (0..3)
        .map(|k| pred.iter().zip(truth).map(|(p, t)| (p[k] - t[k]).abs()).sum::<f64>() / n)
        .sum::<f64>()
        / 3.0
}

/// One optimizer step of a branch on a batch; returns the branch MAE.
fn branch_step(branch: &mut Branch, adam: &mut Adam, x: &Tensor, y: &[f64]) -> Result<f64, NnError> {
    let (out, caches) = branch.forward(x, Mode::Train)?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = out
        .data
        .iter()
        .zip(y)
        .map(|(p, t)| {
            let r = p - t;
            loss += r.abs();
            // d/dp of mean over targets of the branch MAE
            if r > 0.0 {
                1.0 / (3.0 * n)
            } else if r < 0.0 {
                -1.0 / (3.0 * n)
            } else {
                0.0
            }
        })
        .collect();
    let g = Tensor::new(out.shape.clone(), grad)?;
    let (_, grads) = branch.backward(&g, &caches, Mode::Train)?;
    adam.step(branch, &grads);
    Ok(loss / n)
}

fn check_targets(ds: &Dataset) -> Result<Vec<[f64; 3]>, NnError> {
    if ds.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    Ok(ds.targets())
}

pub fn evaluate_predictions(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Vec<Metrics>, NnError> {
    (0..3)
        .map(|k| {
            let p: Vec<f64> = pred.iter().map(|r| r[k]).collect();
            let t: Vec<f64> = truth.iter().map(|r| r[k]).collect();
            Ok(compute_metrics(&p, &t)?)
        })
        .collect()
}

/// Metrics of `depth`, `kd` and `bottom` predictions over a labeled dataset.
pub fn evaluate(m: &Model, ds: &Dataset) -> Result<Vec<Metrics>, NnError> {
    let truth = check_targets(ds)?;
    let x = input_tensor(&ds.waveforms(), m.config.input_len)?;
    evaluate_predictions(&m.predict_tensor(&x)?, &truth)
}

/// [`train`] with a callback after every epoch: `(epoch, train_loss, val_loss)`.
pub fn train_observed(
    m: &mut Model,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, f64, f64),
) -> Result<TrainReport, NnError> {
    cfg.validate()?;
    let train_y = check_targets(train_ds)?;
    let val_y = check_targets(val_ds)?;
    let input_len = m.config.input_len;
    let train_x = input_tensor(&train_ds.waveforms(), input_len)?;
    let val_x = input_tensor(&val_ds.waveforms(), input_len)?;
    let n = train_y.len();

    if cfg.init_head_bias {
        for (k, b) in m.branches.iter_mut().enumerate() {
            let mean = train_y.iter().map(|t| t[k]).sum::<f64>() / n as f64;
            if let Some(head) = b.head_mut() {
                head.bias[0] = mean;
            }
        }
    }
    let mut adams: Vec<Adam> = m.branches.iter().map(|b| Adam::new(b, cfg.learning_rate)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
        best_val_loss: f64::INFINITY,
        val_metrics: Vec::new(),
    };
    let mut best = m.clone();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let mut x = train_x.select_rows(idx);
            if cfg.noise_augment_sigma > 0.0 {
                for v in x.data.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += cfg.noise_augment_sigma * z;
                }
            }
            let mut work: Vec<(&mut Branch, &mut Adam, f64)> = m
                .branches
                .iter_mut()
                .zip(adams.iter_mut())
                .map(|(b, a)| (b, a, 0.0))
                .collect();
            let results = std::sync::Mutex::new(vec![Ok(()); 3]);
            par::for_each_mut(&mut work, |k, (b, a, loss)| {
                let y: Vec<f64> = idx.iter().map(|&i| train_y[i][k]).collect();
                match branch_step(b, a, &x, &y) {
                    Ok(l) => *loss = l,
                    Err(e) => results.lock().expect("poisoned")[k] = Err(e),
                }
            });
            for r in results.into_inner().expect("poisoned") {
                r?;
            }
            let batch_loss = work.iter().map(|w| w.2).sum::<f64>() / 3.0;
            loss_sum += batch_loss * idx.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        let val_pred = m.predict_tensor(&val_x)?;
        let val_loss = mae_loss(&val_pred, &val_y);
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;
        observer(epoch, train_loss, val_loss);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::DivergedLoss {
                epoch,
                report: Box::new(report),
            });
        }
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best = m.clone();
        } else if epoch - report.best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    *m = best;
    if report.best_epoch > 0 {
        report.val_metrics = evaluate_predictions(&m.predict_tensor(&val_x)?, &val_y)?;
    }
    Ok(report)
}

/// Mini-batch training of all three branches on the mean of their MAEs.
/// Stops after `early_stop_patience` epochs without a validation improvement
/// and leaves `m` holding the weights of the best validation epoch.
pub fn train(m: &mut Model, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport, NnError> {
    train_observed(m, train_ds, val_ds, cfg, &mut |_, _, _| {})
}
