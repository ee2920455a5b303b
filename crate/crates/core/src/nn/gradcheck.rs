//! Central finite-difference check of layer gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv1d, Dense, Layer, Mode};
use super::{NnError, Tensor};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;
/// ReLU inputs this close to the kink are not checked.
pub const RELU_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1d,
    BatchNormTrain,
    BatchNormInfer,
    Relu,
    MaxPool,
    Flatten,
    Dense,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv1d,
        LayerKind::BatchNormTrain,
        LayerKind::BatchNormInfer,
        LayerKind::Relu,
        LayerKind::MaxPool,
        LayerKind::Flatten,
        LayerKind::Dense,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv1d => "conv1d",
            LayerKind::BatchNormTrain => "batchnorm_train",
            LayerKind::BatchNormInfer => "batchnorm_infer",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            LayerKind::BatchNormTrain => Mode::Train,
            _ => Mode::Infer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_error: self.max_rel_error.max(o.max_rel_error),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// A random small layer of `kind` and a matching input.
pub fn random_instance(kind: LayerKind, seed: u64) -> (Layer, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..4);
    let len = rng.random_range(2..9);
    let c = rng.random_range(1..4);
    match kind {
        LayerKind::Conv1d => {
            let f = rng.random_range(1..4);
            let k = [1, 2, 3, 5][rng.random_range(0..4)];
            let mut conv = Conv1d::new(c, f, k, &mut rng);
            conv.bias = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
            (Layer::Conv1d(conv), random_tensor(&mut rng, vec![b, len, c]))
        }
        LayerKind::BatchNormTrain | LayerKind::BatchNormInfer => {
            let mut bn = BatchNorm::new(c);
            bn.gamma = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            bn.beta = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            bn.running_mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            bn.running_var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            // train-mode statistics need more than one value per channel
            let b = b + 1;
            (Layer::BatchNorm(bn), random_tensor(&mut rng, vec![b, len, c]))
        }
        LayerKind::Relu => (Layer::Relu, random_tensor(&mut rng, vec![b, len, c])),
        LayerKind::MaxPool => (Layer::MaxPool, random_tensor(&mut rng, vec![b, len, c])),
        LayerKind::Flatten => (Layer::Flatten, random_tensor(&mut rng, vec![b, len, c])),
        LayerKind::Dense => {
            let n = rng.random_range(1..8);
            let u = rng.random_range(1..5);
            let mut d = Dense::new(n, u, 6.0, &mut rng);
            d.bias = (0..u).map(|_| rng.random_range(-1.0..1.0)).collect();
            (Layer::Dense(d), random_tensor(&mut rng, vec![b, n]))
        }
    }
}

fn weighted_output(layer: &Layer, x: &Tensor, mode: Mode, r: &[f64]) -> Result<f64, NnError> {
    let (y, _) = layer.clone().forward(x, mode)?;
    Ok(y.data.iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Inputs whose perturbation would cross a kink of the layer.
fn near_kink(layer: &Layer, x: &Tensor, i: usize) -> bool {
    match layer {
        Layer::Relu => x.data[i].abs() < RELU_MARGIN.max(STEP),
        Layer::MaxPool => {
            let c = x.shape[2];
            let len = x.shape[1];
            let pos = (i / c) % len;
            if pos / 2 * 2 + 1 >= len {
                return false;
            }
            let mate = if pos % 2 == 0 { i + c } else { i - c };
            (x.data[i] - x.data[mate]).abs() < 2.0 * STEP
        }
        _ => false,
    }
}

/// Compares analytic input and parameter gradients of `layer` at `x` with
/// central differences of the scalar `sum(r * layer(x))`, `r` random.
pub fn check_layer(layer: &Layer, x: &Tensor, mode: Mode, seed: u64) -> Result<GradCheck, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let (y, cache) = layer.clone().forward(x, mode)?;
    let r: Vec<f64> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Tensor::new(y.shape.clone(), r.clone())?;
    let (dx, dparams) = layer.backward(&g, Some(&cache), mode)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..x.data.len() {
        if near_kink(layer, x, i) {
            report.skipped += 1;
            continue;
        }
        let mut xp = x.clone();
        xp.data[i] += STEP;
        let mut xm = x.clone();
        xm.data[i] -= STEP;
        let fd = (weighted_output(layer, &xp, mode, &r)? - weighted_output(layer, &xm, mode, &r)?) / (2.0 * STEP);
        report.max_rel_error = report.max_rel_error.max(rel_error(dx.data[i], fd));
        report.checked += 1;
    }
    for (pi, grad) in dparams.iter().enumerate() {
        for j in 0..grad.len() {
            let nudged = |delta: f64| {
                let mut l = layer.clone();
                l.params_mut()[pi][j] += delta;
                weighted_output(&l, x, mode, &r)
            };
            let fd = (nudged(STEP)? - nudged(-STEP)?) / (2.0 * STEP);
            report.max_rel_error = report.max_rel_error.max(rel_error(grad[j], fd));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Runs [`check_layer`] on `instances` random layers of `kind`.
pub fn check_kind(kind: LayerKind, instances: usize, seed: u64) -> Result<GradCheck, NnError> {
    let mut total = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for k in 0..instances as u64 {
        let s = seed.wrapping_mul(1_000_003).wrapping_add(k);
        let (layer, x) = random_instance(kind, s);
        total = total.merge(check_layer(&layer, &x, kind.mode(), s)?);
    }
    Ok(total)
}
