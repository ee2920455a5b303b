use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Cache, Conv1d, Dense, Layer, Mode};
use super::{NnError, Tensor};
use crate::par;
use crate::simulator::splitmix64;
use crate::wave::{normalize_peak, zero_pad, Waveform, INPUT_BINS};

/// Names of the regression targets, one per branch.
pub const TARGETS: [&str; 3] = ["depth", "kd", "bottom"];

/// Architecture of one branch, replicated for every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub convs_per_branch: usize,
    pub pool_every: usize,
    /// Filters of each convolution, `convs_per_branch` entries.
    pub filters: Vec<usize>,
    pub kernel_size: usize,
    pub dense_units: usize,
    pub branches: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-depth layout: 18 convolutions, pooling after every second one,
    /// so 512 samples shrink to one. The filter schedule gives 18,240
    /// batch-norm running statistics over the three branches.
    pub fn paper_reference() -> Self {
        let mut filters = vec![16, 16, 32, 32, 64, 64, 128, 128];
        filters.extend([256; 10]);
        Self {
            input_len: INPUT_BINS,
            convs_per_branch: 18,
            pool_every: 2,
            filters,
            kernel_size: 7,
            dense_units: 256,
            branches: 3,
        }
    }

    /// Reduced layout that trains on one CPU core in minutes per epoch.
    pub fn desk() -> Self {
        Self {
            input_len: INPUT_BINS,
            convs_per_branch: 10,
            pool_every: 2,
            filters: vec![4, 4, 8, 8, 8, 8, 16, 16, 16, 16],
            kernel_size: 3,
            dense_units: 32,
            branches: 3,
        }
    }

    pub fn pools(&self) -> usize {
        self.convs_per_branch / self.pool_every.max(1)
    }

    /// Sequence length entering the flatten layer.
    pub fn final_len(&self) -> usize {
        self.input_len >> self.pools()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::BadConfig(m));
        if self.branches != TARGETS.len() {
            return bad(format!("branches must be {}, got {}", TARGETS.len(), self.branches));
        }
        if self.convs_per_branch == 0 || self.pool_every == 0 {
            return bad("convs_per_branch and pool_every must be positive".into());
        }
        if self.filters.len() != self.convs_per_branch {
            return bad(format!(
                "{} filter counts for {} convolutions",
                self.filters.len(),
                self.convs_per_branch
            ));
        }
        if self.filters.contains(&0) || self.kernel_size == 0 || self.dense_units == 0 {
            return bad("filters, kernel_size and dense_units must be positive".into());
        }
        if self.pools() > 9 {
            return bad(format!("{} poolings exceed the 9 halvings of 512 samples", self.pools()));
        }
        if self.input_len == 0 || self.final_len() == 0 {
            return bad(format!("input length {} cannot be pooled {} times", self.input_len, self.pools()));
        }
        Ok(())
    }
}

/// Layer stack of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub layers: Vec<Layer>,
}

impl Branch {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&h, mode)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut h = self.layers.first().ok_or(NnError::BadConfig("empty branch".into()))?.infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Parameter gradients of every layer, in layer order, for upstream `g`.
    pub fn backward(&self, g: &Tensor, caches: &[Cache], mode: Mode) -> Result<(Tensor, Vec<Vec<Vec<f64>>>), NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = g.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = layer.backward(&g, Some(&caches[i]), mode)?;
            grads[i] = pg;
            g = dx;
        }
        Ok((g, grads))
    }

    /// The output layer, which maps the dense features to one value.
    pub fn head_mut(&mut self) -> Option<&mut Dense> {
        match self.layers.last_mut() {
            Some(Layer::Dense(d)) => Some(d),
            _ => None,
        }
    }
}

/// Three independent branches sharing one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub branches: Vec<Branch>,
}

/// Parameter totals of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

/// Builds the layer stacks. Convolutions get He-uniform weights
/// (`sqrt(6 / fan_in)`), the hidden dense layer too, the output layer
/// `sqrt(3 / fan_in)`; every bias starts at zero. Branch `k` draws from a
/// generator seeded with `splitmix64(seed ^ k)`.
pub fn build_tribranch(cfg: &ModelConfig, seed: u64) -> Result<Model, NnError> {
    cfg.validate()?;
    let branches = (0..cfg.branches)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ k as u64));
            let mut layers = Vec::new();
            let mut channels = 1;
            for (i, &f) in cfg.filters.iter().enumerate() {
                layers.push(Layer::Conv1d(Conv1d::new(channels, f, cfg.kernel_size, &mut rng)));
                layers.push(Layer::BatchNorm(BatchNorm::new(f)));
                layers.push(Layer::Relu);
                if (i + 1) % cfg.pool_every == 0 {
                    layers.push(Layer::MaxPool);
                }
                channels = f;
            }
            layers.push(Layer::Flatten);
            let flat = cfg.final_len() * channels;
            layers.push(Layer::Dense(Dense::new(flat, cfg.dense_units, 6.0, &mut rng)));
            layers.push(Layer::Relu);
            layers.push(Layer::Dense(Dense::new(cfg.dense_units, 1, 3.0, &mut rng)));
            Branch { layers }
        })
        .collect();
    Ok(Model {
        config: cfg.clone(),
        branches,
    })
}

pub fn count_params(m: &Model) -> ParamCount {
    let (trainable, non_trainable) = m
        .branches
        .iter()
        .flat_map(|b| &b.layers)
        .map(Layer::param_count)
        .fold((0, 0), |(a, b), (t, n)| (a + t, b + n));
    ParamCount {
        total: trainable + non_trainable,
        trainable,
        non_trainable,
    }
}

/// Pads to the model input length and peak-normalizes; idempotent.
pub fn prepare(w: &Waveform, input_len: usize) -> Result<Waveform, NnError> {
    Ok(normalize_peak(&zero_pad(w, input_len)?)?)
}

/// Stacks prepared waveforms into a `(n, input_len, 1)` tensor.
pub fn input_tensor(waveforms: &[Waveform], input_len: usize) -> Result<Tensor, NnError> {
    if waveforms.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let prepared = par::map_slice(waveforms, |w| prepare(w, input_len));
    let mut data = Vec::with_capacity(waveforms.len() * input_len);
    for w in prepared {
        data.extend(w?.samples.iter().map(|&v| v as f64));
    }
    Tensor::new(vec![waveforms.len(), input_len, 1], data)
}

const PREDICT_CHUNK: usize = 64;

impl Model {
    /// Infer-mode outputs `(b, 1)` of every branch.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Vec<Tensor>, NnError> {
        if x.shape.len() != 3 || x.shape[1] != self.config.input_len || x.shape[2] != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "model expects (b, {}, 1), got {:?}",
                self.config.input_len, x.shape
            )));
        }
        self.branches.iter().map(|b| b.infer(x)).collect()
    }

    /// Per-sample `[depth, kd, bottom]` for an already prepared input tensor.
    pub fn predict_tensor(&self, x: &Tensor) -> Result<Vec<[f64; 3]>, NnError> {
        let n = x.batch();
        let chunks: Vec<usize> = (0..n).step_by(PREDICT_CHUNK).collect();
        let parts = par::map_slice(&chunks, |&start| {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
            let outs = self.forward_infer(&x.select_rows(&idx))?;
            Ok::<_, NnError>(
                (0..idx.len())
                    .map(|i| [outs[0].data[i], outs[1].data[i], outs[2].data[i]])
                    .collect::<Vec<_>>(),
            )
        });
        let mut rows = Vec::with_capacity(n);
        for p in parts {
            rows.extend(p?);
        }
        Ok(rows)
    }
}

/// Infer-mode predictions `[depth, kd, bottom]` for raw waveforms.
pub fn predict(m: &Model, waveforms: &[Waveform]) -> Result<Vec<[f64; 3]>, NnError> {
    let x = input_tensor(waveforms, m.config.input_len)?;
    m.predict_tensor(&x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_dataset, ParamRanges};
    use crate::wave::TimeGrid;

    fn small() -> ModelConfig {
        ModelConfig {
            input_len: 64,
            convs_per_branch: 4,
            pool_every: 2,
            filters: vec![2, 2, 3, 3],
            kernel_size: 3,
            dense_units: 5,
            branches: 3,
        }
    }

    #[test]
    fn paper_shape_maps_batch_to_three_scalars() {
        let m = build_tribranch(&ModelConfig::paper_reference(), 0).unwrap();
        assert_eq!(m.config.final_len(), 1);
        let x = Tensor::zeros(vec![12, 512, 1]);
        let outs = m.forward_infer(&x).unwrap();
        assert_eq!(outs.len(), 3);
        assert!(outs.iter().all(|o| o.shape == vec![12, 1]));
        assert_eq!(count_params(&m).non_trainable, 18_240);
    }

    #[test]
    fn reduced_config_flattens_sixty_four_positions() {
        let cfg = ModelConfig {
            convs_per_branch: 6,
            filters: vec![2; 6],
            ..ModelConfig::desk()
        };
        assert_eq!(cfg.final_len(), 64);
        let m = build_tribranch(&cfg, 1).unwrap();
        let mut b = m.branches[0].clone();
        let x = Tensor::zeros(vec![1, 512, 1]);
        let mut h = x;
        for layer in &mut b.layers {
            if matches!(layer, Layer::Flatten) {
                assert_eq!(h.shape, vec![1, 64, 2]);
            }
            h = layer.forward(&h, Mode::Infer).unwrap().0;
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(build_tribranch(&small(), 5).unwrap(), build_tribranch(&small(), 5).unwrap());
        assert_ne!(build_tribranch(&small(), 5).unwrap(), build_tribranch(&small(), 6).unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = small();
        c.filters.pop();
        assert!(matches!(build_tribranch(&c, 0), Err(NnError::BadConfig(_))));
        let c = ModelConfig {
            convs_per_branch: 20,
            pool_every: 2,
            filters: vec![1; 20],
            ..ModelConfig::desk()
        };
        assert!(matches!(c.validate(), Err(NnError::BadConfig(_))));
        let c = ModelConfig { branches: 2, ..small() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn param_count_matches_hand_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let convs = rng.random_range(1..7usize);
            let pool_every = rng.random_range(1..3usize);
            let cfg = ModelConfig {
                input_len: 128,
                convs_per_branch: convs,
                pool_every,
                filters: (0..convs).map(|_| rng.random_range(1..9)).collect(),
                kernel_size: rng.random_range(1..8),
                dense_units: rng.random_range(1..20),
                branches: 3,
            };
            let m = build_tribranch(&cfg, 0).unwrap();
            let mut train = 0;
            let mut frozen = 0;
            let mut cin = 1;
            for &f in &cfg.filters {
                train += cfg.kernel_size * cin * f + f + 2 * f;
                frozen += 2 * f;
                cin = f;
            }
            let flat = cfg.final_len() * cin;
            train += flat * cfg.dense_units + cfg.dense_units + cfg.dense_units + 1;
            let got = count_params(&m);
            assert_eq!(got.trainable, 3 * train);
            assert_eq!(got.non_trainable, 3 * frozen);
            assert_eq!(got.total, got.trainable + got.non_trainable);
        }
    }

    #[test]
    fn predict_is_batch_independent() {
        let ds = generate_dataset(10, &ParamRanges::default(), &TimeGrid::default(), 3).unwrap();
        let mut m = build_tribranch(&ModelConfig::desk(), 2).unwrap();
        // non-trivial running statistics
        for b in &mut m.branches {
            for l in &mut b.layers {
                if let Layer::BatchNorm(bn) = l {
                    bn.running_mean.iter_mut().for_each(|v| *v = 0.1);
                    bn.running_var.iter_mut().for_each(|v| *v = 0.5);
                }
            }
        }
        let w = ds.waveforms();
        let all = predict(&m, &w).unwrap();
        assert_eq!(all, predict(&m, &w).unwrap());
        let one = predict(&m, &w[4..5]).unwrap();
        assert_eq!(one[0], all[4]);
    }
}
