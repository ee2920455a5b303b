//! Core waveform types, preprocessing, dataset splitting and regression metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Refractive index of water used throughout the toolkit.
pub const WATER_REFRACTIVE_INDEX: f64 = 1.33;

/// Number of time bins every network input is padded to.
pub const INPUT_BINS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("waveform has {len} bins, longer than target {target}")]
    LengthExceedsTarget { len: usize, target: usize },
    #[error("waveform is identically zero")]
    DegenerateWaveform,
    #[error("noise sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("negative time of flight {0}")]
    NegativeTime(f64),
    #[error("refractive index must be >= 1, got {0}")]
    BadRefractiveIndex(f64),
    #[error("invalid time grid: n_bins={n_bins}, dt={dt}")]
    InvalidGrid { n_bins: usize, dt: f64 },
    #[error("non-finite sample at bin {0}")]
    NonFinite(usize),
    #[error("dataset samples do not share one time grid")]
    MixedGrids,
}

/// Uniform sampling axis of a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_bins: usize,
    /// Seconds per bin.
    pub dt: f64,
    /// Time of the first bin, seconds.
    pub t0: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            n_bins: INPUT_BINS,
            dt: 1e-9,
            t0: 0.0,
        }
    }
}

impl TimeGrid {
    pub fn new(n_bins: usize, dt: f64, t0: f64) -> Result<Self, WaveError> {
        let grid = Self { n_bins, dt, t0 };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), WaveError> {
        if self.n_bins == 0 || !(self.dt > 0.0) || !self.dt.is_finite() || !self.t0.is_finite() {
            return Err(WaveError::InvalidGrid {
                n_bins: self.n_bins,
                dt: self.dt,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    pub fn with_len(&self, n_bins: usize) -> Self {
        Self { n_bins, ..*self }
    }
}

/// Intensity time series sampled on a [`TimeGrid`]. Stored at 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub grid: TimeGrid,
    pub samples: Vec<f32>,
}

impl Waveform {
    pub fn new(grid: TimeGrid, samples: Vec<f32>) -> Result<Self, WaveError> {
        grid.validate()?;
        if samples.len() != grid.n_bins {
            return Err(WaveError::LengthMismatch(samples.len(), grid.n_bins));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WaveError::NonFinite(i));
        }
        Ok(Self { grid, samples })
    }

    /// Builds a waveform on the default 1 ns grid starting at t = 0.
    pub fn from_samples(samples: Vec<f32>) -> Result<Self, WaveError> {
        let grid = TimeGrid {
            n_bins: samples.len(),
            ..TimeGrid::default()
        };
        Self::new(grid, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the first maximum sample.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.samples.iter().enumerate() {
            if v > self.samples[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f32 {
        self.samples.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }
}

/// Pulse-shape family of the emitted laser pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpType {
    /// Symmetric bell.
    Bell,
    /// Right-skewed extreme-value (Gumbel family).
    Gumbel,
    /// Heavy-tailed extreme-value type II (Frechet family).
    Frechet,
}

impl ImpType {
    pub const ALL: [ImpType; 3] = [ImpType::Bell, ImpType::Gumbel, ImpType::Frechet];

    pub fn index(self) -> u8 {
        match self {
            ImpType::Bell => 0,
            ImpType::Gumbel => 1,
            ImpType::Frechet => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

/// Physical and instrument parameters labelling one simulated waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformParams {
    /// Water depth, m.
    pub depth: f64,
    /// Diffuse attenuation coefficient, 1/m.
    pub kd: f64,
    /// Bottom reflectance reference intensity.
    pub i_ref: f64,
    /// Water-column decay reference intensity.
    pub i_w: f64,
    /// Global amplitude scale.
    pub amplitude: f64,
    /// Detector noise standard deviation (intensity units).
    pub noise_sigma: f64,
    pub imp_type: ImpType,
    /// Pulse width as a fraction of 10 ns.
    pub w_c: f64,
    pub base_intensity: f64,
    /// Surface echo reference intensity.
    pub i_s: f64,
    /// Extent of the medium, m.
    pub max_depth: f64,
}

impl WaveformParams {
    /// Number of 64-bit fields in the on-disk record.
    pub const FIELD_COUNT: usize = 11;

    /// Fields in on-disk order; `imp_type` is stored as its index.
    pub fn to_array(&self) -> [f64; Self::FIELD_COUNT] {
        [
            self.depth,
            self.kd,
            self.i_ref,
            self.i_w,
            self.amplitude,
            self.noise_sigma,
            self.imp_type.index() as f64,
            self.w_c,
            self.base_intensity,
            self.i_s,
            self.max_depth,
        ]
    }

    pub fn from_array(v: &[f64; Self::FIELD_COUNT]) -> Option<Self> {
        let imp = v[6];
        if imp.fract() != 0.0 || !(0.0..=2.0).contains(&imp) {
            return None;
        }
        Some(Self {
            depth: v[0],
            kd: v[1],
            i_ref: v[2],
            i_w: v[3],
            amplitude: v[4],
            noise_sigma: v[5],
            imp_type: ImpType::from_index(imp as u8)?,
            w_c: v[7],
            base_intensity: v[8],
            i_s: v[9],
            max_depth: v[10],
        })
    }

    /// The three regression targets: depth, kd, bottom reflectance.
    pub fn targets(&self) -> [f64; 3] {
        [self.depth, self.kd, self.i_ref]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub waveform: Waveform,
    pub params: WaveformParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Unsplit,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn code(self) -> u8 {
        match self {
            SplitTag::Unsplit => 0,
            SplitTag::Train => 1,
            SplitTag::Val => 2,
            SplitTag::Test => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Unsplit),
            1 => Some(SplitTag::Train),
            2 => Some(SplitTag::Val),
            3 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Ordered labelled samples sharing one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub seed: u64,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, seed: u64, split_tag: SplitTag) -> Result<Self, WaveError> {
        if let Some(first) = samples.first() {
            let grid = first.waveform.grid;
            if samples.iter().any(|s| s.waveform.grid != grid) {
                return Err(WaveError::MixedGrids);
            }
        }
        Ok(Self {
            samples,
            seed,
            split_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> Option<TimeGrid> {
        self.samples.first().map(|s| s.waveform.grid)
    }

    pub fn waveforms(&self) -> Vec<Waveform> {
        self.samples.iter().map(|s| s.waveform.clone()).collect()
    }

    /// Per-sample `[depth, kd, i_ref]`.
    pub fn targets(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| s.params.targets()).collect()
    }

    /// Subset by index, keeping seed and tag.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            seed: self.seed,
            split_tag: self.split_tag,
        }
    }
}

/// Regression quality of one target. `r2` is `None` when the truth is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
}

/// Appends zeros up to `target_len` bins.
pub fn zero_pad(w: &Waveform, target_len: usize) -> Result<Waveform, WaveError> {
    if w.len() > target_len {
        return Err(WaveError::LengthExceedsTarget {
            len: w.len(),
            target: target_len,
        });
    }
    let mut samples = Vec::with_capacity(target_len);
    samples.extend_from_slice(&w.samples);
    samples.resize(target_len, 0.0);
    Ok(Waveform {
        grid: w.grid.with_len(target_len),
        samples,
    })
}

/// Homothetic scaling: divide every sample by the waveform maximum.
pub fn normalize_peak(w: &Waveform) -> Result<Waveform, WaveError> {
    let peak = w.max();
    if !(peak > 0.0) {
        return Err(WaveError::DegenerateWaveform);
    }
    if peak == 1.0 {
        return Ok(w.clone());
    }
    let peak = peak as f64;
    let samples = w
        .samples
        .iter()
        .map(|&v| (v as f64 / peak) as f32)
        .collect();
    Ok(Waveform {
        grid: w.grid,
        samples,
    })
}

/// Pads to [`INPUT_BINS`] and peak-normalizes: the network/LUT/OT input convention.
pub fn preprocess(w: &Waveform) -> Result<Waveform, WaveError> {
    normalize_peak(&zero_pad(w, INPUT_BINS)?)
}

/// Adds i.i.d. zero-mean normal noise drawn from a ChaCha8 stream seeded by `seed`.
pub fn add_noise(w: &Waveform, sigma: f64, seed: u64) -> Result<Waveform, WaveError> {
    if !(sigma >= 0.0) {
        return Err(WaveError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (v as f64 + sigma * z) as f32
        })
        .collect();
    Ok(Waveform {
        grid: w.grid,
        samples,
    })
}

/// Split sizes for `n` samples: floor of each share, remainder to train.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize), WaveError> {
    let (tr, va, te) = ratios;
    let ok = [tr, va, te].iter().all(|r| r.is_finite() && *r >= 0.0)
        && tr > 0.0
        && ((tr + va + te) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(WaveError::BadRatios(ratios));
    }
    // The small guard absorbs representation error such as 0.15 * 20 = 2.9999...
    let share = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let n_val = share(va).min(n);
    let n_test = share(te).min(n - n_val);
    Ok((n - n_val - n_test, n_val, n_test))
}

/// Shuffles with `seed` and partitions into (train, val, test).
pub fn split_dataset(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), WaveError> {
    let (n_train, n_val, _) = split_sizes(ds.len(), ratios)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let part = |idx: &[usize], tag| {
        let mut d = ds.select(idx);
        d.split_tag = tag;
        d
    };
    Ok((
        part(&order[..n_train], SplitTag::Train),
        part(&order[n_train..n_train + n_val], SplitTag::Val),
        part(&order[n_train + n_val..], SplitTag::Test),
    ))
}

/// MAE, RMSE and coefficient of determination.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics, WaveError> {
    if pred.len() != truth.len() {
        return Err(WaveError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(WaveError::EmptyInput);
    }
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let r = p - t;
        abs += r.abs();
        sq += r * r;
    }
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 { Some(1.0 - sq / ss_tot) } else { None };
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2,
    })
}

/// One-way range from a two-way travel time through a medium of the given index.
pub fn time_of_flight_distance(delta_t: f64, refractive_index: f64) -> Result<f64, WaveError> {
    if !(delta_t >= 0.0) {
        return Err(WaveError::NegativeTime(delta_t));
    }
    if !(refractive_index >= 1.0) {
        return Err(WaveError::BadRefractiveIndex(refractive_index));
    }
    Ok(SPEED_OF_LIGHT / refractive_index * delta_t / 2.0)
}
