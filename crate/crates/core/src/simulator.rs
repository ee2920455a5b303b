//! Parametric over-water waveform model.
//!
//! A received waveform is the sum of a surface echo, an exponentially decaying
//! water-column return, an attenuated bottom echo, a background level and
//! additive detector noise:
//!
//! ```text
//! P(t) = A * [ i_s g(t - t_s) + i_w exp(-2 kd z(t)) 1{t_s <= t < t_b}
//!              + i_ref exp(-2 kd depth) g(t - t_b) ] + base + noise
//! ```
//!
//! `g` is a unit-peak pulse, `t_s` is pinned to bin [`SURFACE_BIN`],
//! `t_b = t_s + 2 depth n_w / c` and `z(t) = (t - t_s) c / (2 n_w)`.
//! The column starts on the surface bin itself so that, on the sampled grid,
//! the surface mode stays at [`SURFACE_BIN`] instead of drifting onto the
//! first column sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::wave::{
    Dataset, ImpType, LabeledSample, SplitTag, TimeGrid, WaveError, Waveform, WaveformParams,
    SPEED_OF_LIGHT, WATER_REFRACTIVE_INDEX,
};

/// Bin index of the surface echo mode.
pub const SURFACE_BIN: usize = 64;

/// Pulse width reference: `w_c = 1` means a 10 ns standard deviation.
pub const PULSE_WIDTH_REFERENCE: f64 = 10e-9;

// Frechet shape parameter and the derived constants for unit peak / unit std.
const FRECHET_ALPHA: f64 = 4.0;
// (alpha / (1 + alpha))^(1/alpha)
const FRECHET_MODE: f64 = 0.945_741_609_003_175_8;
// sqrt(Gamma(1 - 2/alpha) - Gamma(1 - 1/alpha)^2)
const FRECHET_STD: f64 = 0.520_391_925_595_397_4;
// sqrt(6) / pi: Gumbel scale per unit standard deviation.
const GUMBEL_SCALE: f64 = 0.779_696_801_233_676;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("grid of {n_bins} bins cannot hold a bottom echo at bin {needed}")]
    GridTooShort { n_bins: usize, needed: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad range for {field}: [{low}, {high}]")]
    BadRange { field: &'static str, low: f64, high: f64 },
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// Unit-peak pulse of a given family and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub imp_type: ImpType,
    /// Fraction of [`PULSE_WIDTH_REFERENCE`].
    pub w_c: f64,
}

impl PulseShape {
    pub fn new(imp_type: ImpType, w_c: f64) -> Self {
        Self { imp_type, w_c }
    }

    /// Effective standard deviation in seconds.
    pub fn sigma(&self) -> f64 {
        self.w_c * PULSE_WIDTH_REFERENCE
    }

    /// Full width at half maximum in seconds, found by bisection on each flank.
    pub fn fwhm(&self) -> f64 {
        let s = self.sigma();
        let half = |mut inside: f64, mut outside: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if pulse_value(self, mid) >= 0.5 {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            0.5 * (inside + outside)
        };
        half(0.0, 20.0 * s) - half(0.0, -20.0 * s)
    }
}

/// Value of the unit-peak pulse at offset `t` seconds from its mode.
pub fn pulse_value(shape: &PulseShape, t: f64) -> f64 {
    let sigma = shape.sigma();
    match shape.imp_type {
        ImpType::Bell => {
            let x = t / sigma;
            (-0.5 * x * x).exp()
        }
        ImpType::Gumbel => {
            let x = t / (sigma * GUMBEL_SCALE);
            (1.0 - x - (-x).exp()).exp()
        }
        ImpType::Frechet => {
            let scale = sigma / FRECHET_STD;
            let y = FRECHET_MODE + t / scale;
            if y <= 0.0 {
                return 0.0;
            }
            let ln = |v: f64| -(1.0 + FRECHET_ALPHA) * v.ln() - v.powf(-FRECHET_ALPHA);
            (ln(y) - ln(FRECHET_MODE)).exp()
        }
    }
}

/// Deterministic distortions emulating a second, differently-behaved simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    /// Replaces every sample's pulse family.
    pub pulse_substitution: Option<ImpType>,
    /// Added as `A * background_offset`.
    pub background_offset: f64,
    /// Time-axis scale about the surface echo.
    pub stretch: f64,
    /// Extra detector noise std (intensity units).
    pub extra_noise: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl ShiftConfig {
    pub const IDENTITY: ShiftConfig = ShiftConfig {
        pulse_substitution: None,
        background_offset: 0.0,
        stretch: 1.0,
        extra_noise: 0.0,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.stretch > 0.0) || !self.stretch.is_finite() {
            return Err(SimError::InvalidParams(format!("stretch must be > 0, got {}", self.stretch)));
        }
        if !(self.extra_noise >= 0.0) || !self.background_offset.is_finite() {
            return Err(SimError::InvalidParams("extra_noise must be >= 0 and offset finite".into()));
        }
        Ok(())
    }
}

/// Inclusive sampling interval of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { low: v, high: v }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        self.low + (self.high - self.low) * u
    }
}

/// Sampling ranges for every [`WaveformParams`] field. Defaults follow the
/// simulator input table; the last four fields are instrument/medium settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub depth: Interval,
    pub kd: Interval,
    pub i_ref: Interval,
    pub i_w: Interval,
    pub amplitude: Interval,
    /// Noise std as a fraction of the drawn amplitude.
    pub noise_frac: Interval,
    /// Pulse family indices, inclusive.
    pub imp_type: (u8, u8),
    pub w_c: Interval,
    pub base_intensity: Interval,
    pub i_s: Interval,
    pub max_depth: Interval,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            depth: Interval::new(0.15, 19.0),
            kd: Interval::new(0.0, 1.0),
            i_ref: Interval::new(1.0, 100.0),
            i_w: Interval::new(0.0, 2.0),
            amplitude: Interval::new(1.0, 10.0),
            noise_frac: Interval::new(0.0, 0.04),
            imp_type: (0, 2),
            w_c: Interval::new(0.1, 1.0),
            base_intensity: Interval::new(0.0, 0.05),
            i_s: Interval::new(1.0, 10.0),
            max_depth: Interval::fixed(19.0),
        }
    }
}

impl ParamRanges {
    /// Noiseless ranges: same as `self` with the noise fraction pinned to 0.
    pub fn noiseless(mut self) -> Self {
        self.noise_frac = Interval::fixed(0.0);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let checks: [(&'static str, Interval, f64); 10] = [
            ("depth", self.depth, f64::MIN_POSITIVE),
            ("kd", self.kd, 0.0),
            ("i_ref", self.i_ref, 0.0),
            ("i_w", self.i_w, 0.0),
            ("amplitude", self.amplitude, f64::MIN_POSITIVE),
            ("noise_frac", self.noise_frac, 0.0),
            ("w_c", self.w_c, f64::MIN_POSITIVE),
            ("base_intensity", self.base_intensity, f64::NEG_INFINITY),
            ("i_s", self.i_s, 0.0),
            ("max_depth", self.max_depth, f64::MIN_POSITIVE),
        ];
        for (field, iv, floor) in checks {
            if !(iv.low.is_finite() && iv.high.is_finite() && iv.low <= iv.high && iv.low >= floor) {
                return Err(SimError::BadRange {
                    field,
                    low: iv.low,
                    high: iv.high,
                });
            }
        }
        let (lo, hi) = self.imp_type;
        if lo > hi || hi > 2 {
            return Err(SimError::BadRange {
                field: "imp_type",
                low: lo as f64,
                high: hi as f64,
            });
        }
        if self.max_depth.low < self.depth.low {
            return Err(SimError::BadRange {
                field: "max_depth",
                low: self.max_depth.low,
                high: self.max_depth.high,
            });
        }
        Ok(())
    }

    /// Parameter vector at the lower end of every range; handy as a template.
    pub fn fixed_point(&self) -> WaveformParams {
        WaveformParams {
            depth: self.depth.low,
            kd: self.kd.low,
            i_ref: self.i_ref.low,
            i_w: self.i_w.low,
            amplitude: self.amplitude.low,
            noise_sigma: self.noise_frac.low * self.amplitude.low,
            imp_type: ImpType::from_index(self.imp_type.0).unwrap_or(ImpType::Bell),
            w_c: self.w_c.low,
            base_intensity: self.base_intensity.low,
            i_s: self.i_s.low,
            max_depth: self.max_depth.low.max(self.depth.low),
        }
    }
}

/// Draws one parameter vector, uniform per field, deterministic in `seed`.
pub fn sample_params(ranges: &ParamRanges, seed: u64) -> Result<WaveformParams, SimError> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_depth = ranges.max_depth.draw(&mut rng);
    let depth = Interval::new(ranges.depth.low, ranges.depth.high.min(max_depth)).draw(&mut rng);
    let kd = ranges.kd.draw(&mut rng);
    let i_ref = ranges.i_ref.draw(&mut rng);
    let i_w = ranges.i_w.draw(&mut rng);
    let amplitude = ranges.amplitude.draw(&mut rng);
    let noise_sigma = amplitude * ranges.noise_frac.draw(&mut rng);
    let imp = rng.random_range(ranges.imp_type.0..=ranges.imp_type.1);
    let w_c = ranges.w_c.draw(&mut rng);
    let base_intensity = ranges.base_intensity.draw(&mut rng);
    let i_s = ranges.i_s.draw(&mut rng);
    Ok(WaveformParams {
        depth,
        kd,
        i_ref,
        i_w,
        amplitude,
        noise_sigma,
        imp_type: ImpType::from_index(imp).expect("validated imp_type range"),
        w_c,
        base_intensity,
        i_s,
        max_depth,
    })
}

/// Two-way in-water travel time to `depth`, seconds.
pub fn two_way_time(depth: f64) -> f64 {
    2.0 * depth * WATER_REFRACTIVE_INDEX / SPEED_OF_LIGHT
}

/// Surface-echo time on `grid`.
pub fn surface_time(grid: &TimeGrid) -> f64 {
    grid.time(SURFACE_BIN)
}

/// Contrast required by [`is_resolvable`].
pub const MIN_BOTTOM_CONTRAST: f64 = 15.0;

/// Bottom-echo peak over everything else present at the bottom time: the
/// column just above the bottom, the surface-pulse tail and the background.
pub fn bottom_contrast(p: &WaveformParams) -> f64 {
    let pulse = PulseShape::new(p.imp_type, p.w_c);
    let att = (-2.0 * p.kd * p.depth).exp();
    let rest = p.i_w * att + p.i_s * pulse_value(&pulse, two_way_time(p.depth)) + p.base_intensity / p.amplitude;
    if rest > 0.0 {
        p.i_ref * att / rest
    } else {
        f64::INFINITY
    }
}

/// Whether a noiseless waveform of `p` has a recoverable bottom: echoes at
/// least two pulse FWHM apart and a bottom echo standing out of the column by
/// [`MIN_BOTTOM_CONTRAST`].
pub fn is_resolvable(p: &WaveformParams) -> bool {
    let fwhm = PulseShape::new(p.imp_type, p.w_c).fwhm();
    two_way_time(p.depth) >= 2.0 * fwhm && bottom_contrast(p) >= MIN_BOTTOM_CONTRAST
}

fn validate_params(p: &WaveformParams) -> Result<(), SimError> {
    let finite = p.to_array().iter().all(|v| v.is_finite());
    let ok = finite
        && p.depth > 0.0
        && p.depth <= p.max_depth
        && p.kd >= 0.0
        && p.i_ref >= 0.0
        && p.i_w >= 0.0
        && p.i_s >= 0.0
        && p.amplitude > 0.0
        && p.noise_sigma >= 0.0
        && p.w_c > 0.0;
    if ok {
        Ok(())
    } else {
        Err(SimError::InvalidParams(format!("{p:?}")))
    }
}

/// Noise-free signal in 64-bit precision, before any noise is added.
pub fn clean_signal(p: &WaveformParams, grid: &TimeGrid, shift: &ShiftConfig) -> Result<Vec<f64>, SimError> {
    validate_params(p)?;
    shift.validate()?;
    grid.validate()?;
    let tau_b = two_way_time(p.depth);
    let needed = SURFACE_BIN + (shift.stretch * tau_b / grid.dt).ceil() as usize;
    if needed >= grid.n_bins {
        return Err(SimError::GridTooShort {
            n_bins: grid.n_bins,
            needed,
        });
    }
    let pulse = PulseShape::new(shift.pulse_substitution.unwrap_or(p.imp_type), p.w_c);
    let t_s = surface_time(grid);
    let bottom = p.i_ref * (-2.0 * p.kd * p.depth).exp();
    let metres_per_second = SPEED_OF_LIGHT / (2.0 * WATER_REFRACTIVE_INDEX);
    let offset = p.amplitude * shift.background_offset;
    Ok((0..grid.n_bins)
        .map(|k| {
            let tau = (grid.time(k) - t_s) / shift.stretch;
            let column = if tau >= 0.0 && tau < tau_b {
                p.i_w * (-2.0 * p.kd * tau * metres_per_second).exp()
            } else {
                0.0
            };
            let echoes = p.i_s * pulse_value(&pulse, tau) + column + bottom * pulse_value(&pulse, tau - tau_b);
            p.amplitude * echoes + p.base_intensity + offset
        })
        .collect())
}

fn normal_noise(signal: &mut [f64], sigma: f64, seed: u64) {
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in signal.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
}

fn to_waveform(grid: TimeGrid, signal: Vec<f64>) -> Result<Waveform, SimError> {
    Ok(Waveform::new(grid, signal.into_iter().map(|v| v as f32).collect())?)
}

/// Forward model: one received waveform for `p` on `grid`, noise seeded by `seed`.
pub fn simulate_waveform(p: &WaveformParams, grid: &TimeGrid, seed: u64) -> Result<Waveform, SimError> {
    let mut signal = clean_signal(p, grid, &ShiftConfig::IDENTITY)?;
    normal_noise(&mut signal, p.noise_sigma, seed);
    to_waveform(*grid, signal)
}

/// Waveform under a domain shift. The base noise stream is the one
/// [`simulate_waveform`] uses, so the identity shift reproduces it exactly.
pub fn simulate_shifted(
    p: &WaveformParams,
    grid: &TimeGrid,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<Waveform, SimError> {
    let mut signal = clean_signal(p, grid, shift)?;
    normal_noise(&mut signal, p.noise_sigma, seed);
    normal_noise(&mut signal, shift.extra_noise, splitmix64(seed ^ 0x5348_4946_5445_4421));
    to_waveform(*grid, signal)
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of sample `index` in a dataset generated with `seed`: `seed ^ index`.
/// Parameters are drawn with this seed, noise with `splitmix64` of it.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn generate(
    n: usize,
    ranges: &ParamRanges,
    grid: &TimeGrid,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<Dataset, SimError> {
    if n == 0 {
        return Err(SimError::InvalidParams("dataset size must be >= 1".into()));
    }
    ranges.validate()?;
    shift.validate()?;
    let samples = par::map_indexed(n, |i| {
        let s = sample_seed(seed, i);
        let params = sample_params(ranges, s)?;
        let waveform = simulate_shifted(&params, grid, shift, splitmix64(s))?;
        Ok(LabeledSample { waveform, params })
    })
    .into_iter()
    .collect::<Result<Vec<_>, SimError>>()?;
    Ok(Dataset::new(samples, seed, SplitTag::Unsplit)?)
}

/// `n` labelled waveforms. Sample order is fixed by index regardless of workers.
pub fn generate_dataset(n: usize, ranges: &ParamRanges, grid: &TimeGrid, seed: u64) -> Result<Dataset, SimError> {
    generate(n, ranges, grid, &ShiftConfig::IDENTITY, seed)
}

/// Like [`generate_dataset`] but every waveform is distorted by `shift`.
/// Labels are the undistorted sampled parameters.
pub fn generate_shifted_dataset(
    n: usize,
    ranges: &ParamRanges,
    grid: &TimeGrid,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<Dataset, SimError> {
    generate(n, ranges, grid, shift, seed)
}
