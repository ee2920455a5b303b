//! Classical parameter retrieval: echo peaks and time-of-flight depth,
//! lookup-table inversion, and log-intensity/depth attenuation regression.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::simulator::{self, SimError};
use crate::wave::{
    normalize_peak, time_of_flight_distance, ImpType, TimeGrid, WaveError, Waveform, WaveformParams,
    WATER_REFRACTIVE_INDEX,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InversionError {
    #[error("fewer than two echoes detected ({found})")]
    NoBottomEcho { found: usize },
    #[error("echoes {separation:.3e} s apart, below the pulse width {width:.3e} s")]
    PeaksUnresolved { separation: f64, width: f64 },
    #[error("lookup table would hold {size} entries, cap is {cap}")]
    LutTooLarge { size: usize, cap: usize },
    #[error("lookup-table axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("waveform grid does not match the lookup table grid")]
    GridMismatch,
    #[error("regression needs at least two distinct depths")]
    SingularFit,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// A local maximum of a waveform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    pub time: f64,
    pub height: f64,
    /// Height above the higher of the two flanking minima.
    pub prominence: f64,
}

/// Local maxima with prominence at least `min_prominence`, sorted by index.
/// Flat tops report their middle sample; the first and last bin never qualify.
pub fn detect_peaks(w: &Waveform, min_prominence: f64) -> Vec<Peak> {
    let x = &w.samples;
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let index = (i + j) / 2;
                let height = x[index] as f64;
                let prominence = prominence_at(x, i, j);
                if prominence > 0.0 && prominence >= min_prominence {
                    peaks.push(Peak {
                        index,
                        time: w.grid.time(index),
                        height,
                        prominence,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn prominence_at(x: &[f32], left: usize, right: usize) -> f64 {
    let h = x[left];
    let mut left_min = h;
    for k in (0..left).rev() {
        if x[k] > h {
            break;
        }
        left_min = left_min.min(x[k]);
    }
    let mut right_min = h;
    for &v in &x[right + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h as f64 - left_min.max(right_min) as f64
}

/// Width of a peak at half its prominence, seconds, with linear interpolation.
pub fn peak_width(w: &Waveform, peak: &Peak) -> f64 {
    let x = &w.samples;
    let level = peak.height - 0.5 * peak.prominence;
    let cross = |a: usize, b: usize| {
        let (ya, yb) = (x[a] as f64, x[b] as f64);
        if ya == yb {
            a as f64
        } else {
            a as f64 + (level - ya) / (yb - ya) * (b as f64 - a as f64)
        }
    };
    let mut l = peak.index;
    while l > 0 && (x[l - 1] as f64) > level {
        l -= 1;
    }
    let left = if l == 0 { 0.0 } else { cross(l - 1, l) };
    let mut r = peak.index;
    while r + 1 < x.len() && (x[r + 1] as f64) > level {
        r += 1;
    }
    let right = if r + 1 == x.len() { r as f64 } else { cross(r, r + 1) };
    (right - left) * w.grid.dt
}

/// Settings for echo-based depth retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoOptions {
    pub n_w: f64,
    pub min_prominence: f64,
    /// Known FWHM of the emitted pulse, seconds. When absent the first echo's
    /// measured width stands in for it and merged echoes cannot be told apart
    /// from a missing bottom.
    pub pulse_fwhm: Option<f64>,
}

impl Default for EchoOptions {
    fn default() -> Self {
        Self {
            n_w: WATER_REFRACTIVE_INDEX,
            min_prominence: 1e-3,
            pulse_fwhm: None,
        }
    }
}

/// Relative widening of a lone echo beyond the pulse FWHM that marks two merged echoes.
pub const MERGED_ECHO_BROADENING: f64 = 1e-3;

/// Surface and bottom echoes used for a depth estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoPair {
    pub surface: Peak,
    pub bottom: Peak,
    pub depth: f64,
}

/// Finds surface and bottom echoes and converts their separation to depth.
pub fn echo_pair(w: &Waveform, opts: &EchoOptions) -> Result<EchoPair, InversionError> {
    let peaks = detect_peaks(w, opts.min_prominence);
    match peaks.as_slice() {
        [] => Err(InversionError::NoBottomEcho { found: 0 }),
        [single] => {
            if let Some(fwhm) = opts.pulse_fwhm {
                let width = peak_width(w, single);
                if width > fwhm * (1.0 + MERGED_ECHO_BROADENING) {
                    return Err(InversionError::PeaksUnresolved {
                        separation: width - fwhm,
                        width: fwhm,
                    });
                }
            }
            Err(InversionError::NoBottomEcho { found: 1 })
        }
        [surface, bottom, ..] => {
            let width = opts.pulse_fwhm.unwrap_or_else(|| peak_width(w, surface));
            let separation = bottom.time - surface.time;
            if separation < width {
                return Err(InversionError::PeaksUnresolved { separation, width });
            }
            let depth = time_of_flight_distance(separation, opts.n_w)?;
            Ok(EchoPair {
                surface: *surface,
                bottom: *bottom,
                depth,
            })
        }
    }
}

/// Depth from the time between the first two detected echoes.
pub fn depth_from_waveform(w: &Waveform, n_w: f64, min_prominence: f64) -> Result<f64, InversionError> {
    let opts = EchoOptions {
        n_w,
        min_prominence,
        pulse_fwhm: None,
    };
    echo_pair(w, &opts).map(|p| p.depth)
}

/// Values enumerated per parameter; the table is their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LutAxes {
    pub depth: Vec<f64>,
    pub kd: Vec<f64>,
    pub i_ref: Vec<f64>,
    pub i_w: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub imp_type: Vec<ImpType>,
    pub w_c: Vec<f64>,
    pub base_intensity: Vec<f64>,
    pub i_s: Vec<f64>,
}

impl LutAxes {
    /// Single-point axes at `p`.
    pub fn point(p: &WaveformParams) -> Self {
        Self {
            depth: vec![p.depth],
            kd: vec![p.kd],
            i_ref: vec![p.i_ref],
            i_w: vec![p.i_w],
            amplitude: vec![p.amplitude],
            imp_type: vec![p.imp_type],
            w_c: vec![p.w_c],
            base_intensity: vec![p.base_intensity],
            i_s: vec![p.i_s],
        }
    }

    fn lens(&self) -> [(&'static str, usize); 9] {
        [
            ("depth", self.depth.len()),
            ("kd", self.kd.len()),
            ("i_ref", self.i_ref.len()),
            ("i_w", self.i_w.len()),
            ("amplitude", self.amplitude.len()),
            ("imp_type", self.imp_type.len()),
            ("w_c", self.w_c.len()),
            ("base_intensity", self.base_intensity.len()),
            ("i_s", self.i_s.len()),
        ]
    }

    /// Number of combinations, saturating.
    pub fn size(&self) -> usize {
        self.lens().iter().fold(1usize, |acc, (_, n)| acc.saturating_mul(*n))
    }

    /// Parameters of combination `index`; `depth` varies slowest, `i_s` fastest.
    pub fn params_at(&self, mut index: usize) -> WaveformParams {
        let lens = self.lens();
        let mut pos = [0usize; 9];
        for k in (0..9).rev() {
            pos[k] = index % lens[k].1;
            index /= lens[k].1;
        }
        let max_depth = self.depth.iter().copied().fold(f64::MIN, f64::max);
        WaveformParams {
            depth: self.depth[pos[0]],
            kd: self.kd[pos[1]],
            i_ref: self.i_ref[pos[2]],
            i_w: self.i_w[pos[3]],
            amplitude: self.amplitude[pos[4]],
            noise_sigma: 0.0,
            imp_type: self.imp_type[pos[5]],
            w_c: self.w_c[pos[6]],
            base_intensity: self.base_intensity[pos[7]],
            i_s: self.i_s[pos[8]],
            max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LutEntry {
    pub params: WaveformParams,
    /// Noiseless, peak-normalized.
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    pub axes: LutAxes,
    pub grid: TimeGrid,
    pub entries: Vec<LutEntry>,
}

/// Default cap on table size (entries).
pub const DEFAULT_LUT_CAP: usize = 200_000;

/// Simulates and peak-normalizes every axis combination.
pub fn build_lut(axes: &LutAxes, grid: &TimeGrid, cap: usize) -> Result<Lut, InversionError> {
    for (name, n) in axes.lens() {
        if n == 0 {
            return Err(InversionError::EmptyAxis(name));
        }
    }
    let size = axes.size();
    if size > cap {
        return Err(InversionError::LutTooLarge { size, cap });
    }
    let entries = par::map_indexed(size, |i| {
        let params = axes.params_at(i);
        let raw = simulator::simulate_waveform(&params, grid, 0)?;
        Ok(LutEntry {
            params,
            waveform: normalize_peak(&raw)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, InversionError>>()?;
    Ok(Lut {
        axes: axes.clone(),
        grid: *grid,
        entries,
    })
}

/// Best-matching table entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutMatch {
    pub index: usize,
    pub params: WaveformParams,
    /// Sum of squared residuals between normalized waveforms.
    pub merit: f64,
}

fn merit(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Minimizes the squared-residual merit over the table after peak-normalizing
/// `w_ref`. Ties go to the lowest entry index.
pub fn lut_invert(w_ref: &Waveform, lut: &Lut) -> Result<LutMatch, InversionError> {
    if w_ref.grid != lut.grid {
        return Err(InversionError::GridMismatch);
    }
    let w = normalize_peak(w_ref)?;
    let merits = par::map_slice(&lut.entries, |e| merit(&w.samples, &e.waveform.samples));
    let mut best = 0;
    for (i, &m) in merits.iter().enumerate() {
        if m < merits[best] {
            best = i;
        }
    }
    Ok(LutMatch {
        index: best,
        params: lut.entries[best].params,
        merit: merits[best],
    })
}

/// Depth / log-intensity pairs plus the waveforms that had to be skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntensityDepthPairs {
    pub pairs: Vec<(f64, f64)>,
    pub skipped: Vec<(usize, InversionError)>,
}

/// Per waveform: echo depth and the natural log of the raw bottom-peak height.
pub fn log_intensity_depth_pairs(waveforms: &[Waveform], opts: &EchoOptions) -> IntensityDepthPairs {
    let results = par::map_slice(waveforms, |w| {
        let pair = echo_pair(w, opts)?;
        if pair.bottom.height > 0.0 {
            Ok((pair.depth, pair.bottom.height.ln()))
        } else {
            Err(InversionError::NoBottomEcho { found: 1 })
        }
    });
    let mut out = IntensityDepthPairs::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => out.pairs.push(p),
            Err(e) => out.skipped.push((i, e)),
        }
    }
    out
}

/// Least-squares line through (depth, ln intensity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationFit {
    pub slope: f64,
    /// Attenuation as a positive magnitude: `|slope|`.
    pub kd_hat: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

impl AttenuationFit {
    /// `kd_hat` halved: the per-metre coefficient when intensity decays over the
    /// two-way path `exp(-2 kd depth)`, as in the simulator.
    pub fn two_way_kd(&self) -> f64 {
        0.5 * self.kd_hat
    }
}

/// Ordinary least squares of log intensity on depth.
pub fn fit_attenuation(points: &[(f64, f64)]) -> Result<AttenuationFit, InversionError> {
    if points.len() < 2 {
        return Err(InversionError::SingularFit);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(InversionError::SingularFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(AttenuationFit {
        slope,
        kd_hat: slope.abs(),
        intercept,
        r2,
        n_points: points.len(),
    })
}
