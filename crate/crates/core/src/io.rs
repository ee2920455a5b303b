//! Binary dataset and checkpoint files, CSV exports and the JSON run
//! configuration.
//!
//! All binary values are little-endian.
//!
//! Dataset file:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `BWF1` |
//! | 4  | 4 | version `u32` (1) |
//! | 8  | 8 | sample count `u64` |
//! | 16 | 4 | bins per waveform `u32` |
//! | 20 | 8 | `dt` `f64`, seconds |
//! | 28 | 8 | `t0` `f64`, seconds |
//! | 36 | 8 | generation seed `u64` |
//! | 44 | 1 | split tag `u8` (0 unsplit, 1 train, 2 val, 3 test) |
//! | 45 | 8 | FNV-1a 64 hash of bytes 0..45 |
//! | 53 | . | records |
//!
//! Each record holds the 11 parameter fields as `f64` in
//! [`WaveformParams::to_array`] order, then the samples as `f32`.
//!
//! Checkpoint file: magic `BWNN`, version `u32` (1), the model
//! configuration (`input_len`, `convs_per_branch`, `pool_every`,
//! `kernel_size`, `dense_units`, `branches`, filter count, filters; all
//! `u32`), then per branch a `u32` layer count and per layer a `u8` tag:
//!
//! - 0 conv: `in_channels`, `filters`, `kernel` (`u32`), weights, biases
//! - 1 batch norm: `channels` (`u32`), momentum, eps, gamma, beta, running mean, running variance
//! - 2 relu, 3 max pool, 4 flatten: no payload
//! - 5 dense: `inputs`, `units` (`u32`), weights, biases
//!
//! Every real number in a checkpoint is an `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::AdaptConfig;
use crate::nn::{build_tribranch, BatchNorm, Branch, Conv1d, Dense, Layer, Model, ModelConfig, NnError, TrainConfig, TrainReport, TARGETS};
use crate::simulator::{ParamRanges, ShiftConfig, SimError};
use crate::wave::{split_sizes, Dataset, LabeledSample, Metrics, SplitTag, TimeGrid, WaveError, Waveform, WaveformParams};

pub const DATASET_MAGIC: [u8; 4] = *b"BWF1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BWNN";
pub const FORMAT_VERSION: u32 = 1;
/// Bytes before the first dataset record.
pub const DATASET_HEADER_LEN: usize = 53;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file ends after {actual} bytes, {expected} needed")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("file holds {actual} bytes, header declares {declared}")]
    CountMismatch { declared: usize, actual: usize },
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("invalid record {index}: {reason}")]
    BadRecord { index: usize, reason: String },
    #[error("nothing to export")]
    EmptyPayload,
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Little-endian cursor with truncation reporting.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or(IoError::TruncatedFile {
            expected: self.pos.saturating_add(n),
            actual: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let raw = self.take(n.checked_mul(8).ok_or(IoError::BadHeader("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn usize32(&mut self) -> Result<usize, IoError> {
        Ok(self.u32()? as usize)
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.pos != self.buf.len() {
            return Err(IoError::CountMismatch {
                declared: self.pos,
                actual: self.buf.len(),
            });
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader, expected: [u8; 4]) -> Result<(), IoError> {
    let found = r.take(4).map_err(|_| IoError::BadMagic {
        expected,
        found: r.buf.to_vec(),
    })?;
    if found != expected {
        return Err(IoError::BadMagic {
            expected,
            found: found.to_vec(),
        });
    }
    let v = r.u32()?;
    if v != FORMAT_VERSION {
        return Err(IoError::VersionUnsupported(v));
    }
    Ok(())
}

fn u32_field(v: usize, what: &str) -> Result<u32, IoError> {
    u32::try_from(v).map_err(|_| IoError::BadHeader(format!("{what} {v} exceeds u32")))
}

/// Serializes a dataset. An empty dataset records the default grid.
pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>, IoError> {
    let grid = ds.grid().unwrap_or_default();
    let rec = WaveformParams::FIELD_COUNT * 8 + grid.n_bins * 4;
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + ds.len() * rec);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&u32_field(grid.n_bins, "n_bins")?.to_le_bytes());
    out.extend_from_slice(&grid.dt.to_le_bytes());
    out.extend_from_slice(&grid.t0.to_le_bytes());
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.push(ds.split_tag.code());
    let hash = fnv1a64(&out);
    out.extend_from_slice(&hash.to_le_bytes());
    for s in &ds.samples {
        for v in s.params.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &s.waveform.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn dataset_from_bytes(buf: &[u8]) -> Result<Dataset, IoError> {
    let mut r = Reader { buf, pos: 0 };
    check_magic(&mut r, DATASET_MAGIC)?;
    let n = r.u64()?;
    let n_bins = r.usize32()?;
    let dt = r.f64()?;
    let t0 = r.f64()?;
    let seed = r.u64()?;
    let tag = r.u8()?;
    if r.u64()? != fnv1a64(&buf[..DATASET_HEADER_LEN - 8]) {
        return Err(IoError::HeaderChecksum);
    }
    let split_tag = SplitTag::from_code(tag).ok_or_else(|| IoError::BadHeader(format!("split tag {tag}")))?;
    let grid = TimeGrid::new(n_bins, dt, t0).map_err(|e| IoError::BadHeader(e.to_string()))?;
    let rec = WaveformParams::FIELD_COUNT * 8 + n_bins * 4;
    let n = usize::try_from(n).map_err(|_| IoError::BadHeader(format!("sample count {n}")))?;
    let payload = n.checked_mul(rec).ok_or_else(|| IoError::BadHeader(format!("sample count {n}")))?;
    let expected = DATASET_HEADER_LEN + payload;
    if buf.len() < expected {
        return Err(IoError::TruncatedFile {
            expected,
            actual: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(IoError::CountMismatch {
            declared: expected,
            actual: buf.len(),
        });
    }
    let mut samples = Vec::with_capacity(n);
    for index in 0..n {
        let raw: [f64; WaveformParams::FIELD_COUNT] = r.f64s(WaveformParams::FIELD_COUNT)?.try_into().expect("field count");
        let params = WaveformParams::from_array(&raw).ok_or_else(|| IoError::BadRecord {
            index,
            reason: format!("pulse family code {}", raw[6]),
        })?;
        let values = r
            .take(n_bins * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let waveform = Waveform::new(grid, values).map_err(|e| IoError::BadRecord {
            index,
            reason: e.to_string(),
        })?;
        samples.push(LabeledSample { waveform, params });
    }
    r.finish()?;
    Ok(Dataset::new(samples, seed, split_tag)?)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), IoError> {
    let bytes = dataset_to_bytes(ds)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, IoError> {
    dataset_from_bytes(&fs::read(path)?)
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<(), IoError> {
    out.extend_from_slice(&u32_field(v, what)?.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn model_to_bytes(m: &Model) -> Result<Vec<u8>, IoError> {
    let c = &m.config;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (v, what) in [
        (c.input_len, "input_len"),
        (c.convs_per_branch, "convs_per_branch"),
        (c.pool_every, "pool_every"),
        (c.kernel_size, "kernel_size"),
        (c.dense_units, "dense_units"),
        (c.branches, "branches"),
        (c.filters.len(), "filter count"),
    ] {
        put_u32(&mut out, v, what)?;
    }
    for f in &c.filters {
        put_u32(&mut out, *f, "filters")?;
    }
    for b in &m.branches {
        put_u32(&mut out, b.layers.len(), "layer count")?;
        for layer in &b.layers {
            match layer {
                Layer::Conv1d(conv) => {
                    out.push(0);
                    put_u32(&mut out, conv.in_channels, "in_channels")?;
                    put_u32(&mut out, conv.filters, "filters")?;
                    put_u32(&mut out, conv.kernel, "kernel")?;
                    put_f64s(&mut out, &conv.weight);
                    put_f64s(&mut out, &conv.bias);
                }
                Layer::BatchNorm(bn) => {
                    out.push(1);
                    put_u32(&mut out, bn.channels, "channels")?;
                    put_f64s(&mut out, &[bn.momentum, bn.eps]);
                    for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                        put_f64s(&mut out, v);
                    }
                }
                Layer::Relu => out.push(2),
                Layer::MaxPool => out.push(3),
                Layer::Flatten => out.push(4),
                Layer::Dense(d) => {
                    out.push(5);
                    put_u32(&mut out, d.inputs, "inputs")?;
                    put_u32(&mut out, d.units, "units")?;
                    put_f64s(&mut out, &d.weight);
                    put_f64s(&mut out, &d.bias);
                }
            }
        }
    }
    Ok(out)
}

/// Same layer kinds and dimensions, ignoring values.
fn same_structure(a: &Layer, b: &Layer) -> bool {
    match (a, b) {
        (Layer::Conv1d(x), Layer::Conv1d(y)) => (x.in_channels, x.filters, x.kernel) == (y.in_channels, y.filters, y.kernel),
        (Layer::BatchNorm(x), Layer::BatchNorm(y)) => x.channels == y.channels,
        (Layer::Dense(x), Layer::Dense(y)) => (x.inputs, x.units) == (y.inputs, y.units),
        (Layer::Relu, Layer::Relu) | (Layer::MaxPool, Layer::MaxPool) | (Layer::Flatten, Layer::Flatten) => true,
        _ => false,
    }
}

fn read_layer(r: &mut Reader) -> Result<Layer, IoError> {
    let tag = r.u8()?;
    Ok(match tag {
        0 => {
            let (in_channels, filters, kernel) = (r.usize32()?, r.usize32()?, r.usize32()?);
            let weight = r.f64s(in_channels * filters * kernel)?;
            let bias = r.f64s(filters)?;
            Layer::Conv1d(Conv1d {
                in_channels,
                filters,
                kernel,
                weight,
                bias,
            })
        }
        1 => {
            let channels = r.usize32()?;
            let (momentum, eps) = (r.f64()?, r.f64()?);
            let mut bn = BatchNorm::new(channels);
            bn.momentum = momentum;
            bn.eps = eps;
            bn.gamma = r.f64s(channels)?;
            bn.beta = r.f64s(channels)?;
            bn.running_mean = r.f64s(channels)?;
            bn.running_var = r.f64s(channels)?;
            Layer::BatchNorm(bn)
        }
        2 => Layer::Relu,
        3 => Layer::MaxPool,
        4 => Layer::Flatten,
        5 => {
            let (inputs, units) = (r.usize32()?, r.usize32()?);
            let weight = r.f64s(inputs * units)?;
            let bias = r.f64s(units)?;
            Layer::Dense(Dense {
                inputs,
                units,
                weight,
                bias,
            })
        }
        t => return Err(IoError::BadHeader(format!("layer tag {t}"))),
    })
}

pub fn model_from_bytes(buf: &[u8]) -> Result<Model, IoError> {
    let mut r = Reader { buf, pos: 0 };
    check_magic(&mut r, CHECKPOINT_MAGIC)?;
    let mut config = ModelConfig {
        input_len: r.usize32()?,
        convs_per_branch: r.usize32()?,
        pool_every: r.usize32()?,
        kernel_size: r.usize32()?,
        dense_units: r.usize32()?,
        branches: r.usize32()?,
        filters: Vec::new(),
    };
    let nf = r.usize32()?;
    if nf > 4096 {
        return Err(IoError::BadHeader(format!("{nf} filter entries")));
    }
    config.filters = (0..nf).map(|_| r.usize32()).collect::<Result<_, _>>()?;
    config.validate().map_err(|e| IoError::BadHeader(e.to_string()))?;
    // the expected layout also guards the allocations below
    let template = build_tribranch(&config, 0)?;
    let mut branches = Vec::with_capacity(config.branches);
    for expected in &template.branches {
        let count = r.usize32()?;
        if count != expected.layers.len() {
            return Err(IoError::BadHeader(format!("{count} layers, expected {}", expected.layers.len())));
        }
        let mut layers = Vec::with_capacity(count);
        for want in &expected.layers {
            let layer = read_layer(&mut r)?;
            if !same_structure(&layer, want) {
                return Err(IoError::BadHeader("layer layout does not match the configuration".into()));
            }
            layers.push(layer);
        }
        branches.push(Branch { layers });
    }
    r.finish()?;
    Ok(Model { config, branches })
}

pub fn write_model(m: &Model, path: &Path) -> Result<(), IoError> {
    let bytes = model_to_bytes(m)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model, IoError> {
    model_from_bytes(&fs::read(path)?)
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String, IoError> {
    if rows.is_empty() {
        return Err(IoError::EmptyPayload);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `target,mae,rmse,r2`, one row per regression target. An undefined r²
/// (constant truth) is written as `undefined`.
pub fn metrics_csv(metrics: &[Metrics]) -> Result<String, IoError> {
    if metrics.len() > TARGETS.len() {
        return Err(IoError::BadRecord {
            index: TARGETS.len(),
            reason: format!("{} metric rows for {} targets", metrics.len(), TARGETS.len()),
        });
    }
    let rows = metrics
        .iter()
        .zip(TARGETS)
        .map(|(m, t)| {
            vec![
                t.to_string(),
                format_float(m.mae),
                format_float(m.rmse),
                m.r2.map_or_else(|| "undefined".to_string(), format_float),
            ]
        })
        .collect();
    csv_string(&["target", "mae", "rmse", "r2"], rows)
}

/// `epoch,train_loss,val_loss`, epochs counted from 1.
pub fn curves_csv(report: &TrainReport) -> Result<String, IoError> {
    let rows = report
        .train_loss
        .iter()
        .zip(&report.val_loss)
        .enumerate()
        .map(|(e, (t, v))| vec![(e + 1).to_string(), format_float(*t), format_float(*v)])
        .collect();
    csv_string(&["epoch", "train_loss", "val_loss"], rows)
}

/// `depth,log_intensity` pairs.
pub fn scatter_csv(pairs: &[(f64, f64)]) -> Result<String, IoError> {
    let rows = pairs.iter().map(|(d, l)| vec![format_float(*d), format_float(*l)]).collect();
    csv_string(&["depth", "log_intensity"], rows)
}

/// `depth,kd,bottom` predictions, one row per waveform.
pub fn predictions_csv(preds: &[[f64; 3]]) -> Result<String, IoError> {
    let rows = preds.iter().map(|p| p.iter().map(|v| format_float(*v)).collect()).collect();
    csv_string(&TARGETS, rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text)?;
    Ok(())
}

/// Train / validation / test shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.80,
            val: 0.15,
            test: 0.05,
        }
    }
}

impl SplitRatios {
    pub fn tuple(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub generate: u64,
    pub split: u64,
    pub init: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            generate: 1,
            split: 2,
            init: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub scatter: Option<PathBuf>,
}

impl RunPaths {
    pub fn named(&self) -> Vec<(&'static str, &PathBuf)> {
        [
            ("paths.input", &self.input),
            ("paths.output", &self.output),
            ("paths.model", &self.model),
            ("paths.source", &self.source),
            ("paths.metrics", &self.metrics),
            ("paths.curves", &self.curves),
            ("paths.scatter", &self.scatter),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k, p)))
        .collect()
    }
}

/// Everything a pipeline run needs besides command-line overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ranges: ParamRanges,
    pub grid: TimeGrid,
    pub shift: ShiftConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: AdaptConfig,
    pub split: SplitRatios,
    pub seeds: Seeds,
    pub paths: RunPaths,
}

fn config_err(key: &str, message: impl ToString) -> IoError {
    IoError::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

/// Best-effort extraction of the offending key from a serde message.
fn serde_key(msg: &str) -> String {
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(k) = rest.split('`').next() {
                return k.to_string();
            }
        }
    }
    "<document>".to_string()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            config_err(&serde_key(&msg), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| config_err("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section; the error names the first offending key.
    pub fn validate(&self) -> Result<(), IoError> {
        self.ranges.validate().map_err(|e| match e {
            SimError::BadRange { field, .. } => config_err(&format!("ranges.{field}"), e),
            other => config_err("ranges", other),
        })?;
        self.grid.validate().map_err(|e| config_err("grid", e))?;
        self.shift.validate().map_err(|e| config_err("shift", e))?;
        self.model.validate().map_err(|e| config_err("model", e))?;
        if self.grid.n_bins > self.model.input_len {
            return Err(config_err(
                "grid.n_bins",
                format!("{} bins exceed the model input length {}", self.grid.n_bins, self.model.input_len),
            ));
        }
        self.train.validate().map_err(|e| config_err("train", e))?;
        let s = &self.adapt.sinkhorn;
        if let Some(eps) = s.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(config_err("adapt.sinkhorn.epsilon", format!("{eps} must be > 0")));
            }
        }
        if !(s.tol > 0.0) {
            return Err(config_err("adapt.sinkhorn.tol", format!("{} must be > 0", s.tol)));
        }
        if s.max_iter == 0 {
            return Err(config_err("adapt.sinkhorn.max_iter", "must be >= 1"));
        }
        if self.adapt.cap == 0 {
            return Err(config_err("adapt.cap", "must be >= 1"));
        }
        split_sizes(0, self.split.tuple()).map_err(|e| config_err("split", e))?;
        let named = self.paths.named();
        for (i, (k, p)) in named.iter().enumerate() {
            if let Some((k2, _)) = named[..i].iter().find(|(_, q)| q == p) {
                return Err(config_err(k, format!("same path as {k2}: {}", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_dataset;
    use crate::wave::compute_metrics;

    fn small_dataset(n: usize) -> Dataset {
        generate_dataset(n, &ParamRanges::default(), &TimeGrid::default(), 9).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let ds = small_dataset(25);
        let bytes = dataset_to_bytes(&ds).unwrap();
        assert_eq!(bytes.len(), DATASET_HEADER_LEN + 25 * (88 + 512 * 4));
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.params.to_array().map(f64::to_bits), b.params.to_array().map(f64::to_bits));
            assert!(a.waveform.samples.iter().zip(&b.waveform.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.seed, ds.seed);
        assert_eq!(back.split_tag, ds.split_tag);
    }

    #[test]
    fn dataset_errors() {
        let ds = small_dataset(10);
        let bytes = dataset_to_bytes(&ds).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(dataset_from_bytes(&bad), Err(IoError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(dataset_from_bytes(&bad), Err(IoError::VersionUnsupported(2))));
        let rec = (bytes.len() - DATASET_HEADER_LEN) / 10;
        assert!(matches!(
            dataset_from_bytes(&bytes[..bytes.len() - rec]),
            Err(IoError::TruncatedFile { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(dataset_from_bytes(&long), Err(IoError::CountMismatch { .. })));
        assert!(matches!(dataset_from_bytes(b"BW"), Err(IoError::BadMagic { .. })));
    }

    #[test]
    fn every_header_byte_corruption_is_rejected() {
        let bytes = dataset_to_bytes(&small_dataset(2)).unwrap();
        for i in 0..DATASET_HEADER_LEN {
            for delta in [1u8, 0x80, 0xff] {
                let mut bad = bytes.clone();
                bad[i] = bad[i].wrapping_add(delta);
                assert!(dataset_from_bytes(&bad).is_err(), "byte {i} + {delta}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = build_tribranch(&ModelConfig::desk(), 4).unwrap();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        assert_eq!(back, m);
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(IoError::BadMagic { .. })));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(IoError::TruncatedFile { .. })));
    }

    #[test]
    fn metrics_csv_schema() {
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 3.0]).unwrap();
        let flat = compute_metrics(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        let text = metrics_csv(&[m, m, flat]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "target,mae,rmse,r2");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("depth,1.0000000000000000e0,"));
        assert!(lines[3].starts_with("bottom,") && lines[3].ends_with(",undefined"));
        assert!(matches!(metrics_csv(&[]), Err(IoError::EmptyPayload)));
    }

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn curves_and_scatter() {
        let report = TrainReport {
            train_loss: vec![3.0, 2.0],
            val_loss: vec![3.5, 2.5],
            best_epoch: 2,
            stopped_epoch: 2,
            best_val_loss: 2.5,
            val_metrics: vec![],
        };
        let text = curves_csv(&report).unwrap();
        assert_eq!(text.lines().next(), Some("epoch,train_loss,val_loss"));
        assert!(text.lines().nth(2).unwrap().starts_with("2,"));
        let pairs = [(1.5, -0.25), (2.0, -0.5)];
        let text = scatter_csv(&pairs).unwrap();
        let parsed: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        assert_eq!(parsed, pairs);
        assert!(matches!(scatter_csv(&[]), Err(IoError::EmptyPayload)));
    }

    #[test]
    fn run_config_json() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert!(matches!(err, IoError::Config { ref key, .. } if key == "trian"), "{err}");
        let err = RunConfig::from_json(r#"{"train": {"learning_rate": -1.0}}"#).unwrap_err();
        assert!(matches!(err, IoError::Config { ref key, .. } if key == "train"), "{err}");
        let err = RunConfig::from_json(r#"{"ranges": {"kd": {"low": 2.0, "high": 1.0}}}"#).unwrap_err();
        assert!(matches!(err, IoError::Config { ref key, .. } if key == "ranges.kd"), "{err}");
        let err = RunConfig::from_json(r#"{"paths": {"input": "a.bwf", "output": "a.bwf"}}"#).unwrap_err();
        assert!(matches!(err, IoError::Config { ref key, .. } if key == "paths.output"), "{err}");
        let err = RunConfig::from_json(r#"{"split": {"train": 0.5, "val": 0.5, "test": 0.5}}"#).unwrap_err();
        assert!(matches!(err, IoError::Config { ref key, .. } if key == "split"), "{err}");
    }
}
