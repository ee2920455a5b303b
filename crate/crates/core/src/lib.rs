//! Full-waveform bathymetric LiDAR toolkit.
//!
//! - [`wave`]: waveform types, preprocessing, splitting and metrics
//! - [`simulator`]: parametric over-water forward model and dataset generation
//! - [`inversion`]: peak-based depth, lookup-table inversion and attenuation regression
//! - [`nn`]: from-scratch 1D CNN stack and the three-branch regressor
//! - [`adapt`]: optimal-transport domain adaptation and fine-tuning
//! - [`io`]: binary dataset / checkpoint files, CSV exports and run configuration

pub mod adapt;
pub mod inversion;
pub mod io;
pub mod nn;
pub mod par;
pub mod simulator;
pub mod wave;

pub use wave::{
    add_noise, compute_metrics, normalize_peak, preprocess, split_dataset, time_of_flight_distance, zero_pad,
    Dataset, ImpType, LabeledSample, Metrics, SplitTag, TimeGrid, Waveform, WaveformParams,
};
