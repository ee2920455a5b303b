//! Data-parallel kernels on a one-thread pool versus the global pool.
//!
//! Build with `--no-default-features` to time the sequential fallback.

use std::hint::black_box;

use bathywave::adapt::cost_matrix;
use bathywave::nn::{build_tribranch, predict, ModelConfig};
use bathywave::par;
use bathywave::simulator::{generate_dataset, ParamRanges};
use bathywave::wave::{preprocess, TimeGrid, Waveform};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn waveforms(n: usize, seed: u64) -> Vec<Waveform> {
    generate_dataset(n, &ParamRanges::default(), &TimeGrid::default(), seed)
        .unwrap()
        .waveforms()
}

fn workers() -> [(&'static str, Option<usize>); 2] {
    [("one_thread", Some(1)), ("pool", None)]
}

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_1000");
    for (name, w) in workers() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(w, || generate_dataset(1000, &ParamRanges::default(), &TimeGrid::default(), black_box(5))))
        });
    }
    g.finish();
}

fn transport_cost(c: &mut Criterion) {
    let src: Vec<Waveform> = waveforms(200, 1).iter().map(|w| preprocess(w).unwrap()).collect();
    let tgt: Vec<Waveform> = waveforms(200, 2).iter().map(|w| preprocess(w).unwrap()).collect();
    let mut g = c.benchmark_group("cost_matrix_200x200");
    for (name, w) in workers() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(w, || cost_matrix(black_box(&tgt), black_box(&src))))
        });
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let model = build_tribranch(&ModelConfig::desk(), 3).unwrap();
    let input = waveforms(128, 3);
    let mut g = c.benchmark_group("predict_128_desk");
    g.sample_size(10);
    for (name, w) in workers() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(w, || predict(&model, black_box(&input))))
        });
    }
    g.finish();
}

criterion_group!(benches, generation, transport_cost, inference);
criterion_main!(benches);
