//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default. `ACCEPTANCE_ONLY=2,3` restricts the run;
//! criterion 9 trains its own model when criterion 7 is skipped.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use bathywave::adapt::{
    adapt_and_predict, emd_transport, fine_tune, sinkhorn_log, sinkhorn_standard, uniform_marginal, AdaptConfig,
    CostMatrix, SinkhornConfig,
};
use bathywave::inversion::{build_lut, depth_from_waveform, fit_attenuation, lut_invert, LutAxes, DEFAULT_LUT_CAP};
use bathywave::io::{curves_csv, dataset_to_bytes, metrics_csv, write_model};
use bathywave::nn::gradcheck::{check_kind, LayerKind};
use bathywave::nn::{self, build_tribranch, evaluate_predictions, Model, ModelConfig, TrainConfig, TrainReport};
use bathywave::par;
use bathywave::simulator::{
    generate_dataset, generate_shifted_dataset, is_resolvable, sample_params, simulate_waveform, ParamRanges, ShiftConfig,
};
use bathywave::wave::{
    add_noise, normalize_peak, split_dataset, time_of_flight_distance, Dataset, ImpType, LabeledSample, Metrics, TimeGrid,
    Waveform, WaveformParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).expect("output directory");
    d
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1. Gradient correctness

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 50;

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut checked = 0;
    for kind in LayerKind::ALL {
        match check_kind(kind, GRAD_INSTANCES, 2024) {
            Ok(r) => {
                checked += r.checked;
                if r.max_rel_error >= worst.0 {
                    worst = (r.max_rel_error, kind.name());
                }
            }
            Err(e) => return outcome(false, format!("{}: {e}", kind.name())),
        }
    }
    let t = start.elapsed();
    outcome(
        worst.0 < GRAD_TOL && t < Duration::from_secs(60),
        format!(
            "{} kinds x {GRAD_INSTANCES} instances, {checked} partials, max rel error {:.2e} ({}) < {GRAD_TOL:e}, {:.1} s < 60 s",
            LayerKind::ALL.len(),
            worst.0,
            worst.1,
            t.as_secs_f64()
        ),
    )
}

// 2. Exact transport against permutation enumeration

/// Minimum assignment cost over all permutations (Heap's algorithm).
fn brute_force_assignment(c: &CostMatrix) -> f64 {
    let n = c.rows;
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>() / n as f64;
    let mut best = cost(&perm);
    let mut stack = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(cost(&perm));
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

fn emd_exactness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..=6);
        let c = CostMatrix::new(n, n, (0..n * n).map(|_| r.random_range(0.0..10.0)).collect()).unwrap();
        let a = uniform_marginal(n);
        let plan = match emd_transport(&a, &a, &c) {
            Ok(p) => p,
            Err(e) => return outcome(false, format!("emd failed: {e}")),
        };
        worst = worst.max((plan.cost(&c) - brute_force_assignment(&c)).abs());
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(60),
        format!("100 instances n = m in 2..=6, max |emd - brute force| = {worst:.2e} <= 1e-9, {:.2} s", t.as_secs_f64()),
    )
}

// 3. Sinkhorn properties

/// Regularization for the property check, relative to median(C). The library
/// default (0.01) does not always reach 1e-9 within 10,000 iterations here.
const CHECK_EPSILON_SCALE: f64 = 0.05;

fn sinkhorn_properties() -> Outcome {
    let mut r = rng(31);
    let (mut viol, mut gap_min, mut agree) = (0.0f64, f64::INFINITY, 0.0f64);
    let instances = 100;
    let (mut iters, mut default_converged) = (0, 0);
    for _ in 0..instances {
        let c = CostMatrix::new(20, 30, (0..600).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let (a, b) = (uniform_marginal(20), uniform_marginal(30));
        if sinkhorn_standard(&a, &b, &c, &SinkhornConfig::default()).is_ok() {
            default_converged += 1;
        }
        let cfg = SinkhornConfig {
            epsilon: Some(CHECK_EPSILON_SCALE * c.median()),
            ..SinkhornConfig::default()
        };
        let (s, l) = match (sinkhorn_standard(&a, &b, &c, &cfg), sinkhorn_log(&a, &b, &c, &cfg)) {
            (Ok(s), Ok(l)) => (s, l),
            (s, l) => return outcome(false, format!("solver error: {:?} / {:?}", s.err().map(|e| e.to_string()), l.err().map(|e| e.to_string()))),
        };
        iters = iters.max(s.iterations).max(l.iterations);
        let emd = emd_transport(&a, &b, &c).expect("exact plan");
        viol = viol.max(s.marginal_violation()).max(l.marginal_violation());
        gap_min = gap_min.min(s.cost(&c) - emd.cost(&c)).min(l.cost(&c) - emd.cost(&c));
        for (x, y) in s.coupling.iter().zip(&l.coupling) {
            agree = agree.max((x - y).abs());
        }
    }
    outcome(
        viol < 1e-9 && gap_min >= 0.0 && agree < 1e-8,
        format!(
            "{instances} random 20x30 instances, epsilon {CHECK_EPSILON_SCALE} x median(C): max violation {viol:.2e} < 1e-9, min(entropic - exact) cost {gap_min:.3e} >= 0, log vs standard {agree:.2e} < 1e-8, <= {iters} iterations (default epsilon converged on {default_converged}/{instances})"
        ),
    )
}

// 4. Depth round trip

fn depth_round_trip() -> Outcome {
    let start = Instant::now();
    let grid = TimeGrid::default();
    let tol = time_of_flight_distance(grid.dt, 1.33).unwrap();
    let ranges = ParamRanges::default().noiseless();
    let mut params = Vec::new();
    let mut drawn = 0u64;
    while params.len() < 1000 {
        let p = sample_params(&ranges, 5_000_000 + drawn).unwrap();
        drawn += 1;
        if is_resolvable(&p) {
            params.push(p);
        }
    }
    let errors = par::map_slice(&params, |p| {
        let w = simulate_waveform(p, &grid, 0).unwrap();
        depth_from_waveform(&w, 1.33, 1e-9).map(|d| (d - p.depth).abs())
    });
    let failures = errors.iter().filter(|e| e.is_err()).count();
    let worst = errors.iter().filter_map(|e| e.as_ref().ok()).fold(0.0f64, |a, b| a.max(*b));
    let t = start.elapsed();
    outcome(
        failures == 0 && worst <= tol && t < Duration::from_secs(60),
        format!(
            "1000 resolvable noiseless waveforms ({drawn} drawn), max |error| {worst:.4} m <= {tol:.4} m, {failures} failures, {:.1} s",
            t.as_secs_f64()
        ),
    )
}

// 5. kd regression recovery

const PLANTED_SLOPE: f64 = -0.2323;

fn kd_recovery() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(900 + seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let points: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let depth = r.random_range(0.15..19.0);
                (depth, 3.0 + PLANTED_SLOPE * depth + noise.sample(&mut r))
            })
            .collect();
        match fit_attenuation(&points) {
            Ok(fit) => worst = worst.max((fit.kd_hat - PLANTED_SLOPE.abs()).abs()),
            Err(e) => return outcome(false, format!("fit failed: {e}")),
        }
    }
    outcome(worst <= 0.01, format!("20 seeds x 1000 points, max |kd_hat - 0.2323| = {worst:.5} <= 0.01"))
}

// 6. Lookup-table inversion

fn lut_inversion() -> Outcome {
    let grid = TimeGrid::default();
    let axes = LutAxes {
        depth: vec![2.0, 5.0, 8.0],
        kd: vec![0.1, 0.3],
        i_ref: vec![20.0, 60.0],
        i_w: vec![0.5],
        amplitude: vec![1.0, 4.0],
        imp_type: vec![ImpType::Bell, ImpType::Gumbel],
        w_c: vec![0.3, 0.6],
        base_intensity: vec![0.0],
        i_s: vec![5.0],
    };
    let lut = match build_lut(&axes, &grid, DEFAULT_LUT_CAP) {
        Ok(l) => l,
        Err(e) => return outcome(false, format!("build failed: {e}")),
    };
    let (mut self_worst, mut scaled_worst) = (0.0f64, 0.0f64);
    let mut wrong_match = 0;
    for (i, e) in lut.entries.iter().enumerate() {
        let raw = simulate_waveform(&axes.params_at(i), &grid, 0).unwrap();
        let m = lut_invert(&raw, &lut).unwrap();
        self_worst = self_worst.max(m.merit);
        if lut.entries[m.index].waveform != e.waveform {
            wrong_match += 1;
        }
        let scaled = Waveform::new(grid, raw.samples.iter().map(|v| 3.0 * v).collect()).unwrap();
        scaled_worst = scaled_worst.max(lut_invert(&scaled, &lut).unwrap().merit);
    }
    // midpoints between neighbouring axis values against an exhaustive argmin
    let mid = |v: &[f64], k: usize| if v.len() > 1 { 0.5 * (v[k % (v.len() - 1)] + v[k % (v.len() - 1) + 1]) } else { v[0] };
    let mut mismatches = 0;
    let queries = 24;
    for k in 0..queries {
        let p = WaveformParams {
            depth: mid(&axes.depth, k),
            kd: mid(&axes.kd, k),
            i_ref: mid(&axes.i_ref, k),
            i_w: 0.5,
            amplitude: mid(&axes.amplitude, k),
            noise_sigma: 0.0,
            imp_type: axes.imp_type[k % 2],
            w_c: mid(&axes.w_c, k),
            base_intensity: 0.0,
            i_s: 5.0,
            max_depth: 8.0,
        };
        let w = simulate_waveform(&p, &grid, 0).unwrap();
        let q = normalize_peak(&w).unwrap();
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, e) in lut.entries.iter().enumerate() {
            let merit: f64 = q
                .samples
                .iter()
                .zip(&e.waveform.samples)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            if merit < best.0 {
                best = (merit, i);
            }
        }
        let m = lut_invert(&w, &lut).unwrap();
        if m.index != best.1 || (m.merit - best.0).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    outcome(
        self_worst == 0.0 && wrong_match == 0 && scaled_worst < 1e-12 && mismatches == 0,
        format!(
            "{} entries: self merit max {self_worst:.1e}, 3x scaled merit max {scaled_worst:.1e} < 1e-12, {wrong_match} wrong self matches; {queries} midpoint queries, {mismatches} argmin mismatches",
            lut.entries.len()
        ),
    )
}

// 7. Desk-scale training

const DESK_WAVEFORMS: usize = 50_000;
const DESK_SEED: u64 = 20_240_601;
const DESK_MAX_EPOCHS: usize = 30;
const DESK_BUDGET: Duration = Duration::from_secs(2 * 3600);

struct DeskRun {
    model: Model,
    train: Dataset,
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: DESK_MAX_EPOCHS,
        seed: DESK_SEED,
        ..TrainConfig::default()
    }
}

fn r2(m: &Metrics) -> f64 {
    m.r2.unwrap_or(f64::NAN)
}

/// Least-squares slope of `ys` against their index.
fn trend(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        sxy += (i as f64 - mx) * (y - my);
        sxx += (i as f64 - mx).powi(2);
    }
    sxy / sxx
}

/// Training curve follows the early-stopping contract: both losses trend
/// down, the kept epoch beats the first, and the run stopped within
/// `patience` epochs of the best one (or at the epoch cap).
fn curves_ok(report: &TrainReport, cfg: &TrainConfig) -> (bool, String) {
    let n = report.val_loss.len();
    let train_down = n >= 2 && trend(&report.train_loss) < 0.0;
    let val_down = n >= 2 && trend(&report.val_loss) < 0.0 && report.best_val_loss < report.val_loss[0];
    let stop_ok = report.stopped_epoch == cfg.max_epochs || report.stopped_epoch - report.best_epoch == cfg.early_stop_patience;
    (
        train_down && val_down && stop_ok,
        format!(
            "curves: {n} epochs, train {:.3} -> {:.3}, val {:.3} -> best {:.3} at epoch {}, stopped {}",
            report.train_loss.first().unwrap_or(&f64::NAN),
            report.train_loss.last().unwrap_or(&f64::NAN),
            report.val_loss.first().unwrap_or(&f64::NAN),
            report.best_val_loss,
            report.best_epoch,
            report.stopped_epoch
        ),
    )
}

fn desk_training() -> (Outcome, Option<DeskRun>) {
    let start = Instant::now();
    let ds = generate_dataset(DESK_WAVEFORMS, &ParamRanges::default(), &TimeGrid::default(), DESK_SEED).unwrap();
    let (train, val, test) = split_dataset(&ds, (0.80, 0.15, 0.05), DESK_SEED).unwrap();
    let config = ModelConfig::desk();
    let mut model = build_tribranch(&config, DESK_SEED).unwrap();
    let cfg = desk_train_config();
    let report = match nn::train(&mut model, &train, &val, &cfg) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("training failed: {e}")), None),
    };
    let elapsed = start.elapsed();
    let metrics = nn::evaluate(&model, &test).unwrap();
    let dir = out_dir();
    let exported = std::fs::write(dir.join("desk_curves.csv"), curves_csv(&report).unwrap())
        .and_then(|_| std::fs::write(dir.join("desk_metrics.csv"), metrics_csv(&metrics).unwrap()))
        .is_ok()
        && write_model(&model, &dir.join("desk.bwnn")).is_ok();
    let (kd, depth, bottom) = (r2(&metrics[1]), r2(&metrics[0]), r2(&metrics[2]));
    let (curves_pass, curves_detail) = curves_ok(&report, &cfg);
    let pass = kd >= 0.8
        && kd > depth
        && depth > bottom
        && exported
        && curves_pass
        && config.convs_per_branch >= 10
        && report.stopped_epoch <= DESK_MAX_EPOCHS
        && elapsed <= DESK_BUDGET;
    let detail = format!(
        "{DESK_WAVEFORMS} waveforms, {} convs/branch, test r2 kd {kd:.4} (>= 0.8), depth {depth:.4}, bottom {bottom:.4} (need kd > depth > bottom); {curves_detail}; exported {exported}; {:.1} min (<= 120)",
        config.convs_per_branch,
        elapsed.as_secs_f64() / 60.0
    );
    (outcome(pass, detail), Some(DeskRun { model, train }))
}

// 8. Noise augmentation

const NOISE_WAVEFORMS: usize = 4_000;
const NOISE_SIGMA: f64 = 0.05;
const NOISE_EPOCHS: usize = 20;
const NOISE_SEED: u64 = 8_888;

/// Peak-normalized copies with Gaussian noise, labels kept.
fn noisy_copy(ds: &Dataset, sigma: f64, seed: u64, input_len: usize) -> Dataset {
    let samples = par::map_indexed(ds.len(), |i| {
        let s = &ds.samples[i];
        let w = nn::prepare(&s.waveform, input_len).unwrap();
        LabeledSample {
            waveform: add_noise(&w, sigma, seed ^ i as u64).unwrap(),
            params: s.params,
        }
    });
    Dataset::new(samples, ds.seed, ds.split_tag).unwrap()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn noise_augmentation() -> Outcome {
    let ds = generate_dataset(NOISE_WAVEFORMS, &ParamRanges::default(), &TimeGrid::default(), NOISE_SEED).unwrap();
    let (train, val, _) = split_dataset(&ds, (0.80, 0.15, 0.05), NOISE_SEED).unwrap();
    let config = ModelConfig::desk();
    let noisy_val = noisy_copy(&val, NOISE_SIGMA, NOISE_SEED, config.input_len);
    let mut curves = Vec::new();
    for sigma in [0.0, NOISE_SIGMA] {
        let mut model = build_tribranch(&config, NOISE_SEED).unwrap();
        let cfg = TrainConfig {
            max_epochs: NOISE_EPOCHS,
            early_stop_patience: NOISE_EPOCHS,
            noise_augment_sigma: sigma,
            seed: NOISE_SEED,
            ..TrainConfig::default()
        };
        match nn::train(&mut model, &train, &noisy_val, &cfg) {
            Ok(r) => curves.push(r.val_loss),
            Err(e) => return outcome(false, format!("training failed: {e}")),
        }
    }
    let tail = |c: &[f64]| c[c.len().saturating_sub(10)..].to_vec();
    let (plain, aug) = (tail(&curves[0]), tail(&curves[1]));
    let (vp, va) = (variance(&plain), variance(&aug));
    let (fp, fa) = (*plain.last().unwrap(), *aug.last().unwrap());
    outcome(
        va < vp && fa <= fp,
        format!(
            "sigma {NOISE_SIGMA}, {NOISE_EPOCHS} epochs, noisy validation: last-10 variance augmented {va:.4e} < plain {vp:.4e}, final {fa:.4} <= {fp:.4}"
        ),
    )
}

// 9. Adaptation direction

/// A second simulator with a detector pedestal of half the amplitude.
const SHIFT: ShiftConfig = ShiftConfig {
    background_offset: 0.5,
    ..ShiftConfig::IDENTITY
};
const TARGET_WAVEFORMS: usize = 1_000;
const SOURCE_SAMPLE: usize = 5_000;
const LABELED_SHARE: f64 = 0.10;
const ADAPT_SEED: u64 = 4_242;

fn mae_of(preds: &[[f64; 3]], truth: &[[f64; 3]]) -> Vec<Metrics> {
    evaluate_predictions(preds, truth).unwrap()
}

fn adaptation(desk: Option<&DeskRun>) -> Outcome {
    let start = Instant::now();
    let fallback;
    let desk = match desk {
        Some(d) => d,
        None => {
            fallback = desk_training().1.expect("desk model");
            &fallback
        }
    };
    let target = generate_shifted_dataset(TARGET_WAVEFORMS, &ParamRanges::default(), &TimeGrid::default(), &SHIFT, ADAPT_SEED).unwrap();
    let (labeled, held_out, _) = split_dataset(&target, (LABELED_SHARE, 1.0 - LABELED_SHARE, 0.0), ADAPT_SEED).unwrap();
    let source: Vec<Waveform> = desk.train.samples.iter().take(SOURCE_SAMPLE).map(|s| s.waveform.clone()).collect();
    let truth = held_out.targets();
    let waves = held_out.waveforms();
    let model = &desk.model;

    let plain = mae_of(&nn::predict(model, &waves).unwrap(), &truth);
    let cfg = AdaptConfig {
        seed: ADAPT_SEED,
        ..AdaptConfig::default()
    };
    let adapted = match adapt_and_predict(model, &waves, &source, &cfg) {
        Ok(a) => a,
        Err(e) => return outcome(false, format!("adaptation failed: {e}")),
    };
    let ot = mae_of(&adapted.predictions, &truth);
    let tc = TrainConfig {
        max_epochs: 10,
        seed: ADAPT_SEED,
        ..TrainConfig::default()
    };
    let tuned = match fine_tune(model, &labeled, &tc) {
        Ok((m, _)) => m,
        Err(e) => return outcome(false, format!("fine-tuning failed: {e}")),
    };
    let ft = mae_of(&nn::predict(&tuned, &waves).unwrap(), &truth);
    let kd_ok = ot[1].mae < plain[1].mae;
    let depth_ok = ft[0].mae < plain[0].mae && ft[0].mae < ot[0].mae;
    outcome(
        kd_ok && depth_ok,
        format!(
            "shifted target ({} held out, {} labeled): kd MAE adapted {:.4} < unadapted {:.4}; depth MAE fine-tuned {:.3} < unadapted {:.3} and adapted {:.3}; plan violation {:.1e}; {:.1} min",
            held_out.len(),
            labeled.len(),
            ot[1].mae,
            plain[1].mae,
            ft[0].mae,
            plain[0].mae,
            ot[0].mae,
            adapted.violation,
            start.elapsed().as_secs_f64() / 60.0
        ),
    )
}

// 10. Determinism

fn pipeline(workers: usize) -> (Vec<u8>, String) {
    par::with_workers(Some(workers), || {
        let ds = generate_dataset(600, &ParamRanges::default(), &TimeGrid::default(), 99).unwrap();
        let bytes = dataset_to_bytes(&ds).unwrap();
        let (train, val, test) = split_dataset(&ds, (0.80, 0.15, 0.05), 99).unwrap();
        let mut m = build_tribranch(&ModelConfig::desk(), 99).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: 99,
            ..TrainConfig::default()
        };
        nn::train(&mut m, &train, &val, &cfg).unwrap();
        (bytes, metrics_csv(&nn::evaluate(&m, &test).unwrap()).unwrap())
    })
}

fn determinism() -> Outcome {
    let a = pipeline(1);
    let b = pipeline(1);
    let c = pipeline(8);
    outcome(
        a == b && a == c,
        format!(
            "generate -> split -> train -> evaluate: datasets identical {} / {}, metrics CSVs identical {} / {} (1 vs 1, 1 vs 8 workers)",
            a.0 == b.0,
            a.0 == c.0,
            a.1 == b.1,
            a.1 == c.1
        ),
    )
}

fn selected() -> BTreeSet<u32> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(v) => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    }
}

fn report(id: u32, o: &Outcome, t: Duration) {
    println!(
        "criterion {id:>2}: {} | {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.as_secs_f64()
    );
}

fn main() {
    // cargo passes harness flags such as --list; there are no sub-tests to list
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let want = selected();
    let mut failed = Vec::new();
    let mut desk = None;
    let mut run = |id: u32, f: &mut dyn FnMut() -> Outcome| {
        if want.contains(&id) {
            let t = Instant::now();
            let o = f();
            report(id, &o, t.elapsed());
            if !o.pass {
                failed.push(id);
            }
        }
    };
    run(1, &mut gradients);
    run(2, &mut emd_exactness);
    run(3, &mut sinkhorn_properties);
    run(4, &mut depth_round_trip);
    run(5, &mut kd_recovery);
    run(6, &mut lut_inversion);
    run(7, &mut || {
        let (o, d) = desk_training();
        desk = d;
        o
    });
    run(8, &mut noise_augmentation);
    run(9, &mut || adaptation(desk.as_ref()));
    run(10, &mut determinism);
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
