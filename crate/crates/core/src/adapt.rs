//! Optimal-transport domain adaptation: cost matrices, exact and entropic
//! transport plans, barycentric mapping, and fine-tuning on labeled targets.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Model, NnError, TrainConfig, TrainReport};
use crate::par;
use crate::wave::{split_dataset, Dataset, Metrics, WaveError, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("waveform lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("marginals must each sum to 1 (got {a_sum}, {b_sum})")]
    UnbalancedMarginals { a_sum: f64, b_sum: f64 },
    #[error("degenerate transport problem: {0}")]
    Degenerate(String),
    #[error("sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}")]
    NotConverged {
        iterations: usize,
        violation: f64,
        plan: Box<TransportPlan>,
    },
    #[error("kernel underflow at epsilon {0:e}")]
    NumericalUnderflow(f64),
    #[error("mapped sample {index} receives no mass")]
    ZeroColumnMass { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// Row-major `rows x cols` matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdaptError> {
        if data.len() != rows * cols {
            return Err(AdaptError::DimensionMismatch(format!("{rows}x{cols} from {} values", data.len())));
        }
        if data.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(AdaptError::Degenerate("costs must be finite and nonnegative".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn median(&self) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// Squared Euclidean distance between every source and target waveform.
pub fn cost_matrix(source: &[Waveform], target: &[Waveform]) -> Result<CostMatrix, AdaptError> {
    let len = source.first().or(target.first()).map_or(0, Waveform::len);
    for w in source.iter().chain(target) {
        if w.len() != len {
            return Err(AdaptError::LengthMismatch(len, w.len()));
        }
    }
    let rows = par::map_slice(source, |s| {
        target
            .iter()
            .map(|t| {
                s.samples
                    .iter()
                    .zip(&t.samples)
                    .map(|(x, y)| {
                        let d = *x as f64 - *y as f64;
                        d * d
                    })
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    CostMatrix::new(source.len(), target.len(), rows.concat())
}

/// Coupling between source rows and target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub coupling: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Solver iterations (simplex pivots or Sinkhorn sweeps).
    pub iterations: usize,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.coupling.iter().zip(&c.data).map(|(p, c)| p * c).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coupling.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.coupling.chunks_exact(self.cols) {
            for (a, v) in s.iter_mut().zip(r) {
                *a += v;
            }
        }
        s
    }

    /// Largest absolute deviation of a row or column sum from its marginal.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self.row_sums().iter().zip(&self.a).map(|(s, a)| (s - a).abs()).fold(0.0, f64::max);
        let cols = self.col_sums().iter().zip(&self.b).map(|(s, b)| (s - b).abs()).fold(0.0, f64::max);
        rows.max(cols)
    }
}

pub fn uniform_marginal(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

const MARGINAL_TOL: f64 = 1e-12;

fn check_problem(a: &[f64], b: &[f64], c: &CostMatrix) -> Result<(), AdaptError> {
    if a.len() != c.rows || b.len() != c.cols {
        return Err(AdaptError::DimensionMismatch(format!(
            "marginals {}x{} for a {}x{} cost",
            a.len(),
            b.len(),
            c.rows,
            c.cols
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(AdaptError::Degenerate("empty marginal".into()));
    }
    if a.iter().chain(b).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(AdaptError::Degenerate("marginal weights must be finite and nonnegative".into()));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if sa == 0.0 || sb == 0.0 {
        return Err(AdaptError::Degenerate("zero-mass marginal".into()));
    }
    if (sa - 1.0).abs() > MARGINAL_TOL || (sb - 1.0).abs() > MARGINAL_TOL {
        return Err(AdaptError::UnbalancedMarginals { a_sum: sa, b_sum: sb });
    }
    Ok(())
}

/// Exact optimal transport by the transportation simplex.
///
/// Starts from the north-west corner solution and pivots on the most
/// negative reduced cost, lowest row-major index first. After a run of
/// degenerate pivots it switches to Bland's rule, which cannot cycle.
/// The returned plan is a vertex of the transportation polytope.
pub fn emd_transport(a: &[f64], b: &[f64], c: &CostMatrix) -> Result<TransportPlan, AdaptError> {
    check_problem(a, b, c)?;
    let (n, m) = (c.rows, c.cols);
    // absorb the admissible rounding gap into b
    let scale = a.iter().sum::<f64>() / b.iter().sum::<f64>();
    let mut rb: Vec<f64> = b.iter().map(|v| v * scale).collect();
    let mut ra = a.to_vec();

    let mut x = vec![0.0; n * m];
    let mut basic = vec![false; n * m];
    let (mut i, mut j) = (0, 0);
    loop {
        let q = ra[i].min(rb[j]);
        x[i * m + j] = q;
        basic[i * m + j] = true;
        ra[i] -= q;
        rb[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i < n - 1 && (j == m - 1 || ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let cmax = c.data.iter().copied().fold(0.0, f64::max);
    let tol = 1e-12 * cmax.max(1e-300);
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; m]);
    loop {
        potentials(&basic, c, &mut u, &mut v);
        let bland = degenerate_run > n + m;
        let mut enter = None;
        let mut best = -tol;
        'scan: for p in 0..n {
            for q in 0..m {
                if basic[p * m + q] {
                    continue;
                }
                let r = c.get(p, q) - u[p] - v[q];
                if r < best {
                    enter = Some((p, q));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((p, q)) = enter else { break };
        let cycle = tree_path(&basic, n, m, q, p)
            .ok_or_else(|| AdaptError::Degenerate("basis is not a spanning tree".into()))?;
        // cycle cells: entering (+), then alternating (-), (+), ...
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &cell in cycle.iter().step_by(2) {
            if x[cell] < theta || (x[cell] == theta && cell < leave) {
                theta = x[cell];
                leave = cell;
            }
        }
        for (k, &cell) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                x[cell] -= theta;
            } else {
                x[cell] += theta;
            }
        }
        x[p * m + q] += theta;
        x[leave] = 0.0;
        basic[leave] = false;
        basic[p * m + q] = true;
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        pivots += 1;
        if pivots > 100 * (n * m + 10) {
            return Err(AdaptError::Degenerate("simplex did not terminate".into()));
        }
    }
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(TransportPlan {
        rows: n,
        cols: m,
        coupling: x,
        a: a.to_vec(),
        b: b.to_vec(),
        iterations: pivots,
    })
}

/// Dual potentials with `u[0] = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(basic: &[bool], c: &CostMatrix, u: &mut [f64], v: &mut [f64]) {
    let (n, m) = (c.rows, c.cols);
    let mut seen_r = vec![false; n];
    let mut seen_c = vec![false; m];
    let mut queue = VecDeque::new();
    u[0] = 0.0;
    seen_r[0] = true;
    queue.push_back((true, 0usize));
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            for q in 0..m {
                if basic[k * m + q] && !seen_c[q] {
                    v[q] = c.get(k, q) - u[k];
                    seen_c[q] = true;
                    queue.push_back((false, q));
                }
            }
        } else {
            for p in 0..n {
                if basic[p * m + k] && !seen_r[p] {
                    u[p] = c.get(p, k) - v[k];
                    seen_r[p] = true;
                    queue.push_back((true, p));
                }
            }
        }
    }
}

/// Basic cells on the tree path from column `from_col` to row `to_row`.
fn tree_path(basic: &[bool], n: usize, m: usize, from_col: usize, to_row: usize) -> Option<Vec<usize>> {
    // nodes: rows 0..n, columns n..n+m
    let mut parent = vec![usize::MAX; n + m];
    let start = n + from_col;
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == to_row {
            break;
        }
        if node < n {
            for q in 0..m {
                if basic[node * m + q] && parent[n + q] == usize::MAX {
                    parent[n + q] = node;
                    queue.push_back(n + q);
                }
            }
        } else {
            let q = node - n;
            for p in 0..n {
                if basic[p * m + q] && parent[p] == usize::MAX {
                    parent[p] = node;
                    queue.push_back(p);
                }
            }
        }
    }
    if parent[to_row] == usize::MAX {
        return None;
    }
    let mut cells = Vec::new();
    let mut node = to_row;
    while node != start {
        let prev = parent[node];
        let (r, col) = if node < n { (node, prev - n) } else { (prev, node - n) };
        cells.push(r * m + col);
        node = prev;
    }
    // walked from the row back to the column; the cell next to the entering
    // one on the row side must come first
    Some(cells)
}

/// Entropic transport settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// Regularization strength; `None` means `0.01 * median(C)`.
    pub epsilon: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

/// Multiplier of `median(C)` in the default regularization strength.
pub const DEFAULT_EPSILON_SCALE: f64 = 0.01;

impl SinkhornConfig {
    /// Regularization used for `c`. An all-zero cost matrix gets 1.
    pub fn epsilon_for(&self, c: &CostMatrix) -> f64 {
        match self.epsilon {
            Some(e) => e,
            None => {
                let med = c.median();
                if med > 0.0 {
                    DEFAULT_EPSILON_SCALE * med
                } else {
                    1.0
                }
            }
        }
    }

    fn validate(&self, eps: f64) -> Result<(), AdaptError> {
        if !(eps > 0.0 && eps.is_finite()) || !(self.tol > 0.0) {
            return Err(AdaptError::BadConfig(format!("epsilon {eps} and tol {} must be > 0", self.tol)));
        }
        Ok(())
    }
}

fn finish(plan: TransportPlan, violation: f64, tol: f64) -> Result<TransportPlan, AdaptError> {
    if violation < tol {
        Ok(plan)
    } else {
        Err(AdaptError::NotConverged {
            iterations: plan.iterations,
            violation,
            plan: Box::new(plan),
        })
    }
}

/// Sinkhorn scaling with the kernel `exp(-C / eps)` held explicitly.
/// Fails with `NumericalUnderflow` when a scaling vector stops being finite
/// and positive.
pub fn sinkhorn_standard(a: &[f64], b: &[f64], c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan, AdaptError> {
    check_problem(a, b, c)?;
    let eps = cfg.epsilon_for(c);
    cfg.validate(eps)?;
    let (n, m) = (c.rows, c.cols);
    let k: Vec<f64> = c.data.iter().map(|v| (-v / eps).exp()).collect();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut violation = f64::INFINITY;
    let mut it = 0;
    let underflow = || AdaptError::NumericalUnderflow(eps);
    while it < cfg.max_iter {
        it += 1;
        for i in 0..n {
            let s: f64 = k[i * m..(i + 1) * m].iter().zip(&v).map(|(kk, vv)| kk * vv).sum();
            u[i] = a[i] / s;
        }
        let mut kt_u = vec![0.0; m];
        for i in 0..n {
            for (acc, kk) in kt_u.iter_mut().zip(&k[i * m..(i + 1) * m]) {
                *acc += kk * u[i];
            }
        }
        for j in 0..m {
            v[j] = b[j] / kt_u[j];
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) || u.iter().zip(a).any(|(x, w)| *x == 0.0 && *w > 0.0) {
            return Err(underflow());
        }
        // columns are exact after the v update; rows carry the violation
        violation = 0.0;
        for i in 0..n {
            let s: f64 = k[i * m..(i + 1) * m].iter().zip(&v).map(|(kk, vv)| kk * vv).sum();
            violation = f64::max(violation, (u[i] * s - a[i]).abs());
        }
        if violation < cfg.tol {
            break;
        }
    }
    let mut coupling = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            coupling[i * m + j] = u[i] * k[i * m + j] * v[j];
        }
    }
    let plan = TransportPlan {
        rows: n,
        cols: m,
        coupling,
        a: a.to_vec(),
        b: b.to_vec(),
        iterations: it,
    };
    let violation = plan.marginal_violation().max(if violation.is_finite() { 0.0 } else { violation });
    finish(plan, violation, cfg.tol)
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Sinkhorn iterations on the dual potentials with log-sum-exp reductions;
/// stable for any `eps > 0`.
pub fn sinkhorn_log(a: &[f64], b: &[f64], c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan, AdaptError> {
    check_problem(a, b, c)?;
    let eps = cfg.epsilon_for(c);
    cfg.validate(eps)?;
    let (n, m) = (c.rows, c.cols);
    // the plan is invariant to a constant shift of the cost; removing the
    // minimum keeps f + g - C free of cancellation for large offsets
    let cmin = c.data.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = CostMatrix {
        rows: n,
        cols: m,
        data: c.data.iter().map(|v| v - cmin).collect(),
    };
    let c = &shifted;
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let plan_entry = |f: &[f64], g: &[f64], i: usize, j: usize| ((f[i] + g[j] - c.get(i, j)) / eps).exp();
    let mut it = 0;
    while it < cfg.max_iter {
        it += 1;
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - c.get(i, j)) / eps));
            f[i] = eps * (la[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - c.get(i, j)) / eps));
            g[j] = eps * (lb[j] - lse);
        }
        let violation = (0..n)
            .map(|i| ((0..m).map(|j| plan_entry(&f, &g, i, j)).sum::<f64>() - a[i]).abs())
            .fold(0.0, f64::max);
        if violation < cfg.tol {
            break;
        }
    }
    let mut coupling = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            coupling[i * m + j] = plan_entry(&f, &g, i, j);
        }
    }
    let plan = TransportPlan {
        rows: n,
        cols: m,
        coupling,
        a: a.to_vec(),
        b: b.to_vec(),
        iterations: it,
    };
    let violation = plan.marginal_violation();
    finish(plan, violation, cfg.tol)
}

/// Entropic transport: the standard scaling iteration, falling back to the
/// log-domain solver when the kernel underflows.
pub fn sinkhorn_transport(a: &[f64], b: &[f64], c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan, AdaptError> {
    match sinkhorn_standard(a, b, c, cfg) {
        Err(AdaptError::NumericalUnderflow(_)) => sinkhorn_log(a, b, c, cfg),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Each target sample becomes a plan-weighted mean of source samples.
    TargetToSource,
    /// Each source sample becomes a plan-weighted mean of target samples.
    SourceToTarget,
}

/// Mass below which a mapped sample is considered unmatched.
pub const MIN_MAPPED_MASS: f64 = 1e-15;

pub fn barycentric_map(
    plan: &TransportPlan,
    source: &[Waveform],
    target: &[Waveform],
    direction: Direction,
) -> Result<Vec<Waveform>, AdaptError> {
    if source.len() != plan.rows || target.len() != plan.cols {
        return Err(AdaptError::DimensionMismatch(format!(
            "plan {}x{} for {} sources and {} targets",
            plan.rows,
            plan.cols,
            source.len(),
            target.len()
        )));
    }
    let (mapped_count, from): (usize, &[Waveform]) = match direction {
        Direction::TargetToSource => (plan.cols, source),
        Direction::SourceToTarget => (plan.rows, target),
    };
    let weight = |k: usize, l: usize| match direction {
        Direction::TargetToSource => plan.get(l, k),
        Direction::SourceToTarget => plan.get(k, l),
    };
    let Some(first) = from.first() else {
        return Err(AdaptError::Degenerate("empty opposite set".into()));
    };
    let len = first.len();
    if let Some(w) = from.iter().find(|w| w.len() != len) {
        return Err(AdaptError::LengthMismatch(len, w.len()));
    }
    let idx: Vec<usize> = (0..mapped_count).collect();
    par::map_slice(&idx, |&k| {
        let mass: f64 = (0..from.len()).map(|l| weight(k, l)).sum();
        if mass < MIN_MAPPED_MASS {
            return Err(AdaptError::ZeroColumnMass { index: k });
        }
        let mut acc = vec![0.0f64; len];
        for (l, w) in from.iter().enumerate() {
            let p = weight(k, l);
            if p != 0.0 {
                for (a, s) in acc.iter_mut().zip(&w.samples) {
                    *a += p * *s as f64;
                }
            }
        }
        let samples = acc.iter().map(|v| (v / mass) as f32).collect();
        Ok(Waveform::new(first.grid, samples)?)
    })
    .into_iter()
    .collect()
}

/// Settings of the adaptation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub sinkhorn: SinkhornConfig,
    /// Largest set size handed to one transport problem.
    pub cap: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            cap: 5_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapted {
    pub predictions: Vec<[f64; 3]>,
    /// Target waveforms after mapping, in input order.
    pub mapped: Vec<Waveform>,
    /// Largest marginal violation over the transport problems solved.
    pub violation: f64,
}

/// Preprocess both sets, couple target to source by Sinkhorn, move every
/// target waveform to its barycenter in the source set, then predict.
///
/// A source sample larger than `cap` is subsampled with `seed`; a larger
/// target set is processed in consecutive blocks of `cap`. A plan that stops
/// short of `tol` is still used; its violation is reported.
pub fn adapt_and_predict(m: &Model, target: &[Waveform], source: &[Waveform], cfg: &AdaptConfig) -> Result<Adapted, AdaptError> {
    if target.is_empty() || source.is_empty() {
        return Err(AdaptError::Degenerate("empty target or source set".into()));
    }
    if cfg.cap == 0 {
        return Err(AdaptError::BadConfig("cap must be positive".into()));
    }
    let len = m.config.input_len;
    let prep = |ws: &[Waveform]| -> Result<Vec<Waveform>, AdaptError> {
        par::map_slice(ws, |w| nn::prepare(w, len)).into_iter().map(|r| r.map_err(AdaptError::from)).collect()
    };
    let mut src = prep(source)?;
    if src.len() > cfg.cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut keep = sample(&mut rng, src.len(), cfg.cap).into_vec();
        keep.sort_unstable();
        src = keep.into_iter().map(|i| src[i].clone()).collect();
    }
    let tgt = prep(target)?;
    let mut mapped = Vec::with_capacity(tgt.len());
    let mut worst = 0.0f64;
    for block in tgt.chunks(cfg.cap) {
        let c = cost_matrix(&src, block)?;
        let a = uniform_marginal(src.len());
        let b = uniform_marginal(block.len());
        let plan = match sinkhorn_transport(&a, &b, &c, &cfg.sinkhorn) {
            Ok(p) => p,
            Err(AdaptError::NotConverged { plan, .. }) => *plan,
            Err(e) => return Err(e),
        };
        worst = worst.max(plan.marginal_violation());
        mapped.extend(barycentric_map(&plan, &src, block, Direction::TargetToSource)?);
    }
    let predictions = nn::predict(m, &mapped)?;
    Ok(Adapted {
        predictions,
        mapped,
        violation: worst,
    })
}

/// [`adapt_and_predict`] on a labeled target set, with metrics.
pub fn adapt_and_evaluate(m: &Model, target: &Dataset, source: &[Waveform], cfg: &AdaptConfig) -> Result<(Adapted, Vec<Metrics>), AdaptError> {
    let out = adapt_and_predict(m, &target.waveforms(), source, cfg)?;
    let metrics = nn::evaluate_predictions(&out.predictions, &target.targets())?;
    Ok((out, metrics))
}

/// Learning-rate multiplier applied by [`fine_tune`].
pub const FINE_TUNE_LR_SCALE: f64 = 0.1;

/// Continues training a copy of `m` on a small labeled target set at
/// `FINE_TUNE_LR_SCALE` times `cfg.learning_rate`. The set is split 80:20
/// (seeded) into fitting and early-stopping parts; sets under five samples
/// serve as both. Output biases keep their trained values.
pub fn fine_tune(m: &Model, labeled: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport), AdaptError> {
    if labeled.is_empty() {
        return Err(NnError::EmptyDataset.into());
    }
    let mut tuned = m.clone();
    let cfg = TrainConfig {
        learning_rate: cfg.learning_rate * FINE_TUNE_LR_SCALE,
        init_head_bias: false,
        ..cfg.clone()
    };
    let (fit, stop) = if labeled.len() >= 5 {
        let (fit, stop, _) = split_dataset(labeled, (0.8, 0.2, 0.0), cfg.seed)?;
        (fit, stop)
    } else {
        (labeled.clone(), labeled.clone())
    };
    let report = nn::train(&mut tuned, &fit, &stop, &cfg)?;
    Ok((tuned, report))
}
