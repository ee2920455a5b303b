use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Tensor};

/// Forward-pass behaviour of batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Stride-1 cross-correlation with zero "same" padding.
/// `weight` is indexed `[k][in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-channel normalization over every axis but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

/// Affine map; `weight` is indexed `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    BatchNorm(BatchNorm),
    Relu,
    /// Window 2, stride 2 along the length axis; an odd last sample is dropped.
    MaxPool,
    Flatten,
    Dense(Dense),
}

/// Intermediates a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Shape(Vec<usize>),
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Conv1d {
    /// He-uniform weights, zero bias.
    pub fn new(in_channels: usize, filters: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_channels * kernel) as f64).sqrt();
        Self {
            in_channels,
            filters,
            kernel,
            weight: uniform(rng, kernel * in_channels * filters, limit),
            bias: vec![0.0; filters],
        }
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        expect_rank3(x, self.in_channels)?;
        let (b, len, co) = (x.shape[0], x.shape[1], self.filters);
        let mut out = vec![0.0; b * len * co];
        match co {
            1 => self.forward_fixed::<1>(x, &mut out),
            4 => self.forward_fixed::<4>(x, &mut out),
            8 => self.forward_fixed::<8>(x, &mut out),
            16 => self.forward_fixed::<16>(x, &mut out),
            32 => self.forward_fixed::<32>(x, &mut out),
            _ => self.forward_any(x, &mut out),
        }
        Tensor::new(vec![b, len, co], out)
    }

    /// Input rows feeding output position `l`, as `(tap, source row)`.
    fn taps(&self, l: usize, len: usize) -> impl Iterator<Item = (usize, usize)> {
        let pl = self.pad_left();
        (0..self.kernel).filter_map(move |k| {
            let src = (l + k).checked_sub(pl)?;
            (src < len).then_some((k, src))
        })
    }

    fn forward_any(&self, x: &Tensor, out: &mut [f64]) {
        let (b, len, ci, co) = (x.shape[0], x.shape[1], self.in_channels, self.filters);
        for s in 0..b {
            let xs = &x.data[s * len * ci..(s + 1) * len * ci];
            let os = &mut out[s * len * co..(s + 1) * len * co];
            for l in 0..len {
                let orow = &mut os[l * co..(l + 1) * co];
                orow.copy_from_slice(&self.bias);
                for (k, src) in self.taps(l, len) {
                    let xrow = &xs[src * ci..(src + 1) * ci];
                    let wk = &self.weight[k * ci * co..(k + 1) * ci * co];
                    for (c, &xv) in xrow.iter().enumerate() {
                        let wrow = &wk[c * co..(c + 1) * co];
                        for (o, w) in orow.iter_mut().zip(wrow) {
                            *o += xv * w;
                        }
                    }
                }
            }
        }
    }

    /// [`Self::forward_any`] with the filter count fixed at compile time;
    /// same arithmetic in the same order.
    fn forward_fixed<const CO: usize>(&self, x: &Tensor, out: &mut [f64]) {
        let (b, len, ci) = (x.shape[0], x.shape[1], self.in_channels);
        let bias: [f64; CO] = self.bias[..].try_into().expect("filter count");
        for s in 0..b {
            let xs = &x.data[s * len * ci..(s + 1) * len * ci];
            let os = &mut out[s * len * CO..(s + 1) * len * CO];
            for l in 0..len {
                let mut acc = bias;
                for (k, src) in self.taps(l, len) {
                    let xrow = &xs[src * ci..(src + 1) * ci];
                    let wk = &self.weight[k * ci * CO..(k + 1) * ci * CO];
                    for (&xv, w) in xrow.iter().zip(wk.chunks_exact(CO)) {
                        let w: &[f64; CO] = w.try_into().expect("filter count");
                        for o in 0..CO {
                            acc[o] += xv * w[o];
                        }
                    }
                }
                os[l * CO..(l + 1) * CO].copy_from_slice(&acc);
            }
        }
    }

    fn backward(&self, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        let mut dx = vec![0.0; x.data.len()];
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.filters];
        let bufs = (&mut dx[..], &mut dw[..], &mut db[..]);
        match self.filters {
            1 => self.backward_fixed::<1>(x, g, bufs),
            4 => self.backward_fixed::<4>(x, g, bufs),
            8 => self.backward_fixed::<8>(x, g, bufs),
            16 => self.backward_fixed::<16>(x, g, bufs),
            32 => self.backward_fixed::<32>(x, g, bufs),
            _ => self.backward_any(x, g, bufs),
        }
        (Tensor { shape: x.shape.clone(), data: dx }, vec![dw, db])
    }

    fn backward_any(&self, x: &Tensor, g: &Tensor, (dx, dw, db): (&mut [f64], &mut [f64], &mut [f64])) {
        let (b, len, ci, co) = (x.shape[0], x.shape[1], self.in_channels, self.filters);
        for s in 0..b {
            let xs = &x.data[s * len * ci..(s + 1) * len * ci];
            let gs = &g.data[s * len * co..(s + 1) * len * co];
            let dxs = &mut dx[s * len * ci..(s + 1) * len * ci];
            for l in 0..len {
                let grow = &gs[l * co..(l + 1) * co];
                for (d, gv) in db.iter_mut().zip(grow) {
                    *d += gv;
                }
                for (k, src) in self.taps(l, len) {
                    let wk = &self.weight[k * ci * co..(k + 1) * ci * co];
                    let dwk = &mut dw[k * ci * co..(k + 1) * ci * co];
                    for c in 0..ci {
                        let wrow = &wk[c * co..(c + 1) * co];
                        let mut acc = 0.0;
                        for (w, gv) in wrow.iter().zip(grow) {
                            acc += w * gv;
                        }
                        dxs[src * ci + c] += acc;
                        let xv = xs[src * ci + c];
                        for (d, gv) in dwk[c * co..(c + 1) * co].iter_mut().zip(grow) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    }

    fn backward_fixed<const CO: usize>(&self, x: &Tensor, g: &Tensor, (dx, dw, db): (&mut [f64], &mut [f64], &mut [f64])) {
        let (b, len, ci) = (x.shape[0], x.shape[1], self.in_channels);
        let mut dbias = [0.0; CO];
        for s in 0..b {
            let xs = &x.data[s * len * ci..(s + 1) * len * ci];
            let gs = &g.data[s * len * CO..(s + 1) * len * CO];
            let dxs = &mut dx[s * len * ci..(s + 1) * len * ci];
            for l in 0..len {
                let grow: &[f64; CO] = gs[l * CO..(l + 1) * CO].try_into().expect("filter count");
                for o in 0..CO {
                    dbias[o] += grow[o];
                }
                for (k, src) in self.taps(l, len) {
                    let wk = &self.weight[k * ci * CO..(k + 1) * ci * CO];
                    let dwk = &mut dw[k * ci * CO..(k + 1) * ci * CO];
                    for (c, (w, d)) in wk.chunks_exact(CO).zip(dwk.chunks_exact_mut(CO)).enumerate() {
                        let w: &[f64; CO] = w.try_into().expect("filter count");
                        let mut acc = 0.0;
                        for o in 0..CO {
                            acc += w[o] * grow[o];
                        }
                        dxs[src * ci + c] += acc;
                        let xv = xs[src * ci + c];
                        for o in 0..CO {
                            d[o] += xv * grow[o];
                        }
                    }
                }
            }
        }
        db.copy_from_slice(&dbias);
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    fn check(&self, x: &Tensor) -> Result<(), NnError> {
        let c = self.channels;
        if x.shape.len() < 2 || *x.shape.last().unwrap() != c {
            return Err(NnError::ShapeMismatch(format!("batch norm over {c} channels got {:?}", x.shape)));
        }
        Ok(())
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache), NnError> {
        self.check(x)?;
        let c = self.channels;
        let m = x.data.len() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for row in x.data.chunks_exact(c) {
                    for (a, v) in mean.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                mean.iter_mut().for_each(|a| *a /= m as f64);
                let mut var = vec![0.0; c];
                for row in x.data.chunks_exact(c) {
                    for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        *a += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|a| *a /= m as f64);
                for j in 0..c {
                    self.running_mean[j] = self.momentum * self.running_mean[j] + (1.0 - self.momentum) * mean[j];
                    self.running_var[j] = self.momentum * self.running_var[j] + (1.0 - self.momentum) * var[j];
                }
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        self.normalize(x, &mean, &var)
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> Result<(Tensor, Cache), NnError> {
        self.check(x)?;
        let c = self.channels;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data.clone();
        let mut out = x.data.clone();
        for (hrow, orow) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
            for j in 0..c {
                let h = (hrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        let out = Tensor::new(x.shape.clone(), out)?;
        Ok((out, Cache::BatchNorm { xhat, inv_std }))
    }

    fn backward(&self, g: &Tensor, xhat: &[f64], inv_std: &[f64], mode: Mode) -> (Tensor, Vec<Vec<f64>>) {
        let c = self.channels;
        let m = (g.data.len() / c) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (grow, hrow) in g.data.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                dgamma[j] += grow[j] * hrow[j];
                dbeta[j] += grow[j];
            }
        }
        let mut dx = vec![0.0; g.data.len()];
        for ((drow, grow), hrow) in dx.chunks_exact_mut(c).zip(g.data.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                let scale = self.gamma[j] * inv_std[j];
                drow[j] = match mode {
                    Mode::Train => scale * (grow[j] - dbeta[j] / m - hrow[j] * dgamma[j] / m),
                    Mode::Infer => scale * grow[j],
                };
            }
        }
        (Tensor { shape: g.shape.clone(), data: dx }, vec![dgamma, dbeta])
    }
}

impl Dense {
    /// Uniform weights with limit `sqrt(gain / inputs)`, zero bias.
    pub fn new(inputs: usize, units: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let limit = (gain / inputs as f64).sqrt();
        Self {
            inputs,
            units,
            weight: uniform(rng, inputs * units, limit),
            bias: vec![0.0; units],
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        if x.shape.len() != 2 || x.shape[1] != self.inputs {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects (b, {}), got {:?}",
                self.inputs, x.shape
            )));
        }
        let (b, n, u) = (x.shape[0], self.inputs, self.units);
        let mut out = Vec::with_capacity(b * u);
        for s in 0..b {
            let mut orow = self.bias.clone();
            for (i, &xv) in x.row(s).iter().enumerate() {
                for (o, w) in orow.iter_mut().zip(&self.weight[i * u..(i + 1) * u]) {
                    *o += xv * w;
                }
            }
            debug_assert_eq!(x.row(s).len(), n);
            out.extend_from_slice(&orow);
        }
        Tensor::new(vec![b, u], out)
    }

    fn backward(&self, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        let (b, n, u) = (x.shape[0], self.inputs, self.units);
        let mut dx = vec![0.0; b * n];
        let mut dw = vec![0.0; n * u];
        let mut db = vec![0.0; u];
        for s in 0..b {
            let grow = g.row(s);
            for (d, gv) in db.iter_mut().zip(grow) {
                *d += gv;
            }
            for (i, &xv) in x.row(s).iter().enumerate() {
                let wrow = &self.weight[i * u..(i + 1) * u];
                dx[s * n + i] = wrow.iter().zip(grow).map(|(w, gv)| w * gv).sum();
                for (d, gv) in dw[i * u..(i + 1) * u].iter_mut().zip(grow) {
                    *d += xv * gv;
                }
            }
        }
        (Tensor { shape: x.shape.clone(), data: dx }, vec![dw, db])
    }
}

fn expect_rank3(x: &Tensor, channels: usize) -> Result<(), NnError> {
    if x.shape.len() != 3 || x.shape[2] != channels {
        return Err(NnError::ShapeMismatch(format!(
            "expected (b, length, {channels}), got {:?}",
            x.shape
        )));
    }
    Ok(())
}

impl Layer {
    /// Forward pass. In train mode batch norm also updates its running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache), NnError> {
        match (self, mode) {
            (Layer::BatchNorm(bn), Mode::Train) => bn.forward(x, mode),
            (layer, _) => layer.forward_ref(x),
        }
    }

    /// Infer-mode forward pass without a cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Conv1d(c) => c.forward(x),
            Layer::Dense(d) => d.forward(x),
            _ => self.forward_ref(x).map(|(y, _)| y),
        }
    }

    fn forward_ref(&self, x: &Tensor) -> Result<(Tensor, Cache), NnError> {
        match self {
            Layer::Conv1d(c) => Ok((c.forward(x)?, Cache::Input(x.clone()))),
            Layer::BatchNorm(bn) => bn.normalize(x, &bn.running_mean, &bn.running_var),
            Layer::Dense(d) => Ok((d.forward(x)?, Cache::Input(x.clone()))),
            Layer::Relu => {
                let data = x.data.iter().map(|v| v.max(0.0)).collect();
                Ok((Tensor::new(x.shape.clone(), data)?, Cache::Input(x.clone())))
            }
            Layer::MaxPool => {
                if x.shape.len() != 3 || x.shape[1] < 2 {
                    return Err(NnError::ShapeMismatch(format!("max pool needs (b, length >= 2, c), got {:?}", x.shape)));
                }
                let (b, len, c) = (x.shape[0], x.shape[1], x.shape[2]);
                let half = len / 2;
                let mut out = Vec::with_capacity(b * half * c);
                let mut argmax = Vec::with_capacity(b * half * c);
                for s in 0..b {
                    for l in 0..half {
                        for j in 0..c {
                            let i0 = (s * len + 2 * l) * c + j;
                            let i1 = i0 + c;
                            let pick = if x.data[i1] > x.data[i0] { i1 } else { i0 };
                            out.push(x.data[pick]);
                            argmax.push(pick);
                        }
                    }
                }
                let cache = Cache::MaxPool {
                    argmax,
                    in_shape: x.shape.clone(),
                };
                Ok((Tensor::new(vec![b, half, c], out)?, cache))
            }
            Layer::Flatten => {
                let b = x.batch();
                let out = Tensor::new(vec![b, x.row_len()], x.data.clone())?;
                Ok((out, Cache::Shape(x.shape.clone())))
            }
        }
    }

    /// Gradient with respect to the input and to each parameter slice
    /// (same order as [`Layer::params`]) given the upstream gradient.
    pub fn backward(&self, g: &Tensor, cache: Option<&Cache>, mode: Mode) -> Result<(Tensor, Vec<Vec<f64>>), NnError> {
        let cache = cache.ok_or(NnError::MissingCache)?;
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Input(x)) => {
                check_grad_shape(g, &[x.shape[0], x.shape[1], c.filters])?;
                Ok(c.backward(x, g))
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                check_grad_shape(g, &[x.shape[0], d.units])?;
                Ok(d.backward(x, g))
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => {
                if g.data.len() != xhat.len() {
                    return Err(NnError::ShapeMismatch("batch norm gradient size".into()));
                }
                Ok(bn.backward(g, xhat, inv_std, mode))
            }
            (Layer::Relu, Cache::Input(x)) => {
                check_grad_shape(g, &x.shape)?;
                let data = x.data.iter().zip(&g.data).map(|(v, d)| if *v > 0.0 { *d } else { 0.0 }).collect();
                Ok((Tensor { shape: x.shape.clone(), data }, vec![]))
            }
            (Layer::MaxPool, Cache::MaxPool { argmax, in_shape }) => {
                if g.data.len() != argmax.len() {
                    return Err(NnError::ShapeMismatch("max pool gradient size".into()));
                }
                let mut dx = Tensor::zeros(in_shape.clone());
                for (&i, d) in argmax.iter().zip(&g.data) {
                    dx.data[i] += d;
                }
                Ok((dx, vec![]))
            }
            (Layer::Flatten, Cache::Shape(shape)) => {
                Ok((Tensor::new(shape.clone(), g.data.clone())?, vec![]))
            }
            _ => Err(NnError::MissingCache),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => vec![],
        }
    }

    /// `(trainable, non_trainable)` parameter counts.
    pub fn param_count(&self) -> (usize, usize) {
        let trainable = self.params().iter().map(|p| p.len()).sum();
        let frozen = match self {
            Layer::BatchNorm(bn) => 2 * bn.channels,
            _ => 0,
        };
        (trainable, frozen)
    }
}

fn check_grad_shape(g: &Tensor, shape: &[usize]) -> Result<(), NnError> {
    if g.shape != shape {
        return Err(NnError::ShapeMismatch(format!("gradient {:?}, expected {shape:?}", g.shape)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn fixed_width_conv_kernels_match_generic_bitwise() {
        let mut r = rng();
        for (ci, co, k) in [(1, 4, 3), (3, 8, 5), (8, 16, 2), (2, 32, 7), (5, 1, 1)] {
            let mut conv = Conv1d::new(ci, co, k, &mut r);
            conv.bias = uniform(&mut r, co, 1.0);
            let x = Tensor::new(vec![2, 9, ci], uniform(&mut r, 18 * ci, 1.0)).unwrap();
            let g = Tensor::new(vec![2, 9, co], uniform(&mut r, 18 * co, 1.0)).unwrap();
            let fast = conv.forward(&x).unwrap();
            let mut slow = vec![0.0; fast.data.len()];
            conv.forward_any(&x, &mut slow);
            assert_eq!(fast.data, slow);
            let (dx, grads) = conv.backward(&x, &g);
            let (mut dx2, mut dw2, mut db2) = (vec![0.0; x.data.len()], vec![0.0; conv.weight.len()], vec![0.0; co]);
            conv.backward_any(&x, &g, (&mut dx2, &mut dw2, &mut db2));
            assert_eq!(dx.data, dx2);
            assert_eq!(grads, vec![dw2, db2]);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, _) = Layer::Relu.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        for kernel in [1, 3, 5, 7] {
            let mut c = Conv1d::new(1, 1, kernel, &mut rng());
            c.weight.iter_mut().for_each(|w| *w = 0.0);
            c.weight[(kernel - 1) / 2] = 1.0;
            let x = Tensor::new(vec![2, 9, 1], (0..18).map(|v| v as f64 - 4.5).collect()).unwrap();
            let (y, _) = Layer::Conv1d(c).forward(&x, Mode::Infer).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let c = Conv1d::new(2, 3, 3, &mut rng());
        let x = Tensor::new(vec![1, 4, 2], (0..8).map(|v| (v as f64).sin()).collect()).unwrap();
        let (y, _) = Layer::Conv1d(c.clone()).forward(&x, Mode::Infer).unwrap();
        for l in 0..4 {
            for o in 0..3 {
                let mut s = c.bias[o];
                for k in 0..3 {
                    let src = l as i64 + k as i64 - 1;
                    if (0..4).contains(&src) {
                        for i in 0..2 {
                            s += x.data[src as usize * 2 + i] * c.weight[(k * 2 + i) * 3 + o];
                        }
                    }
                }
                assert!((y.data[l * 3 + o] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm::new(3);
        let mut r = rng();
        let x = Tensor::new(vec![4, 5, 3], (0..60).map(|_| r.random_range(-3.0..7.0)).collect()).unwrap();
        let mut layer = Layer::BatchNorm(bn.clone());
        let (y, _) = layer.forward(&x, Mode::Train).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = y.data.iter().skip(j).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / 20.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-9);
            // eps keeps the variance a hair under one
            assert!((var * (1.0 + bn.eps / var.max(1e-12)) - 1.0).abs() < 1e-3);
        }
        // running stats moved towards the batch stats
        if let Layer::BatchNorm(after) = layer {
            assert!(after.running_mean != bn.running_mean);
        }
        bn.gamma = vec![2.0; 3];
        let (a, _) = Layer::BatchNorm(bn.clone()).forward(&x, Mode::Infer).unwrap();
        assert!((a.data[0] - (2.0 * x.data[0] / (1.0 + bn.eps).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_standardizes_exactly_with_zero_eps() {
        let mut bn = BatchNorm::new(2);
        bn.eps = 0.0;
        let mut r = rng();
        let x = Tensor::new(vec![6, 2], (0..12).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap();
        let (y, _) = Layer::BatchNorm(bn).forward(&x, Mode::Train).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = y.data.iter().skip(j).step_by(2).copied().collect();
            let mean = col.iter().sum::<f64>() / 6.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn infer_batchnorm_is_affine() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![0.3, -1.0];
        bn.running_var = vec![2.0, 0.5];
        bn.gamma = vec![1.5, -0.5];
        bn.beta = vec![0.1, 0.2];
        let mut layer = Layer::BatchNorm(bn);
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let y = Tensor::new(vec![1, 2], vec![-3.0, 0.5]).unwrap();
        let (a, b) = (0.7, 0.3);
        let mix = Tensor::new(vec![1, 2], vec![a * 1.0 + b * -3.0, a * 2.0 + b * 0.5]).unwrap();
        let f = |l: &mut Layer, t: &Tensor| l.forward(t, Mode::Infer).unwrap().0.data;
        let (fx, fy, fm) = (f(&mut layer, &x), f(&mut layer, &y), f(&mut layer, &mix));
        for j in 0..2 {
            assert!((fm[j] - (a * fx[j] + b * fy[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let mut l = Layer::MaxPool;
        let (y, cache) = l.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data, vec![3.0, 2.0]);
        let g = Tensor::new(vec![1, 2, 1], vec![5.0, 7.0]).unwrap();
        let (dx, _) = l.backward(&g, Some(&cache), Mode::Train).unwrap();
        assert_eq!(dx.data, vec![0.0, 5.0, 7.0, 0.0]);
        assert_eq!(dx.data.iter().sum::<f64>(), g.data.iter().sum::<f64>());
    }

    #[test]
    fn zero_upstream_gives_zero_dense_grads() {
        let d = Dense::new(4, 3, 6.0, &mut rng());
        let mut l = Layer::Dense(d);
        let x = Tensor::new(vec![2, 4], vec![1.0; 8]).unwrap();
        let (_, cache) = l.forward(&x, Mode::Train).unwrap();
        let (dx, grads) = l.backward(&Tensor::zeros(vec![2, 3]), Some(&cache), Mode::Train).unwrap();
        assert!(dx.data.iter().all(|v| *v == 0.0));
        assert!(grads.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_cache_and_bad_shapes() {
        let l = Layer::Relu;
        assert_eq!(
            l.backward(&Tensor::zeros(vec![1, 2]), None, Mode::Train).unwrap_err(),
            NnError::MissingCache
        );
        let mut c = Layer::Conv1d(Conv1d::new(2, 2, 3, &mut rng()));
        assert!(matches!(
            c.forward(&Tensor::zeros(vec![1, 5, 1]), Mode::Infer),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn param_counts() {
        let d = Layer::Dense(Dense::new(10, 1, 6.0, &mut rng()));
        assert_eq!(d.param_count(), (11, 0));
        assert_eq!(Layer::BatchNorm(BatchNorm::new(8)).param_count(), (16, 16));
        assert_eq!(Layer::Conv1d(Conv1d::new(3, 5, 7, &mut rng())).param_count(), (3 * 5 * 7 + 5, 0));
    }
}
