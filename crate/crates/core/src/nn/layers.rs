//! Layer kernels with analytic backward passes.
//!
//! Activations carry a leading batch axis: `[N, C, H, W]` for feature maps
//! and `[N, D]` for vectors. Convolutions and fully connected layers lower
//! to `dgemm`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    BatchNorm {
        ch: usize,
    },
    ReLU,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dropout {
        p: f64,
    },
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    GlobalAvgPool,
    Softmax,
}

impl LayerSpec {
    /// 3x3, pad 1, stride 1 convolution.
    pub fn conv3(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 3,
            pad: 1,
            stride: 1,
        }
    }

    /// 3x3 stride 2 max pooling without padding.
    pub fn pool3() -> Self {
        LayerSpec::MaxPool {
            kernel: 3,
            stride: 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: &str| Err(Error::Shape(format!("{} layer: {what}, input {input:?}", self.name())));
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                pad,
                stride,
            } => {
                let [c, h, w] = input else {
                    return bad("expected C x H x W");
                };
                if *c != in_ch {
                    return bad("channel mismatch");
                }
                if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return bad("kernel does not fit");
                }
                Ok(vec![
                    out_ch,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerSpec::BatchNorm { ch } => {
                if input.first() != Some(&ch) {
                    return bad("channel mismatch");
                }
                Ok(input.to_vec())
            }
            LayerSpec::ReLU | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::MaxPool { kernel, stride } => {
                let [c, h, w] = input else {
                    return bad("expected C x H x W");
                };
                if kernel == 0 || stride == 0 || *h < kernel || *w < kernel {
                    return bad("input smaller than pooling window");
                }
                Ok(vec![*c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::FullyConnected { inputs, outputs } => {
                if input != [inputs] {
                    return bad("expected a flat vector of matching length");
                }
                Ok(vec![outputs])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = input else {
                    return bad("expected C x H x W");
                };
                Ok(vec![*c])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return bad("expected a flat vector");
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![vec![out_ch, in_ch * kernel * kernel], vec![out_ch]],
            LayerSpec::BatchNorm { ch } => vec![vec![ch], vec![ch]],
            LayerSpec::FullyConnected { inputs, outputs } => {
                vec![vec![outputs, inputs], vec![outputs]]
            }
            _ => Vec::new(),
        }
    }

    /// Whether parameter `i` is a weight matrix subject to weight decay.
    pub fn is_decayed(&self, i: usize) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. }
        ) && i == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// BatchNorm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-layer values kept from the forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    /// Flat input index of each pooled maximum.
    Pool(Vec<usize>),
    Norm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    /// Dropout multipliers (0 or 1/(1-p)).
    Mask(Vec<f64>),
}

/// One layer: its spec plus parameters and running state.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
    pub running: Option<BnRunning>,
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate for output `o` at kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let cols = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.src(oy, ki, g.h) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.src(ox, kj, g.w).map_or(0.0, |ix| plane[iy * g.w + ix]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let cols = g.cols();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ki, g.h) else {
                        continue;
                    };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn batch_dims(x: &Tensor) -> Result<(usize, &[usize])> {
    match x.shape().split_first() {
        Some((&n, rest)) if n > 0 => Ok((n, rest)),
        _ => Err(Error::Shape(format!("expected a batch, got {:?}", x.shape()))),
    }
}

fn with_batch(n: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(per_sample);
    s
}

impl Layer {
    /// Layer with zero weights, unit BatchNorm scale and identity running stats.
    pub fn new(spec: LayerSpec) -> Self {
        let mut params: Vec<Tensor> = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let running = match spec {
            LayerSpec::BatchNorm { ch } => {
                params[0].data_mut().fill(1.0);
                Some(BnRunning {
                    mean: vec![0.0; ch],
                    var: vec![1.0; ch],
                })
            }
            _ => None,
        };
        Self {
            spec,
            params,
            running,
        }
    }

    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = match self.spec {
            LayerSpec::Conv { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerSpec::FullyConnected { inputs, .. } => inputs,
            _ => return,
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        for w in self.params[0].data_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        self.params[1].data_mut().fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Tensor, Aux)> {
        let (n, per) = batch_dims(x)?;
        let out_shape = with_batch(n, &self.spec.output_shape(per)?);
        match self.spec {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                pad,
                stride,
            } => {
                let g = ConvGeom {
                    c: in_ch,
                    h: per[1],
                    w: per[2],
                    k: kernel,
                    pad,
                    stride,
                    oh: out_shape[2],
                    ow: out_shape[3],
                };
                let (rows, cols) = (g.rows(), g.cols());
                let mut col = vec![0.0; rows * cols];
                let mut y = Tensor::zeros(&out_shape);
                let w = self.params[0].data();
                let b = self.params[1].data();
                let in_per = x.len() / n;
                for s in 0..n {
                    im2col(&x.data()[s * in_per..(s + 1) * in_per], &g, &mut col);
                    let ys = &mut y.data_mut()[s * out_ch * cols..(s + 1) * out_ch * cols];
                    for (o, chunk) in ys.chunks_mut(cols).enumerate() {
                        chunk.fill(b[o]);
                    }
                    gemm(out_ch, rows, cols, w, (rows, 1), &col, (cols, 1), 1.0, ys);
                }
                Ok((y, Aux::None))
            }
            LayerSpec::BatchNorm { ch } => {
                let spatial = per[1..].iter().product::<usize>();
                let gamma = self.params[0].data();
                let beta = self.params[1].data();
                let running = self.running.as_mut().expect("batchnorm has running stats");
                let mut y = Tensor::zeros(&out_shape);
                let mut xhat = vec![0.0; x.len()];
                let mut inv_std = vec![0.0; ch];
                let idx = |s: usize, c: usize, p: usize| (s * ch + c) * spatial + p;
                let batch_stats = mode == Mode::Train;
                let count = (n * spatial) as f64;
                for c in 0..ch {
                    let (mean, var) = if batch_stats {
                        let mut sum = 0.0;
                        for s in 0..n {
                            sum += x.data()[idx(s, c, 0)..idx(s, c, 0) + spatial].iter().sum::<f64>();
                        }
                        let mean = sum / count;
                        let mut sq = 0.0;
                        for s in 0..n {
                            sq += x.data()[idx(s, c, 0)..idx(s, c, 0) + spatial]
                                .iter()
                                .map(|v| (v - mean) * (v - mean))
                                .sum::<f64>();
                        }
                        let var = sq / count;
                        let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                        running.mean[c] = (1.0 - BN_MOMENTUM) * running.mean[c] + BN_MOMENTUM * mean;
                        running.var[c] = (1.0 - BN_MOMENTUM) * running.var[c] + BN_MOMENTUM * unbiased;
                        (mean, var)
                    } else {
                        (running.mean[c], running.var[c])
                    };
                    let is = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[c] = is;
                    for s in 0..n {
                        for p in 0..spatial {
                            let i = idx(s, c, p);
                            let h = (x.data()[i] - mean) * is;
                            xhat[i] = h;
                            y.data_mut()[i] = gamma[c] * h + beta[c];
                        }
                    }
                }
                Ok((
                    y,
                    Aux::Norm {
                        xhat,
                        inv_std,
                        batch_stats,
                    },
                ))
            }
            LayerSpec::ReLU => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Ok((Tensor::new(out_shape, data)?, Aux::None))
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (c, h, w) = (per[0], per[1], per[2]);
                let (oh, ow) = (out_shape[2], out_shape[3]);
                let mut y = Tensor::zeros(&out_shape);
                let mut arg = vec![0usize; y.len()];
                let mut o = 0;
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + oy * stride * w + ox * stride;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                    if x.data()[i] > x.data()[best] {
                                        best = i;
                                    }
                                }
                            }
                            y.data_mut()[o] = x.data()[best];
                            arg[o] = best;
                            o += 1;
                        }
                    }
                }
                Ok((y, Aux::Pool(arg)))
            }
            LayerSpec::Flatten => Ok((x.clone().reshape(&out_shape)?, Aux::None)),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Parameter(format!("dropout p must be in [0,1), got {p}")));
                }
                if mode == Mode::Eval || p == 0.0 {
                    return Ok((x.clone(), Aux::None));
                }
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                Ok((Tensor::new(out_shape, data)?, Aux::Mask(mask)))
            }
            LayerSpec::FullyConnected { inputs, outputs } => {
                let mut y = Tensor::zeros(&out_shape);
                for row in y.data_mut().chunks_mut(outputs) {
                    row.copy_from_slice(self.params[1].data());
                }
                gemm(
                    n,
                    inputs,
                    outputs,
                    x.data(),
                    (inputs, 1),
                    self.params[0].data(),
                    (1, inputs),
                    1.0,
                    y.data_mut(),
                );
                Ok((y, Aux::None))
            }
            LayerSpec::GlobalAvgPool => {
                let spatial = per[1] * per[2];
                let data = x
                    .data()
                    .chunks(spatial)
                    .map(|plane| plane.iter().sum::<f64>() / spatial as f64)
                    .collect();
                Ok((Tensor::new(out_shape, data)?, Aux::None))
            }
            LayerSpec::Softmax => {
                let d = per[0];
                let mut y = x.clone();
                for row in y.data_mut().chunks_mut(d) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= total);
                }
                Ok((y, Aux::None))
            }
        }
    }

    /// Gradient with respect to the input and, if `param_grads`, to every
    /// parameter. `x`, `y` and `aux` come from the matching forward call.
    pub fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        aux: &Aux,
        dy: &Tensor,
        param_grads: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        if dy.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "{} backward: gradient {:?} vs output {:?}",
                self.spec.name(),
                dy.shape(),
                y.shape()
            )));
        }
        let (n, per) = batch_dims(x)?;
        let mut dx = Tensor::zeros(x.shape());
        let mut grads = Vec::new();
        match (self.spec, aux) {
            (
                LayerSpec::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    pad,
                    stride,
                },
                _,
            ) => {
                let g = ConvGeom {
                    c: in_ch,
                    h: per[1],
                    w: per[2],
                    k: kernel,
                    pad,
                    stride,
                    oh: y.shape()[2],
                    ow: y.shape()[3],
                };
                let (rows, cols) = (g.rows(), g.cols());
                let w = self.params[0].data();
                let mut dw = Tensor::zeros(self.params[0].shape());
                let mut db = Tensor::zeros(self.params[1].shape());
                let mut col = vec![0.0; rows * cols];
                let in_per = x.len() / n;
                for s in 0..n {
                    let dys = &dy.data()[s * out_ch * cols..(s + 1) * out_ch * cols];
                    if param_grads {
                        im2col(&x.data()[s * in_per..(s + 1) * in_per], &g, &mut col);
                        gemm(out_ch, cols, rows, dys, (cols, 1), &col, (1, cols), 1.0, dw.data_mut());
                        for (o, chunk) in dys.chunks(cols).enumerate() {
                            db.data_mut()[o] += chunk.iter().sum::<f64>();
                        }
                    }
                    gemm(rows, out_ch, cols, w, (1, rows), dys, (cols, 1), 0.0, &mut col);
                    col2im(&col, &g, &mut dx.data_mut()[s * in_per..(s + 1) * in_per]);
                }
                if param_grads {
                    grads = vec![dw, db];
                }
            }
            (
                LayerSpec::BatchNorm { ch },
                Aux::Norm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let spatial = per[1..].iter().product::<usize>();
                let gamma = self.params[0].data();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                let count = (n * spatial) as f64;
                let idx = |s: usize, c: usize, p: usize| (s * ch + c) * spatial + p;
                for c in 0..ch {
                    let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                    for s in 0..n {
                        for p in 0..spatial {
                            let i = idx(s, c, p);
                            sum_dy += dy.data()[i];
                            sum_dy_xhat += dy.data()[i] * xhat[i];
                        }
                    }
                    dgamma[c] = sum_dy_xhat;
                    dbeta[c] = sum_dy;
                    let scale = gamma[c] * inv_std[c];
                    for s in 0..n {
                        for p in 0..spatial {
                            let i = idx(s, c, p);
                            dx.data_mut()[i] = if *batch_stats {
                                scale / count * (count * dy.data()[i] - sum_dy - xhat[i] * sum_dy_xhat)
                            } else {
                                scale * dy.data()[i]
                            };
                        }
                    }
                }
                if param_grads {
                    grads = vec![Tensor::new(vec![ch], dgamma)?, Tensor::new(vec![ch], dbeta)?];
                }
            }
            (LayerSpec::ReLU, _) => {
                for ((d, &xv), &g) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                    *d = if xv > 0.0 { g } else { 0.0 };
                }
            }
            (LayerSpec::MaxPool { .. }, Aux::Pool(arg)) => {
                for (&i, &g) in arg.iter().zip(dy.data()) {
                    dx.data_mut()[i] += g;
                }
            }
            (LayerSpec::Flatten, _) => {
                dx.data_mut().copy_from_slice(dy.data());
            }
            (LayerSpec::Dropout { .. }, aux) => match aux {
                Aux::Mask(mask) => {
                    for ((d, &g), &m) in dx.data_mut().iter_mut().zip(dy.data()).zip(mask) {
                        *d = g * m;
                    }
                }
                _ => dx.data_mut().copy_from_slice(dy.data()),
            },
            (LayerSpec::FullyConnected { inputs, outputs }, _) => {
                gemm(
                    n,
                    outputs,
                    inputs,
                    dy.data(),
                    (outputs, 1),
                    self.params[0].data(),
                    (inputs, 1),
                    0.0,
                    dx.data_mut(),
                );
                if param_grads {
                    let mut dw = Tensor::zeros(self.params[0].shape());
                    gemm(outputs, n, inputs, dy.data(), (1, outputs), x.data(), (inputs, 1), 0.0, dw.data_mut());
                    let mut db = Tensor::zeros(self.params[1].shape());
                    for row in dy.data().chunks(outputs) {
                        for (b, g) in db.data_mut().iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                    grads = vec![dw, db];
                }
            }
            (LayerSpec::GlobalAvgPool, _) => {
                let spatial = per[1] * per[2];
                for (plane, &g) in dx.data_mut().chunks_mut(spatial).zip(dy.data()) {
                    plane.fill(g / spatial as f64);
                }
            }
            (LayerSpec::Softmax, _) => {
                let d = per[0];
                for ((dxr, yr), dyr) in dx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(y.data().chunks(d))
                    .zip(dy.data().chunks(d))
                {
                    let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                    for ((o, &p), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
                        *o = p * (g - dot);
                    }
                }
            }
            (spec, _) => {
                return Err(Error::State(format!(
                    "{} backward: forward state missing",
                    spec.name()
                )))
            }
        }
        if param_grads && grads.is_empty() {
            grads = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        Ok((dx, grads))
    }
}
