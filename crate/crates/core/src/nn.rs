//! Dense neural-network layers with explicit forward and backward passes.
//!
//! Everything is f64 and NHWC. Each layer caches what its backward pass
//! needs when `train` is true; a forward/backward call pair must not be
//! interleaved with another forward on the same layer. Parameter gradients
//! accumulate into [`Param::grad`] so one backward sweep per objective term
//! can be summed before an optimizer step.

use ndarray::{s, Array1, Array2, Array4, ArrayD, Ix2, Ix4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

/// A trainable tensor with an accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: Option<ArrayD<f64>>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        Self { value, grad: None }
    }

    pub fn grad_mut(&mut self) -> &mut ArrayD<f64> {
        if self.grad.is_none() {
            self.grad = Some(ArrayD::zeros(self.value.raw_dim()));
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Visitor over named trainable parameters.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;
/// Visitor over named state tensors (parameters plus running buffers);
/// this is the checkpointing surface.
pub type TensorVisitor<'a> = dyn FnMut(&str, &mut ArrayD<f64>) + 'a;

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}/{name}")
}

/// He-normal initialization for conv weights.
fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    ArrayD::from_shape_fn(shape, |_| dist.sample(rng))
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2D convolution, no bias (a normalization layer always follows).
/// Weight shape `(kh, kw, cin, cout)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Array4<f64>>, // padded input
}

fn pad_nhwc(x: &Array4<f64>, p: usize) -> Array4<f64> {
    if p == 0 {
        return x.clone();
    }
    let (b, h, w, c) = x.dim();
    let mut out = Array4::zeros((b, h + 2 * p, w + 2 * p, c));
    out.slice_mut(s![.., p..p + h, p..p + w, ..]).assign(x);
    out
}

fn im2col(
    x_pad: &Array4<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (b, hp, wp, c) = x_pad.dim();
    let xs = x_pad.as_slice().expect("x_pad is standard layout");
    let row_len = kh * kw * c;
    let mut out = Vec::with_capacity(b * oh * ow * row_len);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kh {
                    let iy = oy * stride + ky;
                    let start = ((bi * hp + iy) * wp + ox * stride) * c;
                    out.extend_from_slice(&xs[start..start + kw * c]);
                }
            }
        }
    }
    Array2::from_shape_vec((b * oh * ow, row_len), out).unwrap()
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    grad_patches: &Array2<f64>,
    b: usize,
    hp: usize,
    wp: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let mut gx = Array4::zeros((b, hp, wp, c));
    let gxs = gx.as_slice_mut().unwrap();
    let gp = grad_patches
        .as_slice()
        .expect("grad_patches standard layout");
    let row_len = kh * kw * c;
    let mut r = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &gp[r * row_len..(r + 1) * row_len];
                for ky in 0..kh {
                    let iy = oy * stride + ky;
                    let dst = ((bi * hp + iy) * wp + ox * stride) * c;
                    let src = ky * kw * c;
                    for i in 0..kw * c {
                        gxs[dst + i] += row[src + i];
                    }
                }
                r += 1;
            }
        }
    }
    gx
}

impl Conv2d {
    pub fn new(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Param::new(he_normal(rng, &[kh, kw, cin, cout], kh * kw * cin));
        Self {
            weight,
            kh,
            kw,
            cin,
            cout,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kh) / self.stride + 1,
            (w + 2 * self.padding - self.kw) / self.stride + 1,
        )
    }

    fn weight_mat(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .into_shape_with_order((self.kh * self.kw * self.cin, self.cout))
            .unwrap()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, h, w, cin) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let x_pad = pad_nhwc(x, self.padding);
        let patches = im2col(&x_pad, self.kh, self.kw, self.stride, oh, ow);
        let y = patches.dot(&self.weight_mat());
        if train {
            self.cache = Some(x_pad);
        }
        y.into_shape_with_order((b, oh, ow, self.cout)).unwrap()
    }

    pub fn backward(&mut self, gy: &Array4<f64>, accumulate: bool) -> Array4<f64> {
        let x_pad = self.cache.take().expect("conv backward without forward");
        let (b, hp, wp, _) = x_pad.dim();
        let (_, oh, ow, cout) = gy.dim();
        let patches = im2col(&x_pad, self.kh, self.kw, self.stride, oh, ow);
        let gy_mat = gy
            .view()
            .into_shape_with_order((b * oh * ow, cout))
            .unwrap();
        if accumulate {
            let gw = patches.t().dot(&gy_mat);
            let gw4 = gw
                .into_shape_with_order((self.kh, self.kw, self.cin, self.cout))
                .unwrap()
                .into_dyn();
            self.weight.grad_mut().zip_mut_with(&gw4, |a, b| *a += *b);
        }
        let grad_patches = gy_mat.dot(&self.weight_mat().t());
        let gx_pad = col2im(
            &grad_patches,
            b,
            hp,
            wp,
            self.cin,
            self.kh,
            self.kw,
            self.stride,
            oh,
            ow,
        );
        let p = self.padding;
        let h = hp - 2 * p;
        let w = wp - 2 * p;
        gx_pad.slice(s![.., p..p + h, p..p + w, ..]).to_owned()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        f(&join(prefix, "weight"), &mut self.weight.value);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization with affine parameters and running
/// statistics. Train mode normalizes by batch statistics and updates the
/// running ones; eval mode uses the running statistics only.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>, // xhat, inv_std
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(vec![channels])),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn gamma_view(&self) -> ndarray::ArrayView1<'_, f64> {
        self.gamma
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    fn beta_view(&self) -> ndarray::ArrayView1<'_, f64> {
        self.beta
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
    }

    pub fn forward_flat(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let (m, c) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        if !train {
            let gamma = self.gamma_view();
            let beta = self.beta_view();
            let mut y = x.clone();
            for mut row in y.rows_mut() {
                for j in 0..c {
                    let inv = 1.0 / (self.running_var[j] + self.eps).sqrt();
                    row[j] = (row[j] - self.running_mean[j]) * inv * gamma[j] + beta[j];
                }
            }
            return y;
        }
        assert!(m >= 2, "batchnorm needs at least 2 samples in train mode");
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let mut var = Array1::<f64>::zeros(c);
        for row in x.rows() {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.mapv_inplace(|v| v / m as f64);
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        for mut row in xhat.rows_mut() {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let gamma = self.gamma_view().to_owned();
        let beta = self.beta_view().to_owned();
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for j in 0..c {
                row[j] = row[j] * gamma[j] + beta[j];
            }
        }
        // running stats track the unbiased variance
        let unbias = m as f64 / (m as f64 - 1.0);
        for j in 0..c {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn backward_flat(&mut self, gy: &Array2<f64>, accumulate: bool) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.take().expect("bn backward without forward");
        let (m, c) = gy.dim();
        let gamma = self.gamma_view().to_owned();
        let mut sum_g = Array1::<f64>::zeros(c);
        let mut sum_gx = Array1::<f64>::zeros(c);
        for (grow, xrow) in gy.rows().into_iter().zip(xhat.rows()) {
            for j in 0..c {
                sum_g[j] += grow[j];
                sum_gx[j] += grow[j] * xrow[j];
            }
        }
        if accumulate {
            self.gamma
                .grad_mut()
                .zip_mut_with(&sum_gx.view().into_dyn(), |a, b| *a += *b);
            self.beta
                .grad_mut()
                .zip_mut_with(&sum_g.view().into_dyn(), |a, b| *a += *b);
        }
        let mf = m as f64;
        let mut gx = Array2::zeros((m, c));
        for ((mut orow, grow), xrow) in gx.rows_mut().into_iter().zip(gy.rows()).zip(xhat.rows()) {
            for j in 0..c {
                let dxhat = grow[j] * gamma[j];
                orow[j] =
                    inv_std[j] / mf * (mf * dxhat - gamma[j] * sum_g[j] - xrow[j] * gamma[j] * sum_gx[j]);
            }
        }
        gx
    }

    pub fn forward_nhwc(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, h, w, c) = x.dim();
        let flat = x.view().into_shape_with_order((b * h * w, c)).unwrap();
        let y = self.forward_flat(&flat.to_owned(), train);
        y.into_shape_with_order((b, h, w, c)).unwrap()
    }

    pub fn backward_nhwc(&mut self, gy: &Array4<f64>, accumulate: bool) -> Array4<f64> {
        let (b, h, w, c) = gy.dim();
        let flat = gy.view().into_shape_with_order((b * h * w, c)).unwrap();
        let gx = self.backward_flat(&flat.to_owned(), accumulate);
        gx.into_shape_with_order((b, h, w, c)).unwrap()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        f(&join(prefix, "gamma"), &mut self.gamma.value);
        f(&join(prefix, "beta"), &mut self.beta.value);
        let mut rm = self.running_mean.clone().into_dyn();
        f(&join(prefix, "running_mean"), &mut rm);
        self.running_mean = rm.into_dimensionality().unwrap();
        let mut rv = self.running_var.clone().into_dyn();
        f(&join(prefix, "running_var"), &mut rv);
        self.running_var = rv.into_dimensionality().unwrap();
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array4<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let mask = self.mask.take().expect("relu backward without forward");
        gy * &mask
    }
}

/// Max pooling with square kernel, used by the large backbone stem.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<usize>, (usize, usize, usize, usize))>, // argmax in padded coords
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, padding: usize) -> Self {
        Self {
            k,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.k) / self.stride + 1,
            (w + 2 * self.padding - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, h, w, c) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let x_pad = pad_nhwc(x, self.padding);
        let (hp, wp) = (x_pad.dim().1, x_pad.dim().2);
        let xs = x_pad.as_slice().unwrap();
        let mut y = Array4::zeros((b, oh, ow, c));
        let mut argmax = vec![0usize; b * oh * ow * c];
        {
            let ys = y.as_slice_mut().unwrap();
            let mut oi = 0;
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for ky in 0..self.k {
                                for kx in 0..self.k {
                                    let iy = oy * self.stride + ky;
                                    let ix = ox * self.stride + kx;
                                    let idx = ((bi * hp + iy) * wp + ix) * c + ch;
                                    if xs[idx] > best {
                                        best = xs[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            ys[oi] = best;
                            argmax[oi] = best_idx;
                            oi += 1;
                        }
                    }
                }
            }
        }
        if train {
            self.cache = Some((argmax, (b, hp, wp, c)));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let (argmax, (b, hp, wp, c)) = self.cache.take().expect("maxpool backward");
        let mut gx_pad = Array4::<f64>::zeros((b, hp, wp, c));
        {
            let gxs = gx_pad.as_slice_mut().unwrap();
            for (gi, &ai) in gy.iter().zip(argmax.iter()) {
                gxs[ai] += *gi;
            }
        }
        let p = self.padding;
        gx_pad.slice(s![.., p..hp - p, p..wp - p, ..]).to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Global spatial pooling, (B, H, W, C) -> (B, C).
#[derive(Debug, Clone)]
pub struct GlobalPool {
    pub kind: PoolKind,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
enum PoolCache {
    Avg {
        h: usize,
        w: usize,
    },
    Max {
        argmax: Vec<(usize, usize)>,
        dims: (usize, usize, usize, usize),
    },
}

impl GlobalPool {
    pub fn new(kind: PoolKind) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let (b, h, w, c) = x.dim();
        match self.kind {
            PoolKind::Avg => {
                let mut y = Array2::zeros((b, c));
                for bi in 0..b {
                    for yy in 0..h {
                        for xx in 0..w {
                            for ch in 0..c {
                                y[[bi, ch]] += x[[bi, yy, xx, ch]];
                            }
                        }
                    }
                }
                y.mapv_inplace(|v| v / (h * w) as f64);
                if train {
                    self.cache = Some(PoolCache::Avg { h, w });
                }
                y
            }
            PoolKind::Max => {
                let mut y = Array2::from_elem((b, c), f64::NEG_INFINITY);
                let mut argmax = vec![(0usize, 0usize); b * c];
                for bi in 0..b {
                    for yy in 0..h {
                        for xx in 0..w {
                            for ch in 0..c {
                                let v = x[[bi, yy, xx, ch]];
                                if v > y[[bi, ch]] {
                                    y[[bi, ch]] = v;
                                    argmax[bi * c + ch] = (yy, xx);
                                }
                            }
                        }
                    }
                }
                if train {
                    self.cache = Some(PoolCache::Max {
                        argmax,
                        dims: (b, h, w, c),
                    });
                }
                y
            }
        }
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array4<f64> {
        match self.cache.take().expect("pool backward without forward") {
            PoolCache::Avg { h, w } => {
                let (b, c) = gy.dim();
                let scale = 1.0 / (h * w) as f64;
                let mut gx = Array4::zeros((b, h, w, c));
                for bi in 0..b {
                    for yy in 0..h {
                        for xx in 0..w {
                            for ch in 0..c {
                                gx[[bi, yy, xx, ch]] = gy[[bi, ch]] * scale;
                            }
                        }
                    }
                }
                gx
            }
            PoolCache::Max { argmax, dims } => {
                let (b, h, w, c) = dims;
                let mut gx = Array4::zeros((b, h, w, c));
                for bi in 0..b {
                    for ch in 0..c {
                        let (yy, xx) = argmax[bi * c + ch];
                        gx[[bi, yy, xx, ch]] += gy[[bi, ch]];
                    }
                }
                gx
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// Bias-free linear layer, weight shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, 0.01).unwrap();
        let weight = Param::new(ArrayD::from_shape_fn(vec![input, output], |_| {
            dist.sample(rng)
        }));
        Self {
            weight,
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let y = x.dot(&w);
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>, accumulate: bool) -> Array2<f64> {
        let x = self.cache.take().expect("linear backward without forward");
        if accumulate {
            let gw = x.t().dot(gy);
            self.weight
                .grad_mut()
                .zip_mut_with(&gw.into_dyn(), |a, b| *a += *b);
        }
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        gy.dot(&w.t())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    pub fn visit_tensors(&mut self, prefix: &str, f: &mut TensorVisitor) {
        f(&join(prefix, "weight"), &mut self.weight.value);
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
    pub t: u64,
}

/// Adaptive-moment optimizer. State is keyed by parameter path so the two
/// sides of the min-max game can be stepped independently.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            slots: BTreeMap::new(),
        }
    }

    /// One update for one parameter. A parameter whose gradient was never
    /// touched this phase is left alone entirely.
    pub fn update(&mut self, path: &str, param: &mut Param, lr: f64) {
        let Some(grad) = param.grad.as_ref() else {
            return;
        };
        let slot = self
            .slots
            .entry(path.to_string())
            .or_insert_with(|| AdamSlot {
                m: ArrayD::zeros(grad.raw_dim()),
                v: ArrayD::zeros(grad.raw_dim()),
                t: 0,
            });
        slot.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(slot.t as i32);
        let bc2 = 1.0 - b2.powi(slot.t as i32);
        let m = slot.m.as_slice_mut().unwrap();
        let v = slot.v.as_slice_mut().unwrap();
        let g = grad.as_slice().unwrap();
        let val = param.value.as_slice_mut().unwrap();
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            val[i] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
        }
    }
}
