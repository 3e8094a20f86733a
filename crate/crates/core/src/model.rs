//! Toy embedding network with exact analytic gradients.
//!
//! Architecture: `blocks` x (3x3 same-padded conv, ReLU, 2x2 average pool),
//! global average pooling, a linear projection to the embedding and a
//! bias-free linear classifier on top of the embedding. Everything is `f64`
//! so that finite-difference checks are meaningful.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Image, Matrix};

/// Per-channel input normalization applied inside `forward`.
pub const INPUT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    /// The reference configuration: widths 8, 16, 32 and a 64-d embedding.
    pub fn standard(input_height: usize, input_width: usize, num_classes: usize) -> Self {
        Self {
            in_channels: 3,
            input_height,
            input_width,
            widths: vec![8, 16, 32],
            embed_dim: 64,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("conv widths must be non-empty and positive".into()));
        }
        if self.embed_dim == 0 || self.num_classes == 0 || self.in_channels == 0 {
            return Err(Error::Config("embedding dim, classes and channels must be positive".into()));
        }
        let shrink = 1usize << self.widths.len();
        if self.input_height < shrink || self.input_width < shrink {
            return Err(Error::Config(format!(
                "input {}x{} too small for {} pooling stages",
                self.input_height,
                self.input_width,
                self.widths.len()
            )));
        }
        Ok(())
    }

    fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (b, &cout) in self.widths.iter().enumerate() {
            out.push((format!("conv{b}.weight"), vec![cout, cin, 3, 3]));
            out.push((format!("conv{b}.bias"), vec![cout]));
            cin = cout;
        }
        out.push(("embed.weight".into(), vec![self.embed_dim, cin]));
        out.push(("embed.bias".into(), vec![self.embed_dim]));
        out.push(("classifier.weight".into(), vec![self.num_classes, self.embed_dim]));
        out
    }
}

/// A named parameter (or gradient) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters or gradients, in a fixed architecture-defined order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn zeros_like(arch: &Architecture) -> Self {
        Self {
            tensors: arch
                .tensor_shapes()
                .into_iter()
                .map(|(name, dims)| {
                    let n = dims.iter().product();
                    Tensor {
                        name,
                        dims,
                        data: vec![0.0; n],
                    }
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    arch: Architecture,
    params: ParamSet,
}

// Tensor positions inside the ParamSet.
impl EmbeddingNet {
    fn conv_w(&self, b: usize) -> &[f64] {
        &self.params.tensors[2 * b].data
    }

    fn conv_b(&self, b: usize) -> &[f64] {
        &self.params.tensors[2 * b + 1].data
    }

    fn embed_w(&self) -> &[f64] {
        &self.params.tensors[2 * self.arch.widths.len()].data
    }

    fn embed_b(&self) -> &[f64] {
        &self.params.tensors[2 * self.arch.widths.len() + 1].data
    }

    fn classifier_w(&self) -> &[f64] {
        &self.params.tensors[2 * self.arch.widths.len() + 2].data
    }
}

/// Activations kept for the backward pass of one sample.
#[derive(Debug, Clone)]
struct SampleCache {
    /// Input to each conv block, `(channels, h, w)` planar.
    block_inputs: Vec<Vec<f64>>,
    /// Pre-activation of each conv block.
    pre_acts: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embeddings: Matrix,
    pub logits: Matrix,
    caches: Vec<SampleCache>,
}

impl ForwardOutput {
    pub fn batch_size(&self) -> usize {
        self.embeddings.rows()
    }

    /// Sign of every ReLU pre-activation, sample-major.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.caches
            .iter()
            .flat_map(|c| c.pre_acts.iter().flatten())
            .map(|&v| v > 0.0)
            .collect()
    }

    /// Smallest |pre-activation| over the batch.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.caches
            .iter()
            .flat_map(|c| c.pre_acts.iter().flatten())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl EmbeddingNet {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = ParamSet::zeros_like(&arch);
        Ok(Self { arch, params })
    }

    /// Kaiming fan-in initialization; biases start at zero and the
    /// classifier at a small scale.
    pub fn init(arch: Architecture, rng: &mut RngStream) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let blocks = net.arch.widths.len();
        for (i, t) in net.params.tensors.iter_mut().enumerate() {
            let std = if t.name.ends_with(".bias") {
                continue;
            } else if i < 2 * blocks {
                let fan_in = t.dims[1] * 9;
                (2.0 / fan_in as f64).sqrt()
            } else {
                // Linear layers: fan-in scaling without the ReLU gain.
                (1.0 / t.dims[1] as f64).sqrt()
            };
            for v in t.data.iter_mut() {
                *v = std * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let expected = arch.tensor_shapes();
        if params.tensors.len() != expected.len()
            || params
                .tensors
                .iter()
                .zip(&expected)
                .any(|(t, (n, d))| &t.name != n || &t.dims != d || t.data.len() != d.iter().product::<usize>())
        {
            return Err(Error::Shape("parameter tensors do not match the architecture".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn zero_grads(&self) -> ParamSet {
        ParamSet::zeros_like(&self.arch)
    }

    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn forward(&self, images: &[Image]) -> Result<ForwardOutput> {
        let a = &self.arch;
        let d = a.embed_dim;
        let mut embeddings = Matrix::zeros(images.len(), d);
        let mut logits = Matrix::zeros(images.len(), a.num_classes);
        let mut caches = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.dims() != (a.in_channels, a.input_height, a.input_width) {
                return Err(Error::Shape(format!(
                    "image {i} is {:?}, network expects ({}, {}, {})",
                    img.dims(),
                    a.in_channels,
                    a.input_height,
                    a.input_width
                )));
            }
            let cache = self.forward_sample(img, embeddings.row_mut(i));
            let e = embeddings.row(i).to_vec();
            let w = self.classifier_w();
            for (k, out) in logits.row_mut(i).iter_mut().enumerate() {
                *out = dot(&w[k * d..(k + 1) * d], &e);
            }
            caches.push(cache);
        }
        Ok(ForwardOutput {
            embeddings,
            logits,
            caches,
        })
    }

    fn forward_sample(&self, img: &Image, embedding: &mut [f64]) -> SampleCache {
        let a = &self.arch;
        let (mut h, mut w) = (a.input_height, a.input_width);
        let plane = h * w;
        let mut x: Vec<f64> = img
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let c = (k / plane) % 3;
                (v - INPUT_MEAN[c]) / INPUT_STD[c]
            })
            .collect();
        let mut cin = a.in_channels;
        let mut block_inputs = Vec::with_capacity(a.widths.len());
        let mut pre_acts = Vec::with_capacity(a.widths.len());
        for (b, &cout) in a.widths.iter().enumerate() {
            let z = conv3x3_forward(&x, cin, h, w, self.conv_w(b), self.conv_b(b), cout);
            let act: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let (pooled, ph, pw) = avg_pool2(&act, cout, h, w);
            block_inputs.push(std::mem::replace(&mut x, pooled));
            pre_acts.push(z);
            cin = cout;
            h = ph;
            w = pw;
        }
        let area = (h * w) as f64;
        let pooled: Vec<f64> = x.chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / area).collect();
        let ew = self.embed_w();
        let eb = self.embed_b();
        for (j, out) in embedding.iter_mut().enumerate() {
            *out = eb[j] + dot(&ew[j * cin..(j + 1) * cin], &pooled);
        }
        SampleCache {
            block_inputs,
            pre_acts,
            pooled,
        }
    }

    /// Gradients of a scalar loss given its gradients with respect to the
    /// embeddings and logits of `out`. Tensors named in `frozen` receive an
    /// exactly zero gradient.
    pub fn backward(
        &self,
        out: &ForwardOutput,
        d_embeddings: &Matrix,
        d_logits: &Matrix,
        frozen: &BTreeSet<String>,
    ) -> Result<ParamSet> {
        let a = &self.arch;
        let (n, d, k) = (out.batch_size(), a.embed_dim, a.num_classes);
        if d_embeddings.shape() != (n, d) || d_logits.shape() != (n, k) {
            return Err(Error::Shape(format!(
                "upstream gradients {:?} / {:?} do not match outputs ({n}, {d}) / ({n}, {k})",
                d_embeddings.shape(),
                d_logits.shape()
            )));
        }
        let blocks = a.widths.len();
        let mut grads = self.zero_grads();
        let cls_w = self.classifier_w();
        let emb_w = self.embed_w();
        let c_last = *a.widths.last().expect("validated non-empty");

        for i in 0..n {
            let cache = &out.caches[i];
            let e = out.embeddings.row(i);
            let dl = d_logits.row(i);
            let mut de = d_embeddings.row(i).to_vec();
            {
                let gw = &mut grads.tensors[2 * blocks + 2].data;
                for (c, &g) in dl.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let wrow = &cls_w[c * d..(c + 1) * d];
                    let grow = &mut gw[c * d..(c + 1) * d];
                    for j in 0..d {
                        grow[j] += g * e[j];
                        de[j] += g * wrow[j];
                    }
                }
            }
            let mut dpooled = vec![0.0; c_last];
            {
                let gw = &mut grads.tensors[2 * blocks].data;
                for (j, &g) in de.iter().enumerate() {
                    let wrow = &emb_w[j * c_last..(j + 1) * c_last];
                    let grow = &mut gw[j * c_last..(j + 1) * c_last];
                    for c in 0..c_last {
                        grow[c] += g * cache.pooled[c];
                        dpooled[c] += g * wrow[c];
                    }
                }
                let gb = &mut grads.tensors[2 * blocks + 1].data;
                for (b, g) in gb.iter_mut().zip(&de) {
                    *b += g;
                }
            }

            // Spatial size after the last pooling stage.
            let mut dims = Vec::with_capacity(blocks + 1);
            let (mut h, mut w) = (a.input_height, a.input_width);
            for _ in 0..blocks {
                dims.push((h, w));
                h /= 2;
                w /= 2;
            }
            let area = (h * w) as f64;
            let mut dx: Vec<f64> = dpooled
                .iter()
                .flat_map(|&g| std::iter::repeat_n(g / area, h * w))
                .collect();

            for b in (0..blocks).rev() {
                let (bh, bw) = dims[b];
                let cout = a.widths[b];
                let cin = if b == 0 { a.in_channels } else { a.widths[b - 1] };
                let mut dz = avg_pool2_backward(&dx, cout, bh, bw);
                for (g, &z) in dz.iter_mut().zip(&cache.pre_acts[b]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                let (wt, bt) = grads.tensors.split_at_mut(2 * b + 1);
                conv3x3_weight_grad(&cache.block_inputs[b], &dz, cin, cout, bh, bw, &mut wt[2 * b].data);
                let gb = &mut bt[0].data;
                for (oc, g) in gb.iter_mut().enumerate() {
                    *g += dz[oc * bh * bw..(oc + 1) * bh * bw].iter().sum::<f64>();
                }
                if b > 0 {
                    dx = conv3x3_input_grad(&dz, self.conv_w(b), cin, cout, bh, bw);
                }
            }
        }
        for t in grads.tensors.iter_mut() {
            if frozen.contains(&t.name) {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(grads)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column range of output pixels that read input column `c + kx - 1`.
#[inline]
fn col_range(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// 3x3 convolution with zero padding 1 and stride 1, planar layout.
/// `weights` is `[cout, cin, 3, 3]`.
pub fn conv3x3_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for oc in 0..cout {
        let o = &mut out[oc * plane..(oc + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..cin {
            let x = &input[ic * plane..(ic + 1) * plane];
            let kern = &weights[(oc * cin + ic) * 9..(oc * cin + ic + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = kern[ky * 3 + kx];
                    let (c0, c1) = col_range(kx, w);
                    for r in 0..h {
                        let sr = r + ky;
                        if sr < 1 || sr > h {
                            continue;
                        }
                        let src = &x[(sr - 1) * w..sr * w];
                        let dst = &mut o[r * w..(r + 1) * w];
                        for c in c0..c1 {
                            dst[c] += wv * src[c + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv3x3_weight_grad(
    input: &[f64],
    dz: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    grad: &mut [f64],
) {
    let plane = h * w;
    for oc in 0..cout {
        let g = &dz[oc * plane..(oc + 1) * plane];
        for ic in 0..cin {
            let x = &input[ic * plane..(ic + 1) * plane];
            let kern = &mut grad[(oc * cin + ic) * 9..(oc * cin + ic + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (c0, c1) = col_range(kx, w);
                    let mut acc = 0.0;
                    for r in 0..h {
                        let sr = r + ky;
                        if sr < 1 || sr > h {
                            continue;
                        }
                        let src = &x[(sr - 1) * w..sr * w];
                        let gr = &g[r * w..(r + 1) * w];
                        for c in c0..c1 {
                            acc += gr[c] * src[c + kx - 1];
                        }
                    }
                    kern[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

fn conv3x3_input_grad(dz: &[f64], weights: &[f64], cin: usize, cout: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut dx = vec![0.0; cin * plane];
    for oc in 0..cout {
        let g = &dz[oc * plane..(oc + 1) * plane];
        for ic in 0..cin {
            let kern = &weights[(oc * cin + ic) * 9..(oc * cin + ic + 1) * 9];
            let dxi = &mut dx[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = kern[ky * 3 + kx];
                    let (c0, c1) = col_range(kx, w);
                    for r in 0..h {
                        let sr = r + ky;
                        if sr < 1 || sr > h {
                            continue;
                        }
                        let gr = &g[r * w..(r + 1) * w];
                        let dst = &mut dxi[(sr - 1) * w..sr * w];
                        for c in c0..c1 {
                            dst[c + kx - 1] += wv * gr[c];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2x2 average pooling, stride 2; odd trailing rows/cols are dropped.
fn avg_pool2(x: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for r in 0..ph {
            for col in 0..pw {
                let (r2, c2) = (2 * r, 2 * col);
                dst[r * pw + col] = 0.25
                    * (src[r2 * w + c2] + src[r2 * w + c2 + 1] + src[(r2 + 1) * w + c2] + src[(r2 + 1) * w + c2 + 1]);
            }
        }
    }
    (out, ph, pw)
}

fn avg_pool2_backward(dy: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut dx = vec![0.0; channels * h * w];
    for c in 0..channels {
        let g = &dy[c * ph * pw..(c + 1) * ph * pw];
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for r in 0..ph {
            for col in 0..pw {
                let v = 0.25 * g[r * pw + col];
                let (r2, c2) = (2 * r, 2 * col);
                dst[r2 * w + c2] = v;
                dst[r2 * w + c2 + 1] = v;
                dst[(r2 + 1) * w + c2] = v;
                dst[(r2 + 1) * w + c2 + 1] = v;
            }
        }
    }
    dx
}

/// Momentum SGD with step-decay learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `total_steps` at which the rate is multiplied by `gamma`.
    pub milestones: Vec<f64>,
    pub gamma: f64,
    /// Fraction of `total_steps` over which the rate ramps linearly up to `base_lr`.
    pub warmup: f64,
    pub total_steps: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 3.5e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![0.6, 0.8],
            gamma: 0.1,
            warmup: 0.0,
            total_steps: 1000,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.gamma > 0.0) {
            return Err(Error::Config("momentum in [0, 1), weight decay >= 0, gamma > 0 required".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(Error::Config(format!("warmup fraction {} outside [0, 1]", self.warmup)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let decays = self
            .milestones
            .iter()
            .filter(|&&f| step >= (f * self.total_steps as f64).floor() as usize)
            .count();
        let warmup_steps = (self.warmup * self.total_steps as f64).floor() as usize;
        let ramp = if step < warmup_steps {
            (step + 1) as f64 / warmup_steps as f64
        } else {
            1.0
        };
        ramp * self.base_lr * self.gamma.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: EmbeddingNet,
    pub sgd: SgdConfig,
    velocity: ParamSet,
    step: usize,
    pub frozen: BTreeSet<String>,
}

impl TrainState {
    pub fn new(net: EmbeddingNet, sgd: SgdConfig) -> Result<Self> {
        sgd.validate()?;
        let velocity = net.zero_grads();
        Ok(Self {
            net,
            sgd,
            velocity,
            step: 0,
            frozen: BTreeSet::new(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.sgd.lr_at(self.step)
    }

    /// `v <- momentum * v + g + wd * w; w <- w - lr * v`.
    pub fn sgd_step(&mut self, grads: &ParamSet) -> Result<()> {
        for (p, g) in self.net.params.tensors.iter().zip(&grads.tensors) {
            if p.name != g.name || p.data.len() != g.data.len() {
                return Err(Error::Shape(format!("gradient {} does not match parameter {}", g.name, p.name)));
            }
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient for {}", g.name)));
            }
        }
        let lr = self.lr();
        let (mu, wd) = (self.sgd.momentum, self.sgd.weight_decay);
        for ((p, g), v) in self
            .net
            .params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.velocity.tensors.iter_mut())
        {
            if self.frozen.contains(&p.name) {
                continue;
            }
            for ((w, &gv), vel) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vel = mu * *vel + gv + wd * *w;
                *w -= lr * *vel;
            }
            if p.data.iter().any(|w| !w.is_finite()) {
                return Err(Error::Training(format!(
                    "parameter {} became non-finite at step {}",
                    p.name, self.step
                )));
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Checkpoint byte layout (all integers little-endian):
///
/// ```text
/// magic        8 bytes  "CSWPCKPT"
/// version      u32      1
/// in_channels  u32
/// height       u32
/// width        u32
/// n_tensors    u32
/// n_tensors x {
///     name_len u32, name (UTF-8, name_len bytes),
///     ndim u32, dims (ndim x u32),
///     values (prod(dims) x f64)
/// }
/// ```
///
/// Tensor order: `conv{b}.weight [out, in, 3, 3]`, `conv{b}.bias [out]` for
/// each block, then `embed.weight [D, C]`, `embed.bias [D]`,
/// `classifier.weight [classes, D]`.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSWPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &EmbeddingNet, mut w: W) -> std::io::Result<()> {
    let a = &net.arch;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        CHECKPOINT_VERSION,
        a.in_channels as u32,
        a.input_height as u32,
        a.input_width as u32,
        net.params.tensors.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in &net.params.tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EmbeddingNet> {
    let bad = |m: &str| Error::Data(format!("checkpoint: {m}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let read_u32 = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let in_channels = read_u32(&mut r)? as usize;
    let input_height = read_u32(&mut r)? as usize;
    let input_width = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    if n > 1 << 16 {
        return Err(bad("implausible tensor count"));
    }
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 12 {
            return Err(bad("implausible name length"));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(bad("implausible rank"));
        }
        let dims = (0..ndim)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let mut data = vec![0.0; count];
        let mut b = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b).map_err(|_| bad("truncated values"))?;
            *v = f64::from_le_bytes(b);
        }
        tensors.push(Tensor { name, dims, data });
    }
    // Recover the architecture from the tensor shapes.
    let mut widths = Vec::new();
    let mut i = 0;
    while i < tensors.len() && tensors[i].name == format!("conv{}.weight", widths.len()) {
        widths.push(tensors[i].dims[0]);
        i += 2;
    }
    let embed = tensors.get(i).ok_or_else(|| bad("missing embed.weight"))?;
    let cls = tensors.get(i + 2).ok_or_else(|| bad("missing classifier.weight"))?;
    if embed.dims.len() != 2 || cls.dims.len() != 2 {
        return Err(bad("embed/classifier weights must be matrices"));
    }
    let arch = Architecture {
        in_channels,
        input_height,
        input_width,
        widths,
        embed_dim: embed.dims[0],
        num_classes: cls.dims[0],
    };
    EmbeddingNet::from_params(arch, ParamSet { tensors })
}

pub fn save_checkpoint(net: &EmbeddingNet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(net, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EmbeddingNet> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
