//! The network: a 1-D convolutional encoder producing the shared feature `F0`,
//! the domain and label projections `W_d`/`W_l`, two energy heads, class
//! prototypes, a log-variance head and a domain discriminator.
//!
//! Vectors are row vectors: a linear layer computes `y = x · W + b` with `W`
//! stored `[in × out]`, so the projection `F0 · W_d` is `W_dᵀ F0`.
//!
//! Every forward routine threads a [`MacCounter`]; it is the instrumented
//! oracle behind [`estimate_cost`].

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, sample_normal, Matrix, Rng};

pub const INIT_STDDEV: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub kernel: usize,
    /// Output channels of each convolution layer; empty means no conv stack.
    pub conv_channels: Vec<usize>,
    pub encoding_dim: usize,
    pub projection_dim: usize,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub num_domains: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            kernel: 5,
            conv_channels: vec![16, 16],
            encoding_dim: 64,
            projection_dim: 32,
            mlp_hidden: 64,
            num_classes: 4,
            num_domains: 4,
        }
    }
}

impl ArchConfig {
    /// Narrower heads sized for desk-scale synthetic runs.
    pub fn benchmark() -> Self {
        Self {
            encoding_dim: 32,
            projection_dim: 16,
            mlp_hidden: 32,
            ..Self::default()
        }
    }

    /// Copies channel and label counts from a dataset.
    pub fn fitted_to(mut self, ds: &TimeSeriesDataset) -> Self {
        self.in_channels = ds.channels();
        self.num_classes = ds.num_classes();
        self.num_domains = ds.num_domains();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd and >= 1, got {}", self.kernel));
        }
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("encoding_dim", self.encoding_dim),
            ("projection_dim", self.projection_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("num_classes", self.num_classes),
            ("num_domains", self.num_domains),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return bad("conv channel counts must be at least 1".into());
        }
        if self.projection_dim > self.encoding_dim {
            return bad(format!(
                "projection_dim {} exceeds encoding_dim {}",
                self.projection_dim, self.encoding_dim
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.conv_channels.len()
    }

    /// Channels entering conv layer `l` (`C_{l-1}`), with `C_0` the input.
    pub fn channels_in(&self, l: usize) -> usize {
        if l == 0 {
            self.in_channels
        } else {
            self.conv_channels[l - 1]
        }
    }

    /// Channels leaving the conv stack (`C_L`).
    pub fn encoder_channels(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(self.in_channels)
    }
}

/// Running multiply-accumulate count.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter(pub u64);

impl MacCounter {
    #[inline]
    fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in × out]`
    pub weight: Matrix,
    /// `[1 × out]`
    pub bias: Matrix,
}

impl Linear {
    fn init(rng: &mut Rng, inp: usize, out: usize) -> Self {
        Self {
            weight: sample_normal(rng, inp, out, INIT_STDDEV).expect("positive stddev"),
            bias: Matrix::zeros(1, out),
        }
    }

    fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Matrix::zeros(inp, out),
            bias: Matrix::zeros(1, out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &[f64], macs: &mut MacCounter) -> Vec<f64> {
        let (inp, out) = self.weight.shape();
        debug_assert_eq!(x.len(), inp);
        let w = self.weight.as_slice();
        let mut y = self.bias.as_slice().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            let row = &w[i * out..(i + 1) * out];
            for (yj, wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        macs.add(inp * out);
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let (inp, out) = self.weight.shape();
        let w = self.weight.as_slice();
        let gw = grad.weight.as_mut_slice();
        for (gb, d) in grad.bias.as_mut_slice().iter_mut().zip(dy) {
            *gb += d;
        }
        let mut dx = vec![0.0; inp];
        for i in 0..inp {
            let row = &w[i * out..(i + 1) * out];
            let grow = &mut gw[i * out..(i + 1) * out];
            let mut acc = 0.0;
            for j in 0..out {
                grow[j] += x[i] * dy[j];
                acc += row[j] * dy[j];
            }
            dx[i] = acc;
        }
        dx
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    /// Smallest |pre-activation| over hidden units; distance to a ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl Mlp {
    fn init(rng: &mut Rng, dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::init(rng, w[0], w[1])).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn forward(&self, x: &[f64], macs: &mut MacCounter) -> Vec<f64> {
        self.forward_traced(x, macs).0
    }

    pub fn forward_traced(&self, x: &[f64], macs: &mut MacCounter) -> (Vec<f64>, MlpTrace) {
        let mut trace = MlpTrace::default();
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h, macs);
            trace.inputs.push(h);
            h = if k < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            trace.pre.push(z);
        }
        (h, trace)
    }

    /// `dL/dx` only, no parameter gradients.
    pub fn backward_input(&self, trace: &MlpTrace, dy: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            if k < last {
                for (dv, z) in d.iter_mut().zip(&trace.pre[k]) {
                    if *z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            let w = &self.layers[k].weight;
            d = (0..w.rows()).map(|i| linalg::dot(w.row(i), &d)).collect();
        }
        d
    }

    pub fn backward(&self, trace: &MlpTrace, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = dy.to_vec();
        for k in (0..self.layers.len()).rev() {
            if k < last {
                for (dv, z) in d.iter_mut().zip(&trace.pre[k]) {
                    if *z <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
            d = self.layers[k].backward(&trace.inputs[k], &d, &mut grad.layers[k]);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[c_out × (c_in · K)]`, tap `k` of input channel `ci` at column `ci·K + k`.
    pub kernel: Matrix,
    /// `[1 × c_out]`
    pub bias: Matrix,
}

impl Conv1d {
    fn c_out(&self) -> usize {
        self.kernel.rows()
    }

    /// Stride 1, zero "same" padding, no activation. `x` is `[c_in × n]`.
    fn forward(&self, x: &[f64], n: usize, taps: usize, macs: &mut MacCounter) -> Vec<f64> {
        let c_out = self.c_out();
        let c_in = self.kernel.cols() / taps;
        let pad = taps / 2;
        let padded_len = n + taps - 1;
        let mut padded = vec![0.0; c_in * padded_len];
        for ci in 0..c_in {
            padded[ci * padded_len + pad..ci * padded_len + pad + n]
                .copy_from_slice(&x[ci * n..(ci + 1) * n]);
        }
        let w = self.kernel.as_slice();
        let mut y = vec![0.0; c_out * n];
        for co in 0..c_out {
            let b = self.bias.as_slice()[co];
            let wrow = &w[co * c_in * taps..(co + 1) * c_in * taps];
            for t in 0..n {
                let mut acc = b;
                for ci in 0..c_in {
                    let src = &padded[ci * padded_len + t..ci * padded_len + t + taps];
                    let wk = &wrow[ci * taps..(ci + 1) * taps];
                    for k in 0..taps {
                        acc += wk[k] * src[k];
                    }
                }
                y[co * n + t] = acc;
            }
        }
        macs.add(n * taps * c_in * c_out);
        y
    }

    fn backward(&self, x: &[f64], n: usize, taps: usize, dy: &[f64], grad: &mut Conv1d) -> Vec<f64> {
        let c_out = self.c_out();
        let c_in = self.kernel.cols() / taps;
        let pad = taps as isize / 2;
        let w = self.kernel.as_slice();
        let gw = grad.kernel.as_mut_slice();
        let gb = grad.bias.as_mut_slice();
        let mut dx = vec![0.0; c_in * n];
        for co in 0..c_out {
            let dyr = &dy[co * n..(co + 1) * n];
            gb[co] += dyr.iter().sum::<f64>();
            for ci in 0..c_in {
                for k in 0..taps {
                    let idx = co * c_in * taps + ci * taps + k;
                    let wv = w[idx];
                    let mut gacc = 0.0;
                    for t in 0..n {
                        let s = t as isize + k as isize - pad;
                        if s < 0 || s >= n as isize {
                            continue;
                        }
                        let s = s as usize;
                        gacc += dyr[t] * x[ci * n + s];
                        dx[ci * n + s] += wv * dyr[t];
                    }
                    gw[idx] += gacc;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub conv: Vec<Conv1d>,
    /// Linear map from pooled conv channels to the encoding width.
    pub pool_proj: Linear,
    /// `W_d`, `[b × d]`
    pub w_domain: Matrix,
    /// `W_l`, `[b × d]`
    pub w_label: Matrix,
    /// `θ_d`: d → h → h → N_d
    pub energy_domain: Mlp,
    /// `θ_y`: d → h → h → N_y
    pub energy_label: Mlp,
    /// `P_y`, one row per class, `[N_y × b]`
    pub prototypes: Matrix,
    /// d → N_d, outputs log σ²
    pub variance: Linear,
    /// b → h → N_d
    pub discriminator: Mlp,
}

/// Encoder activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    length: usize,
    /// input of each conv layer (post-ReLU output of the previous one)
    inputs: Vec<Vec<f64>>,
    /// pre-activation of each conv layer
    pre: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl EncoderTrace {
    pub fn kink_margin(&self) -> f64 {
        self.pre
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

/// `argmin C_y` with `softmax(−C_y)` probabilities.
pub fn predict_from_consistency(consistency: &[f64]) -> Prediction {
    let neg: Vec<f64> = consistency.iter().map(|c| -c).collect();
    let probs = linalg::softmax(&neg);
    let class = consistency
        .iter()
        .enumerate()
        .fold(0, |best, (k, &c)| if c < consistency[best] { k } else { best });
    Prediction {
        class,
        confidence: probs[class],
        probs,
    }
}

impl ModelParams {
    pub fn init(arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let (b, d, h) = (arch.encoding_dim, arch.projection_dim, arch.mlp_hidden);
        let conv = (0..arch.num_layers())
            .map(|l| Conv1d {
                kernel: sample_normal(rng, arch.conv_channels[l], arch.channels_in(l) * arch.kernel, INIT_STDDEV)
                    .expect("positive stddev"),
                bias: Matrix::zeros(1, arch.conv_channels[l]),
            })
            .collect();
        let pool_proj = Linear::init(rng, arch.encoder_channels(), b);
        let w_domain = sample_normal(rng, b, d, INIT_STDDEV)?;
        let w_label = sample_normal(rng, b, d, INIT_STDDEV)?;
        let energy_domain = Mlp::init(rng, &[d, h, h, arch.num_domains]);
        let energy_label = Mlp::init(rng, &[d, h, h, arch.num_classes]);
        let variance = Linear::init(rng, d, arch.num_domains);
        let discriminator = Mlp::init(rng, &[b, h, arch.num_domains]);
        Ok(Self {
            arch: arch.clone(),
            conv,
            pool_proj,
            w_domain,
            w_label,
            energy_domain,
            energy_label,
            prototypes: Matrix::zeros(arch.num_classes, b),
            variance,
            discriminator,
        })
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            conv: self
                .conv
                .iter()
                .map(|c| Conv1d {
                    kernel: Matrix::zeros(c.kernel.rows(), c.kernel.cols()),
                    bias: Matrix::zeros(1, c.bias.cols()),
                })
                .collect(),
            pool_proj: Linear::zeros(self.pool_proj.in_dim(), self.pool_proj.out_dim()),
            w_domain: Matrix::zeros(self.w_domain.rows(), self.w_domain.cols()),
            w_label: Matrix::zeros(self.w_label.rows(), self.w_label.cols()),
            energy_domain: self.energy_domain.zeros_like(),
            energy_label: self.energy_label.zeros_like(),
            prototypes: Matrix::zeros(self.prototypes.rows(), self.prototypes.cols()),
            variance: Linear::zeros(self.variance.in_dim(), self.variance.out_dim()),
            discriminator: self.discriminator.zeros_like(),
        }
    }

    /// All tensors with stable names, in serialization order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (l, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{l}.kernel"), &c.kernel));
            out.push((format!("conv{l}.bias"), &c.bias));
        }
        out.push(("pool_proj.weight".into(), &self.pool_proj.weight));
        out.push(("pool_proj.bias".into(), &self.pool_proj.bias));
        out.push(("w_domain".into(), &self.w_domain));
        out.push(("w_label".into(), &self.w_label));
        for (prefix, mlp) in [
            ("energy_domain", &self.energy_domain),
            ("energy_label", &self.energy_label),
        ] {
            for (k, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{prefix}.{k}.weight"), &l.weight));
                out.push((format!("{prefix}.{k}.bias"), &l.bias));
            }
        }
        out.push(("prototypes".into(), &self.prototypes));
        out.push(("variance.weight".into(), &self.variance.weight));
        out.push(("variance.bias".into(), &self.variance.bias));
        for (k, l) in self.discriminator.layers.iter().enumerate() {
            out.push((format!("discriminator.{k}.weight"), &l.weight));
            out.push((format!("discriminator.{k}.bias"), &l.bias));
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (l, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{l}.kernel"), &mut c.kernel));
            out.push((format!("conv{l}.bias"), &mut c.bias));
        }
        out.push(("pool_proj.weight".into(), &mut self.pool_proj.weight));
        out.push(("pool_proj.bias".into(), &mut self.pool_proj.bias));
        out.push(("w_domain".into(), &mut self.w_domain));
        out.push(("w_label".into(), &mut self.w_label));
        for (prefix, mlp) in [
            ("energy_domain", &mut self.energy_domain),
            ("energy_label", &mut self.energy_label),
        ] {
            for (k, l) in mlp.layers.iter_mut().enumerate() {
                out.push((format!("{prefix}.{k}.weight"), &mut l.weight));
                out.push((format!("{prefix}.{k}.bias"), &mut l.bias));
            }
        }
        out.push(("prototypes".into(), &mut self.prototypes));
        out.push(("variance.weight".into(), &mut self.variance.weight));
        out.push(("variance.bias".into(), &mut self.variance.bias));
        for (k, l) in self.discriminator.layers.iter_mut().enumerate() {
            out.push((format!("discriminator.{k}.weight"), &mut l.weight));
            out.push((format!("discriminator.{k}.bias"), &mut l.bias));
        }
        out
    }

    /// All parameters concatenated in [`tensors`](Self::tensors) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, m) in self.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// `‖W_dᵀ W_l‖_F`
    pub fn cross_norm(&self) -> f64 {
        self.w_domain
            .t_matmul(&self.w_label)
            .expect("projection shapes agree")
            .frob_norm()
    }

    pub fn prototype_norms(&self) -> Vec<f64> {
        (0..self.prototypes.rows())
            .map(|k| linalg::norm(self.prototypes.row(k)))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<usize> {
        let c = self.arch.in_channels;
        if x.is_empty() || x.len() % c != 0 {
            return Err(Error::InvalidArgument(format!(
                "sample of {} values does not split into {c} channels",
                x.len()
            )));
        }
        Ok(x.len() / c)
    }

    pub fn encode_traced(&self, x: &[f64], macs: &mut MacCounter) -> Result<(Vec<f64>, EncoderTrace)> {
        let n = self.check_input(x)?;
        let taps = self.arch.kernel;
        let mut trace = EncoderTrace {
            length: n,
            inputs: Vec::with_capacity(self.conv.len()),
            pre: Vec::with_capacity(self.conv.len()),
            pooled: Vec::new(),
        };
        let mut h = x.to_vec();
        for conv in &self.conv {
            let z = conv.forward(&h, n, taps, macs);
            trace.inputs.push(h);
            h = z.iter().map(|v| v.max(0.0)).collect();
            trace.pre.push(z);
        }
        let c = self.arch.encoder_channels();
        let pooled: Vec<f64> = (0..c)
            .map(|ch| h[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        let f0 = self.pool_proj.forward(&pooled, macs);
        trace.pooled = pooled;
        Ok((f0, trace))
    }

    /// Accumulates encoder gradients for `dL/dF0 = d_f0`.
    pub fn encode_backward(&self, trace: &EncoderTrace, d_f0: &[f64], grad: &mut ModelParams) {
        let d_pooled = self.pool_proj.backward(&trace.pooled, d_f0, &mut grad.pool_proj);
        let n = trace.length;
        let mut d: Vec<f64> = d_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / n as f64, n))
            .collect();
        for l in (0..self.conv.len()).rev() {
            for (dv, z) in d.iter_mut().zip(&trace.pre[l]) {
                if *z <= 0.0 {
                    *dv = 0.0;
                }
            }
            d = self.conv[l].backward(&trace.inputs[l], n, self.arch.kernel, &d, &mut grad.conv[l]);
        }
    }

    pub fn encode_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_traced(x, &mut MacCounter::default())?.0)
    }

    /// `F0` for every sample, `[num_samples × b]`.
    pub fn encode(&self, ds: &TimeSeriesDataset) -> Result<Matrix> {
        let all: Vec<usize> = (0..ds.len()).collect();
        self.encode_indices(ds, &all)
    }

    pub fn encode_indices(&self, ds: &TimeSeriesDataset, indices: &[usize]) -> Result<Matrix> {
        if ds.channels() != self.arch.in_channels {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} channels, model expects {}",
                ds.channels(),
                self.arch.in_channels
            )));
        }
        let b = self.arch.encoding_dim;
        let mut out = Vec::with_capacity(indices.len() * b);
        for &i in indices {
            out.extend(self.encode_one(ds.sample(i))?);
        }
        Matrix::from_vec(indices.len(), b, out)
    }

    /// `F0 · W` for a `[b × d]` projection.
    pub(crate) fn project(w: &Matrix, f0: &[f64], macs: &mut MacCounter) -> Vec<f64> {
        let (b, d) = w.shape();
        debug_assert_eq!(f0.len(), b);
        let mut z = vec![0.0; d];
        for (i, &x) in f0.iter().enumerate() {
            for (zj, wij) in z.iter_mut().zip(w.row(i)) {
                *zj += x * wij;
            }
        }
        macs.add(b * d);
        z
    }

    /// Accumulates `dL/dW += F0ᵀ dz` and returns `dL/dF0 = dz · Wᵀ`.
    pub(crate) fn project_backward(w: &Matrix, f0: &[f64], dz: &[f64], grad_w: &mut Matrix) -> Vec<f64> {
        let (b, d) = w.shape();
        let mut df0 = vec![0.0; b];
        for i in 0..b {
            let grow = grad_w.row_mut(i);
            for j in 0..d {
                grow[j] += f0[i] * dz[j];
            }
            df0[i] = linalg::dot(w.row(i), dz);
        }
        df0
    }

    pub fn energy_domain(&self, f0: &[f64]) -> Vec<f64> {
        let mut m = MacCounter::default();
        let z = Self::project(&self.w_domain, f0, &mut m);
        self.energy_domain.forward(&z, &mut m)
    }

    pub fn energy_label(&self, f0: &[f64]) -> Vec<f64> {
        let mut m = MacCounter::default();
        let z = Self::project(&self.w_label, f0, &mut m);
        self.energy_label.forward(&z, &mut m)
    }

    /// Squared distance from `F0` to each prototype.
    pub fn prototype_distances(&self, f0: &[f64]) -> Vec<f64> {
        (0..self.prototypes.rows())
            .map(|k| linalg::sq_dist(f0, self.prototypes.row(k)))
            .collect()
    }

    /// `C_y[k] = E_y[k] + ‖F0 − P_k‖²`
    pub fn consistency_error(&self, f0: &[f64]) -> Vec<f64> {
        self.energy_label(f0)
            .into_iter()
            .zip(self.prototype_distances(f0))
            .map(|(e, d)| e + d)
            .collect()
    }

    pub fn predict(&self, f0: &[f64]) -> Prediction {
        predict_from_consistency(&self.consistency_error(f0))
    }

    /// `σ_d² = exp(linear(W_dᵀ F0))`
    pub fn variance_head(&self, f0: &[f64]) -> Vec<f64> {
        let mut m = MacCounter::default();
        let z = Self::project(&self.w_domain, f0, &mut m);
        self.variance.forward(&z, &mut m).into_iter().map(f64::exp).collect()
    }

    pub fn discriminate_domain(&self, f0: &[f64]) -> Vec<f64> {
        self.discriminator.forward(f0, &mut MacCounter::default())
    }

    /// Encoder plus both energy branches, the path priced by [`estimate_cost`].
    pub fn forward_energies(&self, x: &[f64], macs: &mut MacCounter) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (f0, _) = self.encode_traced(x, macs)?;
        let zd = Self::project(&self.w_domain, &f0, macs);
        let ed = self.energy_domain.forward(&zd, macs);
        let zl = Self::project(&self.w_label, &f0, macs);
        let ey = self.energy_label.forward(&zl, macs);
        Ok((f0, ed, ey))
    }
}

pub fn init_params(arch: &ArchConfig, rng: &mut Rng) -> Result<ModelParams> {
    ModelParams::init(arch, rng)
}

/// Per-sample forward cost of [`ModelParams::forward_energies`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostEstimate {
    /// conv stack: Σ_l N·K·C_{l−1}·C_l
    pub conv_macs: u64,
    /// pooled projection, both branch projections and both energy MLPs
    pub head_macs: u64,
    pub time_macs: u64,
    pub param_count: u64,
    /// input N·d_in + encoding b + outputs 2N_y + 2N_d
    pub activation_count: u64,
}

pub fn estimate_cost(arch: &ArchConfig, length: usize) -> CostEstimate {
    let n = length as u64;
    let k = arch.kernel as u64;
    let (b, d, h) = (
        arch.encoding_dim as u64,
        arch.projection_dim as u64,
        arch.mlp_hidden as u64,
    );
    let (ny, nd) = (arch.num_classes as u64, arch.num_domains as u64);
    let c_last = arch.encoder_channels() as u64;

    let mut conv_macs = 0;
    let mut conv_params = 0;
    for l in 0..arch.num_layers() {
        let (ci, co) = (arch.channels_in(l) as u64, arch.conv_channels[l] as u64);
        conv_macs += n * k * ci * co;
        conv_params += k * ci * co + co;
    }
    // the two energy MLPs share the d·h + h² shape, differing only in output width
    let head_macs = c_last * b + 2 * b * d + 2 * (d * h + h * h) + h * (ny + nd);
    let param_count = conv_params
        + (c_last * b + b)
        + 2 * b * d
        + 2 * (d * h + h + h * h + h)
        + h * (ny + nd)
        + (ny + nd);
    CostEstimate {
        conv_macs,
        head_macs,
        time_macs: conv_macs + head_macs,
        param_count,
        activation_count: n * arch.in_channels as u64 + b + 2 * ny + 2 * nd,
    }
}

pub const PARAMS_MAGIC: &str = "ERIS-PARAMS";

fn arch_header(arch: &ArchConfig) -> String {
    let conv = if arch.conv_channels.is_empty() {
        "-".to_string()
    } else {
        arch.conv_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    format!(
        "{PARAMS_MAGIC},1,{},{},{},{},{},{},{},{}\n",
        arch.in_channels,
        arch.kernel,
        conv,
        arch.encoding_dim,
        arch.projection_dim,
        arch.mlp_hidden,
        arch.num_classes,
        arch.num_domains
    )
}

fn parse_arch_header(line: &str, path: &Path) -> Result<ArchConfig> {
    let f: Vec<&str> = line.trim_end().split(',').collect();
    if f.len() != 10 || f[0] != PARAMS_MAGIC || f[1] != "1" {
        return Err(Error::parse(path, 1, "expected `ERIS-PARAMS,1,...` header"));
    }
    let count = |s: &str, name: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::parse(path, 1, format!("header field `{name}` is not a count: `{s}`")))
    };
    let conv_channels = if f[4] == "-" {
        Vec::new()
    } else {
        f[4].split(';')
            .map(|s| count(s, "conv_channels"))
            .collect::<Result<_>>()?
    };
    let arch = ArchConfig {
        in_channels: count(f[2], "in_channels")?,
        kernel: count(f[3], "kernel")?,
        conv_channels,
        encoding_dim: count(f[5], "encoding_dim")?,
        projection_dim: count(f[6], "projection_dim")?,
        mlp_hidden: count(f[7], "mlp_hidden")?,
        num_classes: count(f[8], "num_classes")?,
        num_domains: count(f[9], "num_domains")?,
    };
    arch.validate()?;
    Ok(arch)
}

/// Header line, then per tensor: `u32` name length, name bytes, `u64` rows,
/// `u64` cols, then `rows·cols` little-endian `f64`s.
pub fn params_to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = arch_header(&params.arch).into_bytes();
    for (name, m) in params.tensors() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((m.rows() as u64).to_le_bytes());
        out.extend((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::parse(path, 1, "header is not UTF-8"))?;
    let arch = parse_arch_header(header, path)?;
    let mut params = ModelParams::init(&arch, &mut Rng::new(0))?;
    let mut cursor = &bytes[nl + 1..];
    let truncated = |name: &str| Error::parse(path, 2, format!("truncated tensor data at `{name}`"));
    for (expected, m) in params.tensors_mut() {
        let mut u32buf = [0u8; 4];
        cursor.read_exact(&mut u32buf).map_err(|_| truncated(&expected))?;
        let len = u32::from_le_bytes(u32buf) as usize;
        if cursor.len() < len {
            return Err(truncated(&expected));
        }
        let (name, rest) = cursor.split_at(len);
        cursor = rest;
        if name != expected.as_bytes() {
            return Err(Error::parse(
                path,
                2,
                format!("expected tensor `{expected}`, found `{}`", String::from_utf8_lossy(name)),
            ));
        }
        let mut u64buf = [0u8; 8];
        cursor.read_exact(&mut u64buf).map_err(|_| truncated(&expected))?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        cursor.read_exact(&mut u64buf).map_err(|_| truncated(&expected))?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        if (rows, cols) != m.shape() {
            return Err(Error::parse(
                path,
                2,
                format!("tensor `{expected}` has shape {rows}x{cols}, arch implies {:?}", m.shape()),
            ));
        }
        for v in m.as_mut_slice() {
            cursor.read_exact(&mut u64buf).map_err(|_| truncated(&expected))?;
            *v = f64::from_le_bytes(u64buf);
        }
    }
    if !cursor.is_empty() {
        return Err(Error::parse(path, 2, "trailing bytes after last tensor"));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters in {}", path.display())));
    }
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&params_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            in_channels: 2,
            kernel: 3,
            conv_channels: vec![3],
            encoding_dim: 4,
            projection_dim: 3,
            mlp_hidden: 3,
            num_classes: 2,
            num_domains: 2,
        }
    }

    fn zero_mlp(m: &mut Mlp) {
        for l in &mut m.layers {
            l.weight.fill(0.0);
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let arch = ArchConfig::default();
        let a = init_params(&arch, &mut Rng::new(1)).unwrap();
        let b = init_params(&arch, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.conv[0].kernel.shape(), (16, 3 * 5));
        assert_eq!(a.conv[1].kernel.shape(), (16, 16 * 5));
        assert_eq!(a.pool_proj.weight.shape(), (16, 64));
        assert_eq!(a.w_domain.shape(), (64, 32));
        assert_eq!(a.w_label.shape(), (64, 32));
        assert_eq!(a.energy_domain.layers.last().unwrap().out_dim(), 4);
        assert_eq!(a.energy_label.layers[0].in_dim(), 32);
        assert_eq!(a.prototypes.shape(), (4, 64));
        assert_eq!(a.prototypes.frob_norm_sq(), 0.0);
        assert_eq!(a.variance.weight.shape(), (32, 4));
        assert_eq!(a.discriminator.layers[0].in_dim(), 64);
        assert_eq!(a.discriminator.layers.len(), 2);
        assert!(a.tensors().iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, m)| m.frob_norm_sq() == 0.0));
    }

    #[test]
    fn init_stddev() {
        let arch = ArchConfig {
            conv_channels: vec![64, 64],
            ..ArchConfig::default()
        };
        let p = init_params(&arch, &mut Rng::new(3)).unwrap();
        let k = p.conv[1].kernel.as_slice();
        assert!(k.len() >= 10_000);
        let n = k.len() as f64;
        let mean = k.iter().sum::<f64>() / n;
        let sd = (k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / 0.05 - 1.0).abs() < 0.2, "sd {sd}");
    }

    #[test]
    fn encode_shapes_and_zero_input() {
        let arch = ArchConfig {
            in_channels: 9,
            ..ArchConfig::default()
        };
        let p = init_params(&arch, &mut Rng::new(0)).unwrap();
        let ds = TimeSeriesDataset::new(9, 128, 4, 4, vec![0.0; 2 * 9 * 128], vec![0, 1], vec![0, 1]).unwrap();
        let f = p.encode(&ds).unwrap();
        assert_eq!(f.shape(), (2, 64));
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_wrong_channels() {
        let p = init_params(&ArchConfig::default(), &mut Rng::new(0)).unwrap();
        let ds = TimeSeriesDataset::new(2, 8, 4, 4, vec![0.0; 16], vec![0], vec![0]).unwrap();
        assert!(p.encode(&ds).is_err());
        assert!(p.encode_one(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn encode_is_batch_permutation_equivariant() {
        let arch = tiny_arch();
        let p = init_params(&arch, &mut Rng::new(5)).unwrap();
        let mut rng = Rng::new(6);
        let vals = rng.normal_vec(3 * 2 * 7, 1.0);
        let ds = TimeSeriesDataset::new(2, 7, 2, 2, vals, vec![0, 1, 0], vec![0, 1, 1]).unwrap();
        let f = p.encode_indices(&ds, &[0, 1, 2]).unwrap();
        let g = p.encode_indices(&ds, &[2, 0, 1]).unwrap();
        assert_eq!(g.row(0), f.row(2));
        assert_eq!(g.row(1), f.row(0));
        assert_eq!(g.row(2), f.row(1));
    }

    /// Straight-line forward of the 3-layer head on a 3-unit toy.
    #[test]
    fn energy_heads_match_hand_arithmetic() {
        let arch = ArchConfig {
            in_channels: 1,
            kernel: 1,
            conv_channels: vec![],
            encoding_dim: 2,
            projection_dim: 1,
            mlp_hidden: 1,
            num_classes: 2,
            num_domains: 3,
        };
        let mut p = init_params(&arch, &mut Rng::new(0)).unwrap();
        p.w_domain = Matrix::from_rows(&[&[2.0], &[-1.0]]);
        p.energy_domain.layers[0].weight = Matrix::from_rows(&[&[0.5]]);
        p.energy_domain.layers[0].bias = Matrix::from_rows(&[&[0.1]]);
        p.energy_domain.layers[1].weight = Matrix::from_rows(&[&[-3.0]]);
        p.energy_domain.layers[1].bias = Matrix::from_rows(&[&[2.0]]);
        p.energy_domain.layers[2].weight = Matrix::from_rows(&[&[1.0, -1.0, 0.5]]);
        p.energy_domain.layers[2].bias = Matrix::from_rows(&[&[0.0, 1.0, -1.0]]);
        let f0 = [1.0, 0.5];
        // z = 2·1 − 1·0.5 = 1.5; h1 = relu(0.75 + 0.1) = 0.85
        // h2 = relu(−2.55 + 2) = 0 → output = bias
        assert_eq!(p.energy_domain(&f0), vec![0.0, 1.0, -1.0]);
        p.energy_domain.layers[1].bias = Matrix::from_rows(&[&[3.0]]);
        // h2 = 0.45
        let e = p.energy_domain(&f0);
        let want = [0.45, -0.45 + 1.0, 0.225 - 1.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }

        p.w_label = Matrix::from_rows(&[&[1.0], &[1.0]]);
        p.energy_label.layers[0].weight = Matrix::from_rows(&[&[1.0]]);
        p.energy_label.layers[1].weight = Matrix::from_rows(&[&[2.0]]);
        p.energy_label.layers[2].weight = Matrix::from_rows(&[&[1.0, -1.0]]);
        p.energy_label.layers[2].bias = Matrix::from_rows(&[&[0.5, 0.0]]);
        // z = 1.5, h1 = 1.5, h2 = 3.0
        assert_eq!(p.energy_label(&f0), vec![3.5, -3.0]);
    }

    #[test]
    fn zero_weight_heads_return_bias() {
        let mut p = init_params(&tiny_arch(), &mut Rng::new(2)).unwrap();
        zero_mlp(&mut p.energy_domain);
        zero_mlp(&mut p.energy_label);
        zero_mlp(&mut p.discriminator);
        p.energy_domain.layers[2].bias = Matrix::from_rows(&[&[0.3, -0.7]]);
        p.energy_label.layers[2].bias = Matrix::from_rows(&[&[1.5, 2.5]]);
        p.discriminator.layers[1].bias = Matrix::from_rows(&[&[4.0, 5.0]]);
        let f0 = [0.2, -1.0, 3.0, 0.5];
        assert_eq!(p.energy_domain(&f0), vec![0.3, -0.7]);
        assert_eq!(p.energy_label(&f0), vec![1.5, 2.5]);
        assert_eq!(p.discriminate_domain(&f0), vec![4.0, 5.0]);
        p.variance.weight.fill(0.0);
        assert_eq!(p.variance_head(&f0), vec![1.0, 1.0]);
    }

    #[test]
    fn discriminator_and_variance_hand_values() {
        let mut p = init_params(&tiny_arch(), &mut Rng::new(2)).unwrap();
        p.discriminator.layers[0].weight = Matrix::from_rows(&[
            &[1.0, 0.0, -1.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0],
        ]);
        p.discriminator.layers[1].weight = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[5.0, 5.0]]);
        let f0 = [0.5, -1.0, 9.0, 9.0];
        // hidden = relu([0.5, −1, −0.5]) = [0.5, 0, 0]
        assert_eq!(p.discriminate_domain(&f0), vec![0.5, 0.0]);

        p.w_domain = Matrix::from_vec(4, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        p.variance.weight = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        p.variance.bias = Matrix::from_rows(&[&[0.0, 0.5]]);
        let s = p.variance_head(&f0);
        assert!((s[0] - 0.5f64.exp()).abs() < 1e-15);
        assert!((s[1] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn consistency_error_values() {
        let mut p = init_params(&tiny_arch(), &mut Rng::new(2)).unwrap();
        zero_mlp(&mut p.energy_label);
        p.energy_label.layers[2].bias = Matrix::from_rows(&[&[0.5, 0.0]]);
        p.prototypes = Matrix::from_rows(&[&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]]);
        let f0 = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(p.consistency_error(&f0), vec![1.5, 0.0]);
        // shifting E_y by δ shifts C_y by δ
        p.energy_label.layers[2].bias = Matrix::from_rows(&[&[0.75, 0.25]]);
        assert_eq!(p.consistency_error(&f0), vec![1.75, 0.25]);
    }

    #[test]
    fn prediction_rule() {
        let p = predict_from_consistency(&[0.1, 2.0]);
        assert_eq!(p.class, 0);
        let want = (-0.1f64).exp() / ((-0.1f64).exp() + (-2.0f64).exp());
        assert!((p.confidence - want).abs() < 1e-12);
        assert!((p.confidence - 0.8699).abs() < 1e-4);

        let u = predict_from_consistency(&[3.0; 4]);
        assert!((u.confidence - 0.25).abs() < 1e-15);

        let shifted = predict_from_consistency(&[10.1, 12.0]);
        assert_eq!(shifted.class, p.class);
        for (a, b) in shifted.probs.iter().zip(&p.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_examples() {
        let arch = ArchConfig {
            in_channels: 2,
            kernel: 3,
            conv_channels: vec![4],
            ..tiny_arch()
        };
        assert_eq!(estimate_cost(&arch, 10).conv_macs, 240);
        let flat = ArchConfig {
            conv_channels: vec![],
            ..arch
        };
        let c = estimate_cost(&flat, 10);
        assert_eq!(c.conv_macs, 0);
        let (b, d, h) = (4, 3, 3);
        assert_eq!(c.time_macs, 2 * b + 2 * b * d + 2 * (d * h + h * h) + h * (2 + 2));
    }

    #[test]
    fn cost_param_count_matches_tensors() {
        let arch = tiny_arch();
        let p = init_params(&arch, &mut Rng::new(0)).unwrap();
        let counted: usize = p
            .tensors()
            .iter()
            .filter(|(n, _)| {
                !(n.starts_with("prototypes") || n.starts_with("variance") || n.starts_with("discriminator"))
            })
            .map(|(_, m)| m.len())
            .sum();
        assert_eq!(estimate_cost(&arch, 12).param_count, counted as u64);
        assert_eq!(estimate_cost(&arch, 12).activation_count, 12 * 2 + 4 + 4 + 4);
    }

    #[test]
    fn params_round_trip() {
        let p = init_params(&ArchConfig::default(), &mut Rng::new(4)).unwrap();
        let bytes = params_to_bytes(&p);
        assert!(bytes.starts_with(b"ERIS-PARAMS,1,"));
        let back = params_from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, p);
        assert!(params_from_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).is_err());
        let flat = ArchConfig {
            conv_channels: vec![],
            ..tiny_arch()
        };
        let q = init_params(&flat, &mut Rng::new(4)).unwrap();
        assert_eq!(params_from_bytes(&params_to_bytes(&q), Path::new("mem")).unwrap(), q);
    }

    #[test]
    fn arch_validation() {
        let mut a = ArchConfig::default();
        a.kernel = 4;
        assert!(a.validate().is_err());
        let mut a = ArchConfig::default();
        a.projection_dim = 65;
        assert!(a.validate().is_err());
    }
}
