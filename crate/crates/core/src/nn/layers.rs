use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};

/// Offset added to the temporal standard deviation (and to the batch variance).
pub const NORM_EPSILON: f64 = 1e-5;

/// Weight of the newest batch in the running statistics of batch normalization.
pub const BN_MOMENTUM: f64 = 0.1;

/// Layer kinds a network is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense(usize),
    Relu,
    BatchNorm,
    TemporalNorm,
    /// Decoder mirror of an encoder `Dense(units)`: consumes `units` inputs and
    /// restores the paired layer's input shape.
    DenseReverse(usize),
    BatchNormReverse,
    TemporalNormReverse,
}

impl LayerSpec {
    pub fn is_reverse(&self) -> bool {
        matches!(
            self,
            LayerSpec::DenseReverse(_) | LayerSpec::BatchNormReverse | LayerSpec::TemporalNormReverse
        )
    }

    pub fn label(&self) -> String {
        match self {
            LayerSpec::Dense(n) => format!("Dense({n})"),
            LayerSpec::Relu => "ReLU".into(),
            LayerSpec::BatchNorm => "BN".into(),
            LayerSpec::TemporalNorm => "BTN".into(),
            LayerSpec::DenseReverse(n) => format!("DenseReverse({n})"),
            LayerSpec::BatchNormReverse => "BNReverse".into(),
            LayerSpec::TemporalNormReverse => "BTNReverse".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    /// Statistics over batch (and time) per feature.
    Batch,
    /// Statistics over the time axis per sample and feature.
    Temporal,
}

/// Maps a flat element index to its statistics group.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupLayout {
    kind: NormKind,
    steps: usize,
    features: usize,
}

impl GroupLayout {
    pub(crate) fn new(kind: NormKind, shape: &[usize]) -> Result<Self> {
        let features = *shape.last().unwrap_or(&0);
        match kind {
            NormKind::Temporal => {
                if shape.len() != 3 {
                    return Err(Error::Config(format!(
                        "temporal normalization needs [batch, time, features] input, got {shape:?}"
                    )));
                }
                if shape[1] < 2 {
                    return Err(Error::Config(
                        "temporal normalization needs at least 2 time steps".into(),
                    ));
                }
                Ok(Self {
                    kind,
                    steps: shape[1],
                    features,
                })
            }
            NormKind::Batch => {
                if shape.len() < 2 || features == 0 {
                    return Err(Error::Config(format!(
                        "batch normalization needs [batch, .., features] input, got {shape:?}"
                    )));
                }
                Ok(Self {
                    kind,
                    steps: 0,
                    features,
                })
            }
        }
    }

    #[inline]
    fn group(&self, idx: usize) -> usize {
        match self.kind {
            NormKind::Temporal => (idx / (self.steps * self.features)) * self.features + idx % self.features,
            NormKind::Batch => idx % self.features,
        }
    }

    fn groups(&self, len: usize) -> usize {
        match self.kind {
            NormKind::Temporal => len / self.steps,
            NormKind::Batch => self.features,
        }
    }

    fn members(&self, len: usize) -> usize {
        match self.kind {
            NormKind::Temporal => self.steps,
            NormKind::Batch => len / self.features,
        }
    }
}

/// Statistics a normalization layer used on one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Divisor applied to centred values: `std + eps` (temporal) or `sqrt(var + eps)` (batch).
    pub scale: Vec<f64>,
    /// Spread whose derivative drives the scale: `std` (temporal) or `scale` itself (batch).
    pub spread: Vec<f64>,
    /// Population variance per group.
    pub variance: Vec<f64>,
    /// Whether the statistics were computed from this input (false for frozen running stats).
    pub from_input: bool,
}

impl Moments {
    fn compute(kind: NormKind, layout: &GroupLayout, x: &[f64], eps: f64) -> Self {
        let groups = layout.groups(x.len());
        let count = layout.members(x.len()) as f64;
        let mut mean = vec![0.0; groups];
        for (idx, v) in x.iter().enumerate() {
            mean[layout.group(idx)] += v;
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut variance = vec![0.0; groups];
        for (idx, v) in x.iter().enumerate() {
            let g = layout.group(idx);
            let d = v - mean[g];
            variance[g] += d * d;
        }
        variance.iter_mut().for_each(|s| *s /= count);
        let (scale, spread) = match kind {
            NormKind::Temporal => {
                let std: Vec<f64> = variance.iter().map(|v| v.sqrt()).collect();
                (std.iter().map(|s| s + eps).collect(), std)
            }
            NormKind::Batch => {
                let u: Vec<f64> = variance.iter().map(|v| (v + eps).sqrt()).collect();
                (u.clone(), u)
            }
        };
        Self {
            mean,
            scale,
            spread,
            variance,
            from_input: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
    /// Output shape excluding the batch dimension.
    pub out_shape: Vec<usize>,
    pub reverse: bool,
    #[serde(skip)]
    pub(crate) grad_weights: Tensor,
    #[serde(skip)]
    pub(crate) grad_bias: Tensor,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor, out_shape: Vec<usize>, reverse: bool) -> Result<Self> {
        let [din, dout] = weights.shape() else {
            return Err(Error::shape("dense weights", &[0, 0], weights.shape()));
        };
        if bias.shape() != [*dout] || out_shape.iter().product::<usize>() != *dout || *din == 0 {
            return Err(Error::shape("dense bias", &[*dout], bias.shape()));
        }
        let mut layer = Self {
            weights,
            bias,
            out_shape,
            reverse,
            grad_weights: Tensor::default(),
            grad_bias: Tensor::default(),
        };
        layer.reset_grads();
        Ok(layer)
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(din: usize, out_shape: Vec<usize>, reverse: bool, rng: &mut impl Rng) -> Self {
        let dout: usize = out_shape.iter().product();
        let limit = (6.0 / (din + dout) as f64).sqrt();
        let values = (0..din * dout).map(|_| rng.random_range(-limit..limit)).collect();
        let weights = Tensor::new(vec![din, dout], values).expect("sized above");
        Self::new(weights, Tensor::zeros(&[dout]), out_shape, reverse).expect("sized above")
    }

    pub fn in_width(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_width(&self) -> usize {
        self.weights.shape()[1]
    }

    pub(crate) fn reset_grads(&mut self) {
        self.grad_weights = Tensor::zeros(self.weights.shape());
        self.grad_bias = Tensor::zeros(self.bias.shape());
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (din, dout) = (self.in_width(), self.out_width());
        if input.row_width() != din {
            return Err(Error::shape("dense input", &[din], &[input.row_width()]));
        }
        let batch = input.rows();
        let mut out = vec![0.0; batch * dout];
        matmul(batch, din, dout, input.values(), self.weights.values(), &mut out);
        let bias = self.bias.values();
        for row in out.chunks_exact_mut(dout) {
            row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.out_shape);
        Tensor::new(shape, out)
    }

    fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Tensor {
        let (din, dout) = (self.in_width(), self.out_width());
        let batch = input.rows();
        matmul_at_b(
            din,
            batch,
            dout,
            input.values(),
            grad_out.values(),
            self.grad_weights.values_mut(),
        );
        let gb = self.grad_bias.values_mut();
        gb.fill(0.0);
        for row in grad_out.values().chunks_exact(dout) {
            gb.iter_mut().zip(row).for_each(|(g, r)| *g += r);
        }
        let mut grad_in = vec![0.0; batch * din];
        matmul_a_bt(batch, dout, din, grad_out.values(), self.weights.values(), &mut grad_in);
        Tensor::new(input.shape().to_vec(), grad_in).expect("input-shaped")
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let values = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), values).expect("same shape")
}

/// Batch normalization or batch temporal normalization with a trainable affine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub epsilon: f64,
    /// Running statistics (batch kind only).
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub updates: u64,
    #[serde(skip)]
    pub(crate) grad_gamma: Tensor,
    #[serde(skip)]
    pub(crate) grad_beta: Tensor,
}

impl Norm {
    pub fn new(kind: NormKind, features: usize) -> Self {
        let mut norm = Self {
            kind,
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            epsilon: NORM_EPSILON,
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            updates: 0,
            grad_gamma: Tensor::default(),
            grad_beta: Tensor::default(),
        };
        norm.reset_grads();
        norm
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn reset_grads(&mut self) {
        self.grad_gamma = Tensor::zeros(self.gamma.shape());
        self.grad_beta = Tensor::zeros(self.beta.shape());
    }

    fn layout(&self, input: &Tensor) -> Result<GroupLayout> {
        let layout = GroupLayout::new(self.kind, input.shape())?;
        if layout.features != self.features() {
            return Err(Error::shape(
                "normalization features",
                &[self.features()],
                &[layout.features],
            ));
        }
        Ok(layout)
    }

    /// Statistics for this input under `mode`.
    pub fn moments(&self, input: &Tensor, mode: Mode) -> Result<Moments> {
        let layout = self.layout(input)?;
        match (self.kind, mode) {
            (NormKind::Batch, Mode::Infer) => {
                if self.updates == 0 {
                    return Err(Error::Config(
                        "batch normalization used for inference before any training update".into(),
                    ));
                }
                let variance = self.running_var.values().to_vec();
                let scale: Vec<f64> = variance.iter().map(|v| (v + self.epsilon).sqrt()).collect();
                Ok(Moments {
                    mean: self.running_mean.values().to_vec(),
                    spread: scale.clone(),
                    scale,
                    variance,
                    from_input: false,
                })
            }
            _ => Ok(Moments::compute(self.kind, &layout, input.values(), self.epsilon)),
        }
    }

    /// Normalizes with the given statistics and applies the affine.
    pub fn apply(&self, input: &Tensor, moments: &Moments) -> Result<(Tensor, Vec<f64>)> {
        let layout = self.layout(input)?;
        let f = self.features();
        let (gamma, beta) = (self.gamma.values(), self.beta.values());
        let mut normalized = Vec::with_capacity(input.len());
        let mut out = Vec::with_capacity(input.len());
        for (idx, &x) in input.values().iter().enumerate() {
            let g = layout.group(idx);
            let xhat = (x - moments.mean[g]) / moments.scale[g];
            normalized.push(xhat);
            out.push(gamma[idx % f] * xhat + beta[idx % f]);
        }
        Ok((Tensor::new(input.shape().to_vec(), out)?, normalized))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Moments)> {
        let moments = self.moments(input, mode)?;
        let (out, _) = self.apply(input, &moments)?;
        Ok((out, moments))
    }

    pub(crate) fn update_running(&mut self, moments: &Moments) {
        if self.kind != NormKind::Batch || !moments.from_input {
            return;
        }
        let weight = BN_MOMENTUM.max(1.0 / (self.updates + 1) as f64);
        for (r, m) in self.running_mean.values_mut().iter_mut().zip(&moments.mean) {
            *r += weight * (m - *r);
        }
        for (r, v) in self.running_var.values_mut().iter_mut().zip(&moments.variance) {
            *r += weight * (v - *r);
        }
        self.updates += 1;
    }

    /// `extra` carries gradients w.r.t. the moments flowing back from a paired reverse layer.
    fn backward(
        &mut self,
        input: &Tensor,
        normalized: &[f64],
        moments: &Moments,
        grad_out: &Tensor,
        extra: Option<&MomentGrads>,
    ) -> Result<Tensor> {
        let layout = self.layout(input)?;
        let f = self.features();
        let gamma = self.gamma.values();
        let groups = moments.mean.len();
        let count = layout.members(input.len()) as f64;
        let gg = self.grad_gamma.values_mut();
        let gb = self.grad_beta.values_mut();
        gg.fill(0.0);
        gb.fill(0.0);

        let mut dxhat = Vec::with_capacity(input.len());
        for (idx, &dy) in grad_out.values().iter().enumerate() {
            gg[idx % f] += dy * normalized[idx];
            gb[idx % f] += dy;
            dxhat.push(dy * gamma[idx % f]);
        }

        if !moments.from_input {
            let values = dxhat
                .iter()
                .enumerate()
                .map(|(idx, d)| d / moments.scale[layout.group(idx)])
                .collect();
            return Tensor::new(input.shape().to_vec(), values);
        }

        let (mut dmean, mut dscale) = match extra {
            Some(e) => (e.mean.clone(), e.scale.clone()),
            None => (vec![0.0; groups], vec![0.0; groups]),
        };
        for (idx, d) in dxhat.iter().enumerate() {
            let g = layout.group(idx);
            dmean[g] -= d / moments.scale[g];
            dscale[g] -= d * normalized[idx] / moments.scale[g];
        }
        let values = input
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let g = layout.group(idx);
                let centred = x - moments.mean[g];
                let via_spread = if moments.spread[g] > 0.0 {
                    dscale[g] * centred / (count * moments.spread[g])
                } else {
                    0.0
                };
                dxhat[idx] / moments.scale[g] + dmean[g] / count + via_spread
            })
            .collect();
        Tensor::new(input.shape().to_vec(), values)
    }
}

/// Gradients of the loss w.r.t. a normalization layer's per-group mean and scale.
#[derive(Debug, Clone)]
pub(crate) struct MomentGrads {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Decoder mirror of a normalization layer: own affine, then denormalization
/// with the statistics the paired layer used in the same pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormReverse {
    pub kind: NormKind,
    /// Index of the paired normalization layer.
    pub pair: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    /// Output shape excluding batch (the paired layer's input shape).
    pub out_shape: Vec<usize>,
    #[serde(skip)]
    pub(crate) grad_gamma: Tensor,
    #[serde(skip)]
    pub(crate) grad_beta: Tensor,
}

impl NormReverse {
    pub fn new(kind: NormKind, pair: usize, features: usize, out_shape: Vec<usize>) -> Self {
        let mut layer = Self {
            kind,
            pair,
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            out_shape,
            grad_gamma: Tensor::default(),
            grad_beta: Tensor::default(),
        };
        layer.reset_grads();
        layer
    }

    pub(crate) fn reset_grads(&mut self) {
        self.grad_gamma = Tensor::zeros(self.gamma.shape());
        self.grad_beta = Tensor::zeros(self.beta.shape());
    }

    fn reshape_input(&self, input: &Tensor) -> Result<Tensor> {
        let mut shape = vec![input.rows()];
        shape.extend_from_slice(&self.out_shape);
        input.clone().reshape(&shape)
    }

    pub fn forward(&self, input: &Tensor, paired: &Moments) -> Result<Tensor> {
        let input = self.reshape_input(input)?;
        let layout = GroupLayout::new(self.kind, input.shape())?;
        let f = self.gamma.len();
        if layout.features != f || layout.groups(input.len()) != paired.mean.len() {
            return Err(Error::Internal(format!(
                "reverse normalization does not match the statistics of layer {}",
                self.pair
            )));
        }
        let (gamma, beta) = (self.gamma.values(), self.beta.values());
        let values = input
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &h)| {
                let g = layout.group(idx);
                (gamma[idx % f] * h + beta[idx % f]) * paired.scale[g] + paired.mean[g]
            })
            .collect();
        Tensor::new(input.shape().to_vec(), values)
    }

    fn backward(
        &mut self,
        input: &Tensor,
        paired: &Moments,
        grad_out: &Tensor,
    ) -> Result<(Tensor, MomentGrads)> {
        let shaped = self.reshape_input(input)?;
        let layout = GroupLayout::new(self.kind, shaped.shape())?;
        let f = self.gamma.len();
        let groups = paired.mean.len();
        let gamma = self.gamma.values();
        let beta = self.beta.values();
        let gg = self.grad_gamma.values_mut();
        let gb = self.grad_beta.values_mut();
        gg.fill(0.0);
        gb.fill(0.0);
        let mut extra = MomentGrads {
            mean: vec![0.0; groups],
            scale: vec![0.0; groups],
        };
        let mut grad_in = Vec::with_capacity(input.len());
        for (idx, (&h, &dy)) in shaped.values().iter().zip(grad_out.values()).enumerate() {
            let g = layout.group(idx);
            let j = idx % f;
            let u = paired.scale[g];
            gg[j] += dy * h * u;
            gb[j] += dy * u;
            extra.mean[g] += dy;
            extra.scale[g] += dy * (gamma[j] * h + beta[j]);
            grad_in.push(dy * gamma[j] * u);
        }
        Ok((Tensor::new(input.shape().to_vec(), grad_in)?, extra))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Relu,
    Norm(Norm),
    NormReverse(NormReverse),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) if d.reverse => LayerSpec::DenseReverse(d.in_width()),
            Layer::Dense(d) => LayerSpec::Dense(d.out_width()),
            Layer::Relu => LayerSpec::Relu,
            Layer::Norm(n) => match n.kind {
                NormKind::Batch => LayerSpec::BatchNorm,
                NormKind::Temporal => LayerSpec::TemporalNorm,
            },
            Layer::NormReverse(n) => match n.kind {
                NormKind::Batch => LayerSpec::BatchNormReverse,
                NormKind::Temporal => LayerSpec::TemporalNormReverse,
            },
        }
    }

    pub(crate) fn reset_grads(&mut self) {
        match self {
            Layer::Dense(d) => d.reset_grads(),
            Layer::Relu => {}
            Layer::Norm(n) => n.reset_grads(),
            Layer::NormReverse(n) => n.reset_grads(),
        }
    }
}

/// What one layer recorded during a forward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Norm {
        input: Tensor,
        normalized: Vec<f64>,
        moments: Moments,
    },
}

pub(crate) fn layer_backward(
    layer: &mut Layer,
    cache: &LayerCache,
    paired: Option<&Moments>,
    grad_out: &Tensor,
    extra: Option<&MomentGrads>,
) -> Result<(Tensor, Option<MomentGrads>)> {
    match (layer, cache) {
        (Layer::Dense(d), LayerCache::Input(x)) => Ok((d.backward(x, grad_out), None)),
        (Layer::Relu, LayerCache::Input(x)) => Ok((relu_backward(x, grad_out), None)),
        (
            Layer::Norm(n),
            LayerCache::Norm {
                input,
                normalized,
                moments,
            },
        ) => Ok((n.backward(input, normalized, moments, grad_out, extra)?, None)),
        (Layer::NormReverse(r), LayerCache::Input(x)) => {
            let paired = paired.ok_or_else(|| {
                Error::Internal(format!("missing statistics of paired layer {}", r.pair))
            })?;
            let (grad, moments) = r.backward(x, paired, grad_out)?;
            Ok((grad, paired.from_input.then_some(moments)))
        }
        _ => Err(Error::Internal("layer cache does not match layer kind".into())),
    }
}
