use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    layer_backward, relu_forward, Dense, Layer, LayerCache, LayerSpec, Mode, MomentGrads, Moments,
    Norm, NormKind, NormReverse,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A feed-forward stack of layers operating on `[batch, ..input_shape]` tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    #[serde(skip)]
    trace: Option<Trace>,
}

#[derive(Debug, Clone)]
struct Trace {
    caches: Vec<LayerCache>,
    moments: Vec<Option<Moments>>,
}

/// Mutable view of one trainable parameter and its gradient.
pub struct Parameter<'a> {
    pub layer: usize,
    pub name: &'static str,
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
    /// Whether L2 weight decay applies.
    pub decay: bool,
}

impl Network {
    /// Builds a freshly initialized network. Reverse layers pair with the most
    /// recent unpaired layer of the matching kind.
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut dense_stack: Vec<Vec<usize>> = Vec::new();
        let mut norm_stack: Vec<(usize, NormKind, Vec<usize>)> = Vec::new();
        let mut layers = Vec::with_capacity(specs.len());

        for (idx, spec) in specs.iter().enumerate() {
            let width: usize = shape.iter().product();
            let layer = match *spec {
                LayerSpec::Dense(units) => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {idx}: dense layer with 0 units")));
                    }
                    dense_stack.push(shape.clone());
                    Layer::Dense(Dense::init(width, vec![units], false, rng))
                }
                LayerSpec::DenseReverse(units) => {
                    if units != width {
                        return Err(Error::Config(format!(
                            "layer {idx}: DenseReverse({units}) receives {width} inputs"
                        )));
                    }
                    let out_shape = dense_stack.pop().ok_or_else(|| {
                        Error::Config(format!("layer {idx}: DenseReverse without an encoder dense layer"))
                    })?;
                    Layer::Dense(Dense::init(width, out_shape, true, rng))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::BatchNorm | LayerSpec::TemporalNorm => {
                    let kind = if *spec == LayerSpec::BatchNorm {
                        NormKind::Batch
                    } else {
                        NormKind::Temporal
                    };
                    let features = *shape.last().unwrap_or(&0);
                    if kind == NormKind::Temporal && (shape.len() != 2 || shape[0] < 2) {
                        return Err(Error::Config(format!(
                            "layer {idx}: BTN needs a [time >= 2, features] input, got {shape:?}"
                        )));
                    }
                    norm_stack.push((idx, kind, shape.clone()));
                    Layer::Norm(Norm::new(kind, features))
                }
                LayerSpec::BatchNormReverse | LayerSpec::TemporalNormReverse => {
                    let kind = if *spec == LayerSpec::BatchNormReverse {
                        NormKind::Batch
                    } else {
                        NormKind::Temporal
                    };
                    let (pair, pair_kind, pair_shape) = norm_stack.pop().ok_or_else(|| {
                        Error::Config(format!("layer {idx}: {} has no paired encoder layer", spec.label()))
                    })?;
                    if pair_kind != kind {
                        return Err(Error::Config(format!(
                            "layer {idx}: {} pairs with a different normalization at layer {pair}",
                            spec.label()
                        )));
                    }
                    if pair_shape.iter().product::<usize>() != width {
                        return Err(Error::Config(format!(
                            "layer {idx}: {} receives {width} values but layer {pair} normalized {pair_shape:?}",
                            spec.label()
                        )));
                    }
                    let features = *pair_shape.last().unwrap_or(&0);
                    Layer::NormReverse(NormReverse::new(kind, pair, features, pair_shape))
                }
            };
            shape = output_shape_of(&layer, &shape);
            layers.push(layer);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            trace: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .fold(self.input_shape.clone(), |shape, layer| output_shape_of(layer, &shape))
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.trace = None;
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Re-allocates gradient buffers and checks parameter shapes, e.g. after deserialization.
    pub fn prepare(&mut self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let width: usize = shape.iter().product();
            let ok = match layer {
                Layer::Dense(d) => {
                    d.in_width() == width
                        && d.bias.len() == d.out_width()
                        && d.out_shape.iter().product::<usize>() == d.out_width()
                }
                Layer::Relu => true,
                Layer::Norm(n) => {
                    let f = n.features();
                    shape.last() == Some(&f)
                        && n.beta.len() == f
                        && n.running_mean.len() == f
                        && n.running_var.len() == f
                        && n.epsilon > 0.0
                }
                Layer::NormReverse(r) => {
                    r.pair < idx
                        && r.out_shape.iter().product::<usize>() == width
                        && r.out_shape.last() == Some(&r.gamma.len())
                        && r.beta.len() == r.gamma.len()
                }
            };
            if !ok {
                return Err(Error::ModelLoad(format!(
                    "layer {idx} ({}) has inconsistent parameter shapes",
                    layer.spec().label()
                )));
            }
            layer.reset_grads();
            shape = output_shape_of(layer, &shape);
        }
        self.trace = None;
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<Tensor> {
        let width: usize = self.input_shape.iter().product();
        if input.row_width() != width || input.shape().is_empty() {
            let mut expected = vec![input.rows()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network input", &expected, input.shape()));
        }
        let mut shape = vec![input.rows()];
        shape.extend_from_slice(&self.input_shape);
        input.clone().reshape(&shape)
    }

    fn run(&self, input: &Tensor, mode: Mode, record: bool) -> Result<(Tensor, Option<Trace>)> {
        let mut x = self.check_input(input)?;
        let mut moments: Vec<Option<Moments>> = vec![None; self.layers.len()];
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for (idx, layer) in self.layers.iter().enumerate() {
            let out = match layer {
                Layer::Dense(d) => d.forward(&x)?,
                Layer::Relu => relu_forward(&x),
                Layer::Norm(n) => {
                    let m = n.moments(&x, mode)?;
                    let (out, normalized) = n.apply(&x, &m)?;
                    if record {
                        caches.push(LayerCache::Norm {
                            input: x,
                            normalized,
                            moments: m.clone(),
                        });
                    }
                    moments[idx] = Some(m);
                    x = out;
                    continue;
                }
                Layer::NormReverse(r) => {
                    let paired = moments
                        .get(r.pair)
                        .and_then(Option::as_ref)
                        .ok_or_else(|| Error::Internal(format!("layer {idx}: paired statistics missing")))?;
                    r.forward(&x, paired)?
                }
            };
            if record {
                caches.push(LayerCache::Input(x));
            }
            x = out;
        }
        let trace = record.then_some(Trace { caches, moments });
        Ok((x, trace))
    }

    /// Pure forward pass; safe to call concurrently on a shared network.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.run(input, mode, false)?.0)
    }

    /// Forward pass that records activations for a following [`Network::backward`].
    pub fn forward_recorded(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (out, trace) = self.run(input, mode, true)?;
        self.trace = trace;
        Ok(out)
    }

    /// Training-mode recorded pass that also advances batch-norm running statistics.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.forward_recorded(input, Mode::Train)?;
        let trace = self.trace.as_ref().expect("just recorded");
        for (layer, m) in self.layers.iter_mut().zip(&trace.moments) {
            if let (Layer::Norm(n), Some(m)) = (layer, m) {
                n.update_running(m);
            }
        }
        Ok(out)
    }

    /// Back-propagates `grad_output` through the last recorded pass, storing
    /// parameter gradients and returning the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::Internal("backward called without a recorded forward pass".into()))?;
        let mut out_shape = vec![grad_output.rows()];
        out_shape.extend(self.output_shape());
        let mut grad = grad_output.clone().reshape(&out_shape)?;
        let mut extras: Vec<Option<MomentGrads>> = vec![None; self.layers.len()];
        for idx in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[idx];
            let paired = match layer {
                Layer::NormReverse(r) => trace.moments[r.pair].as_ref(),
                _ => None,
            };
            let extra = extras[idx].take();
            let (g, moment_grads) =
                layer_backward(layer, &trace.caches[idx], paired, &grad, extra.as_ref())?;
            if let (Some(mg), Layer::NormReverse(r)) = (moment_grads, &self.layers[idx]) {
                extras[r.pair] = Some(mg);
            }
            grad = g;
        }
        Ok(grad)
    }

    pub fn parameters_mut(&mut self) -> Vec<Parameter<'_>> {
        let mut params = Vec::new();
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    params.push(Parameter {
                        layer: idx,
                        name: "weights",
                        value: &mut d.weights,
                        grad: &mut d.grad_weights,
                        decay: true,
                    });
                    params.push(Parameter {
                        layer: idx,
                        name: "bias",
                        value: &mut d.bias,
                        grad: &mut d.grad_bias,
                        decay: false,
                    });
                }
                Layer::Relu => {}
                Layer::Norm(n) => {
                    params.push(Parameter {
                        layer: idx,
                        name: "gamma",
                        value: &mut n.gamma,
                        grad: &mut n.grad_gamma,
                        decay: false,
                    });
                    params.push(Parameter {
                        layer: idx,
                        name: "beta",
                        value: &mut n.beta,
                        grad: &mut n.grad_beta,
                        decay: false,
                    });
                }
                Layer::NormReverse(r) => {
                    params.push(Parameter {
                        layer: idx,
                        name: "gamma",
                        value: &mut r.gamma,
                        grad: &mut r.grad_gamma,
                        decay: false,
                    });
                    params.push(Parameter {
                        layer: idx,
                        name: "beta",
                        value: &mut r.beta,
                        grad: &mut r.grad_beta,
                        decay: false,
                    });
                }
            }
        }
        params
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                Layer::Relu => 0,
                Layer::Norm(n) => 2 * n.features(),
                Layer::NormReverse(r) => 2 * r.gamma.len(),
            })
            .sum()
    }

    /// Σ‖W‖² over dense weight matrices.
    pub fn weight_penalty(&self) -> f64 {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense(d) => d.weights.sum_squares(),
                _ => 0.0,
            })
            .sum()
    }
}

fn output_shape_of(layer: &Layer, input: &[usize]) -> Vec<usize> {
    match layer {
        Layer::Dense(d) => d.out_shape.clone(),
        Layer::Relu | Layer::Norm(_) => input.to_vec(),
        Layer::NormReverse(r) => r.out_shape.clone(),
    }
}
