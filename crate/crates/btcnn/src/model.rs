//! The 18-layer network: four conv/ReLU/pool stages (8, 16, 32, 64 filters,
//! 3x3 kernels, stride 1, padding 1), a 64-wide hidden dense layer with ReLU,
//! a dense readout to 3 classes, softmax, and the classification output.
//!
//! Named-layer count: input + 4·(conv, relu, maxpool) + dense + relu + dense
//! + softmax + output = 18. Each 2x2 pool halves the spatial side, so an
//! input of side N flattens to (N/16)²·64 features; N must be divisible
//! by 16.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu, relu_backward, ConvParams, DenseParams, PoolMap,
};
use crate::rng::{splitmix64, Rng};
use crate::tensor::{Tensor, TensorError};

pub const CONV_FILTERS: [usize; 4] = [8, 16, 32, 64];
pub const HIDDEN_WIDTH: usize = 64;
pub const KERNEL: usize = 3;
pub const CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input side {0} is not divisible by 16")]
    NotDivisibleBy16(usize),
    #[error("forward pass cache does not match these parameters: {0}")]
    StaleCache(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One named layer of the stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool,
    Dense {
        out: usize,
    },
    Softmax,
    Output,
}

/// The concrete layer stack for one input side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_side: usize,
    pub classes: usize,
    pub layers: Vec<LayerKind>,
}

impl ArchitectureSpec {
    /// Feature count after the conv stages: (N/16)² spatial cells times the
    /// last filter bank.
    pub fn flatten_dim(&self) -> usize {
        let side = self.input_side / 16;
        side * side * CONV_FILTERS[3]
    }
}

/// Builds the canonical stack for a given input side.
pub fn build_architecture(input_side: usize, classes: usize) -> Result<ArchitectureSpec, ModelError> {
    if input_side == 0 || input_side % 16 != 0 {
        return Err(ModelError::NotDivisibleBy16(input_side));
    }
    let mut layers = vec![LayerKind::Input];
    for filters in CONV_FILTERS {
        layers.push(LayerKind::Conv {
            filters,
            kernel: KERNEL,
            stride: 1,
            padding: 1,
        });
        layers.push(LayerKind::Relu);
        layers.push(LayerKind::MaxPool);
    }
    layers.push(LayerKind::Dense { out: HIDDEN_WIDTH });
    layers.push(LayerKind::Relu);
    layers.push(LayerKind::Dense { out: classes });
    layers.push(LayerKind::Softmax);
    layers.push(LayerKind::Output);
    Ok(ArchitectureSpec {
        input_side,
        classes,
        layers,
    })
}

/// Total trainable scalar count (weights plus biases).
pub fn param_count(spec: &ArchitectureSpec) -> usize {
    let mut total = 0;
    let mut channels = 1usize;
    let mut features = 0usize;
    for layer in &spec.layers {
        match *layer {
            LayerKind::Conv { filters, kernel, .. } => {
                total += filters * channels * kernel * kernel + filters;
                channels = filters;
            }
            LayerKind::Dense { out } => {
                let fan_in = if features == 0 { spec.flatten_dim() } else { features };
                total += out * fan_in + out;
                features = out;
            }
            _ => {}
        }
    }
    total
}

/// All trainable parameters, tied to the spec they were built for.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub spec: ArchitectureSpec,
    pub convs: Vec<ConvParams>,
    pub denses: Vec<DenseParams>,
}

/// Parameter gradients, congruent with `ModelParams` tensor for tensor.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    /// (grad_w, grad_b) per conv layer.
    pub convs: Vec<(Tensor, Tensor)>,
    /// (grad_w, grad_b) per dense layer.
    pub denses: Vec<(Tensor, Tensor)>,
}

impl ModelParams {
    /// Parameter tensors in architecture order: each conv's weights then
    /// bias, then each dense's weights then bias. This is also the
    /// checkpoint payload order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.convs
            .iter()
            .flat_map(|c| [&c.weights, &c.bias])
            .chain(self.denses.iter().flat_map(|d| [&d.weights, &d.bias]))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.weights, &mut c.bias])
            .chain(
                self.denses
                    .iter_mut()
                    .flat_map(|d| [&mut d.weights, &mut d.bias]),
            )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(param_count(&self.spec));
        for t in self.tensors() {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    /// Rebuilds parameters from a flat payload in architecture order.
    pub fn from_flat(spec: &ArchitectureSpec, flat: &[f64]) -> Result<ModelParams, ModelError> {
        if flat.len() != param_count(spec) {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch(format!(
                "flat payload has {} values, architecture needs {}",
                flat.len(),
                param_count(spec)
            ))));
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &flat[pos..pos + n];
            pos += n;
            s.to_vec()
        };
        let mut convs = Vec::new();
        let mut denses = Vec::new();
        let mut channels = 1usize;
        let mut features = 0usize;
        for layer in &spec.layers {
            match *layer {
                LayerKind::Conv { filters, kernel, stride, padding } => {
                    let w = Tensor::new(
                        vec![filters, channels, kernel, kernel],
                        take(filters * channels * kernel * kernel),
                    )?;
                    let b = Tensor::new(vec![filters], take(filters))?;
                    convs.push(ConvParams::new(w, b, stride, padding)?);
                    channels = filters;
                }
                LayerKind::Dense { out } => {
                    let fan_in = if features == 0 { spec.flatten_dim() } else { features };
                    let w = Tensor::new(vec![out, fan_in], take(out * fan_in))?;
                    let b = Tensor::new(vec![out], take(out))?;
                    denses.push(DenseParams::new(w, b)?);
                    features = out;
                }
                _ => {}
            }
        }
        Ok(ModelParams {
            spec: spec.clone(),
            convs,
            denses,
        })
    }

    pub fn apply_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        *self = ModelParams::from_flat(&self.spec.clone(), flat)?;
        Ok(())
    }
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> ModelGrads {
        ModelGrads {
            convs: params
                .convs
                .iter()
                .map(|c| {
                    (
                        Tensor::zeros(c.weights.shape().to_vec()),
                        Tensor::zeros(c.bias.shape().to_vec()),
                    )
                })
                .collect(),
            denses: params
                .denses
                .iter()
                .map(|d| {
                    (
                        Tensor::zeros(d.weights.shape().to_vec()),
                        Tensor::zeros(d.bias.shape().to_vec()),
                    )
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.convs
            .iter()
            .flat_map(|&(ref w, ref b)| [w, b])
            .chain(self.denses.iter().flat_map(|&(ref w, ref b)| [w, b]))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.convs
            .iter_mut()
            .flat_map(|(w, b)| [w, b])
            .chain(self.denses.iter_mut().flat_map(|(w, b)| [w, b]))
    }

    /// Accumulates `other`, elementwise, in a fixed tensor order.
    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (mine, theirs) in self.tensors_mut().zip(other.tensors()) {
            for (a, b) in mine.data_mut().iter_mut().zip(theirs.data()) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for t in self.tensors() {
            flat.extend_from_slice(t.data());
        }
        flat
    }
}

/// He-initialized parameters: weights ~ Normal(0, 2/fan_in), biases zero.
/// fan_in is K·K·C for conv layers and the input width for dense layers.
pub fn init_params(spec: &ArchitectureSpec, seed: u64) -> ModelParams {
    let mut rng = Rng::new(splitmix64(seed));
    let mut convs = Vec::new();
    let mut denses = Vec::new();
    let mut channels = 1usize;
    let mut features = 0usize;
    for layer in &spec.layers {
        match *layer {
            LayerKind::Conv { filters, kernel, stride, padding } => {
                let fan_in = kernel * kernel * channels;
                let std = (2.0 / fan_in as f64).sqrt();
                let w = Tensor::from_fn(vec![filters, channels, kernel, kernel], |_| {
                    std * rng.next_normal()
                });
                let b = Tensor::zeros(vec![filters]);
                convs.push(ConvParams::new(w, b, stride, padding).expect("valid conv shape"));
                channels = filters;
            }
            LayerKind::Dense { out } => {
                let fan_in = if features == 0 { spec.flatten_dim() } else { features };
                let std = (2.0 / fan_in as f64).sqrt();
                let w = Tensor::from_fn(vec![out, fan_in], |_| std * rng.next_normal());
                let b = Tensor::zeros(vec![out]);
                denses.push(DenseParams::new(w, b).expect("valid dense shape"));
                features = out;
            }
            _ => {}
        }
    }
    ModelParams {
        spec: spec.clone(),
        convs,
        denses,
    }
}

/// Everything backward needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    conv_in: Vec<Tensor>,
    conv_out: Vec<Tensor>,
    pool_maps: Vec<PoolMap>,
    dense_in: Vec<Tensor>,
    dense_pre: Tensor,
    logits: Tensor,
    probs: Tensor,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

fn stable_softmax(logits: &Tensor) -> Tensor {
    let m = logits.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps: Vec<f64> = logits.data().iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    Tensor::new(vec![logits.numel()], exps).expect("softmax shape")
}

/// Full forward pass; returns class probabilities and the cache backward
/// consumes.
pub fn forward(params: &ModelParams, x: &Tensor) -> Result<(Tensor, ForwardCache), ModelError> {
    let n = params.spec.input_side;
    if x.shape() != [1, n, n] {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch(format!(
            "input must be [1][{n}][{n}], got {:?}",
            x.shape()
        ))));
    }
    let mut conv_in = Vec::with_capacity(params.convs.len());
    let mut conv_out = Vec::with_capacity(params.convs.len());
    let mut pool_maps = Vec::with_capacity(params.convs.len());

    let mut cur = x.clone();
    for conv in &params.convs {
        let z = conv2d_forward(&cur, conv)?;
        conv_in.push(cur);
        let a = relu(&z);
        conv_out.push(z);
        let (pooled, map) = maxpool2x2_forward(&a)?;
        pool_maps.push(map);
        cur = pooled;
    }

    let flat_dim = params.spec.flatten_dim();
    let flat = Tensor::new(vec![flat_dim], cur.into_data())?;

    let dense_pre = dense_forward(&flat, &params.denses[0])?;
    let hidden = relu(&dense_pre);
    let logits = dense_forward(&hidden, &params.denses[1])?;
    let probs = stable_softmax(&logits);

    Ok((
        probs.clone(),
        ForwardCache {
            conv_in,
            conv_out,
            pool_maps,
            dense_in: vec![flat, hidden],
            dense_pre,
            logits,
            probs,
        },
    ))
}

/// Exact cross-entropy gradient for every parameter, driven by a forward
/// cache and the true class index.
pub fn backward(params: &ModelParams, cache: &ForwardCache, target: usize) -> Result<ModelGrads, ModelError> {
    let classes = params.spec.classes;
    if target >= classes {
        return Err(ModelError::Tensor(TensorError::TargetOutOfRange {
            target,
            classes,
        }));
    }
    let n = params.spec.input_side;
    if cache.conv_in.len() != params.convs.len()
        || cache.dense_in.len() != params.denses.len()
        || cache.conv_in[0].shape() != [1, n, n]
        || cache.dense_in[0].numel() != params.spec.flatten_dim()
        || cache.probs.numel() != classes
    {
        return Err(ModelError::StaleCache(format!(
            "cache built for input {:?} / {} features, params expect [1, {n}, {n}] / {}",
            cache.conv_in[0].shape(),
            cache.dense_in[0].numel(),
            params.spec.flatten_dim()
        )));
    }

    // softmax + cross-entropy: grad_logits = probs − onehot(target)
    let mut grad_logits = cache.probs.clone();
    grad_logits.data_mut()[target] -= 1.0;

    let g2 = dense_backward(&cache.dense_in[1], &params.denses[1], &grad_logits)?;
    let grad_hidden = relu_backward(&cache.dense_pre, &g2.grad_x)?;
    let g1 = dense_backward(&cache.dense_in[0], &params.denses[0], &grad_hidden)?;

    let side16 = n / 16;
    let mut grad_spatial = Tensor::new(vec![CONV_FILTERS[3], side16, side16], g1.grad_x.into_data())?;

    let mut conv_grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(params.convs.len());
    for k in (0..params.convs.len()).rev() {
        let grad_pool_in = maxpool2x2_backward(&cache.pool_maps[k], &grad_spatial)?;
        let grad_conv_out = relu_backward(&cache.conv_out[k], &grad_pool_in)?;
        let g = conv2d_backward(&cache.conv_in[k], &params.convs[k], &grad_conv_out, k > 0)?;
        conv_grads.push((g.grad_w, g.grad_b));
        grad_spatial = g.grad_x;
    }
    conv_grads.reverse();

    Ok(ModelGrads {
        convs: conv_grads,
        denses: vec![(g1.grad_w, g1.grad_b), (g2.grad_w, g2.grad_b)],
    })
}
