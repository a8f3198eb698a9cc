//! Model assembly from architecture descriptors and whole-network
//! forward/backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epc::Cluster;
use crate::error::{Error, Result};
use crate::gyrovector::BallConfig;
use crate::nn::arch::{ArchDescriptor, LayerSpec, PoolKind};
use crate::nn::layers::{
    AvgPool, BatchNorm, BinaryConv, BinaryDense, ConvFull, ConvGeom, DenseFull, Flatten,
    ForwardMode, Hardtanh, Layer, WeightParam,
};
use crate::nn::tensor::Tensor;

/// How binarized layers parametrize their weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// Trainable cluster of `t` basepoints with per-layer selection.
    Epc,
    /// Single fixed basepoint at the origin (the plain exponential map).
    ExpMap,
    /// No parametrization: weights are binarized straight from the latent
    /// vector, clip bound 1.
    PlainBnn,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub mode: ParamMode,
    pub ball: BallConfig,
    pub cluster_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    Latent,
}

impl ParamKind {
    /// Weight decay touches dense/conv weights and latent vectors only;
    /// biases and normalization parameters are exempt, and cluster
    /// candidates are updated by their own rule.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Latent)
    }
}

pub struct ParamSlotMut<'a> {
    pub kind: ParamKind,
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

#[derive(Debug)]
pub struct Model {
    pub layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

/// Per-layer RNG stream so that adding or removing layers elsewhere does not
/// shift unrelated initializations.
fn layer_seed(seed: u64, layer_idx: usize) -> u64 {
    seed ^ (layer_idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Weights are sampled uniformly from ±1/√fan_in in row-major order.
fn init_weights(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Binarized layers only consume the signs of their mapped weights, so the
/// latent magnitude is a free scale. Starting at a fraction of the usual
/// bound keeps a large share of coordinates near the sign boundary, which is
/// the high-flip training regime the cluster parametrization targets.
/// Latents draw from ±`BINARY_INIT_SCALE`/√fan_in.
pub const BINARY_INIT_SCALE: f64 = 0.05;

fn init_latent(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = BINARY_INIT_SCALE / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl Model {
    /// Instantiate a sequential descriptor as a trainable model. Entries
    /// with explicit input taps or `add` merges only exist for counting and
    /// are rejected here.
    pub fn build(arch: &ArchDescriptor, opts: &BuildOptions) -> Result<Model> {
        crate::nn::arch::walk_shapes(arch)?;
        let mut shape: Vec<usize> = arch.input.clone();
        let mut layers = Vec::with_capacity(arch.layers.len());

        for (i, entry) in arch.layers.iter().enumerate() {
            if entry.input.is_some() {
                return Err(Error::InconsistentArch(format!(
                    "layer {i}: explicit input taps are not supported in trainable models"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(opts.seed, i));
            let layer = match &entry.spec {
                LayerSpec::DenseFull { out_dim, bias } => {
                    let ind = flat(&shape);
                    let w = init_weights(&mut rng, ind * out_dim, ind);
                    let b = vec![0.0; if *bias { *out_dim } else { 0 }];
                    shape = vec![*out_dim];
                    Layer::DenseFull(DenseFull::new(ind, *out_dim, w, b))
                }
                LayerSpec::DenseBinary { out_dim } => {
                    let ind = flat(&shape);
                    let latent = init_latent(&mut rng, ind * out_dim, ind);
                    let param = binary_param(opts, latent.len(), i)?;
                    shape = vec![*out_dim];
                    Layer::BinaryDense(BinaryDense::new(ind, *out_dim, latent, param))
                }
                LayerSpec::ConvFull {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let (c, h, w) = spatial(&shape)?;
                    let geom = ConvGeom {
                        in_ch: c,
                        out_ch: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    };
                    let weights = init_weights(&mut rng, geom.out_ch * geom.patch(), geom.patch());
                    let bvec = vec![0.0; if *bias { *out_channels } else { 0 }];
                    let oh = crate::nn::conv::out_dim(h, *kernel, *stride, *padding);
                    let ow = crate::nn::conv::out_dim(w, *kernel, *stride, *padding);
                    shape = vec![*out_channels, oh, ow];
                    Layer::ConvFull(ConvFull::new(geom, weights, bvec))
                }
                LayerSpec::ConvBinary {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = spatial(&shape)?;
                    let geom = ConvGeom {
                        in_ch: c,
                        out_ch: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    };
                    let latent = init_latent(&mut rng, geom.out_ch * geom.patch(), geom.patch());
                    let param = binary_param(opts, latent.len(), i)?;
                    let oh = crate::nn::conv::out_dim(h, *kernel, *stride, *padding);
                    let ow = crate::nn::conv::out_dim(w, *kernel, *stride, *padding);
                    shape = vec![*out_channels, oh, ow];
                    Layer::BinaryConv(BinaryConv::new(geom, latent, param))
                }
                LayerSpec::Batchnorm => {
                    // features for flat inputs, channels for spatial ones
                    Layer::BatchNorm(BatchNorm::new(shape[0]))
                }
                LayerSpec::Hardtanh => Layer::Hardtanh(Hardtanh::default()),
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                    Layer::Flatten(Flatten::default())
                }
                LayerSpec::Pool {
                    pool,
                    window,
                    stride,
                    padding,
                } => {
                    if *pool != PoolKind::Avg || stride.is_some() || *padding != 0 {
                        return Err(Error::InconsistentArch(format!(
                            "layer {i}: only plain average pooling is trainable"
                        )));
                    }
                    let (c, h, w) = spatial(&shape)?;
                    if h % window != 0 || w % window != 0 {
                        return Err(Error::InconsistentArch(format!(
                            "layer {i}: pooling window {window} does not divide {h}×{w}"
                        )));
                    }
                    shape = vec![c, h / window, w / window];
                    Layer::AvgPool(AvgPool::new(*window))
                }
                LayerSpec::Add { .. } => {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: residual merges are not supported in trainable models"
                    )))
                }
            };
            layers.push(layer);
        }

        Ok(Model {
            layers,
            input_shape: arch.input.clone(),
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in self.layers.iter_mut() {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    /// Backpropagate through every layer; parameter gradients are stored on
    /// the layers. The first layer's input gradient is never needed and is
    /// not computed.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let mut grad = grad_logits.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            if i == 0 {
                layer.backward_params_only(&grad)?;
                return Ok(());
            }
            grad = layer.backward(&grad)?;
        }
        Ok(())
    }

    /// Backward pass that also returns the gradient with respect to the
    /// network input.
    pub fn backward_with_input_grad(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut grad = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad)?;
        }
        Ok(grad)
    }

    /// Mutable views of every optimizer-updated parameter, in a stable order.
    pub fn param_slots(&mut self) -> Vec<ParamSlotMut<'_>> {
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::DenseFull(l) => {
                    slots.push(ParamSlotMut {
                        kind: ParamKind::Weight,
                        name: format!("layer{i}.weight"),
                        values: &mut l.weights,
                        grads: &l.grad_weights,
                    });
                    if !l.bias.is_empty() {
                        slots.push(ParamSlotMut {
                            kind: ParamKind::Bias,
                            name: format!("layer{i}.bias"),
                            values: &mut l.bias,
                            grads: &l.grad_bias,
                        });
                    }
                }
                Layer::ConvFull(l) => {
                    slots.push(ParamSlotMut {
                        kind: ParamKind::Weight,
                        name: format!("layer{i}.weight"),
                        values: &mut l.weights,
                        grads: &l.grad_weights,
                    });
                    if !l.bias.is_empty() {
                        slots.push(ParamSlotMut {
                            kind: ParamKind::Bias,
                            name: format!("layer{i}.bias"),
                            values: &mut l.bias,
                            grads: &l.grad_bias,
                        });
                    }
                }
                Layer::BinaryDense(l) => {
                    slots.push(ParamSlotMut {
                        kind: ParamKind::Latent,
                        name: format!("layer{i}.latent"),
                        values: l.latent.coords_mut(),
                        grads: &l.grad_latent,
                    });
                }
                Layer::BinaryConv(l) => {
                    slots.push(ParamSlotMut {
                        kind: ParamKind::Latent,
                        name: format!("layer{i}.latent"),
                        values: l.latent.coords_mut(),
                        grads: &l.grad_latent,
                    });
                }
                Layer::BatchNorm(l) => {
                    slots.push(ParamSlotMut {
                        kind: ParamKind::BnGamma,
                        name: format!("layer{i}.gamma"),
                        values: &mut l.gamma,
                        grads: &l.grad_gamma,
                    });
                    slots.push(ParamSlotMut {
                        kind: ParamKind::BnBeta,
                        name: format!("layer{i}.beta"),
                        values: &mut l.beta,
                        grads: &l.grad_beta,
                    });
                }
                _ => {}
            }
        }
        slots
    }

    /// Indices of binarized layers, in network order.
    pub fn binary_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_binary())
            .map(|(i, _)| i)
            .collect()
    }

    /// Inference weight signs per binarized layer.
    pub fn binary_weight_signs(&self) -> Result<Vec<Vec<i8>>> {
        self.layers
            .iter()
            .filter_map(|l| l.weight_signs())
            .collect()
    }

    /// Selected candidate per binarized layer (0 for unparametrized modes).
    pub fn selected_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.is_binary())
            .map(|l| l.cluster().map_or(0, |c| c.selected()))
            .collect()
    }
}

fn binary_param(opts: &BuildOptions, dim: usize, layer_idx: usize) -> Result<WeightParam> {
    let cluster_seed = layer_seed(opts.seed, layer_idx) ^ 0xA5A5_A5A5;
    Ok(match opts.mode {
        ParamMode::Epc => WeightParam::Ball(Cluster::init(
            opts.cluster_size.max(1),
            dim,
            cluster_seed,
            opts.ball,
        )?),
        ParamMode::ExpMap => WeightParam::Ball(Cluster::init(1, dim, cluster_seed, opts.ball)?),
        ParamMode::PlainBnn => WeightParam::Identity,
    })
}

fn flat(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn spatial(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::InconsistentArch(format!(
            "expected a [c, h, w] tensor, got {shape:?}"
        ))),
    }
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.batch();
    let k = logits.sample_size();
    if labels.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: labels.len(),
        });
    }
    let mut grad = vec![0.0; b * k];
    let mut loss = 0.0;
    for s in 0..b {
        let row = logits.sample(s);
        let y = labels[s];
        if y >= k {
            return Err(Error::Domain(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        loss += log_z - row[y];
        let grow = &mut grad[s * k..(s + 1) * k];
        for (j, v) in row.iter().enumerate() {
            grow[j] = ((v - max).exp() / z - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::from_vec(vec![b, k], grad)?))
}
