//! JSON architecture descriptors and parameter/operation accounting.
//!
//! A descriptor is a flat list of layer entries. Each entry consumes the
//! output of the previous one unless it names an explicit `input` index,
//! which together with the `add` merge kind is enough to express residual
//! topologies for counting purposes. Only strictly sequential descriptors
//! can be instantiated as trainable models.
//!
//! Counting conventions: a full-precision parameter costs 32 bits, a
//! binarized one costs 1 bit, and binary multiply-accumulates cost 1/64 of a
//! full-precision one. BatchNorm parameters fold into the binarization
//! thresholds at deployment and add neither size nor operations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::out_dim;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub name: String,
    /// `[features]` for flat inputs or `[channels, height, width]`.
    pub input: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEntry {
    #[serde(flatten)]
    pub spec: LayerSpec,
    /// Index of the layer whose output feeds this one. Defaults to the
    /// previous entry (or the network input for the first).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<usize>,
}

impl From<LayerSpec> for LayerEntry {
    fn from(spec: LayerSpec) -> Self {
        Self { spec, input: None }
    }
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    DenseFull {
        out_dim: usize,
        #[serde(default)]
        bias: bool,
    },
    DenseBinary {
        out_dim: usize,
    },
    ConvFull {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        bias: bool,
    },
    ConvBinary {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Batchnorm,
    Hardtanh,
    Flatten,
    Pool {
        pool: PoolKind,
        window: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
        #[serde(default)]
        padding: usize,
    },
    /// Elementwise merge of this entry's input with the output of layer
    /// `with` (residual connections).
    Add {
        with: usize,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Flat(usize),
    Chw(usize, usize, usize),
}

impl Shape {
    fn describe(&self) -> String {
        match self {
            Shape::Flat(n) => format!("[{n}]"),
            Shape::Chw(c, h, w) => format!("[{c}, {h}, {w}]"),
        }
    }
}

/// Aggregate cost of a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostSummary {
    pub full_params: u64,
    pub binary_params: u64,
    pub full_macs: u64,
    pub binary_macs: u64,
    /// `(32·full_params + binary_params)` bits, in megabytes (10⁶ bytes).
    pub size_mb: f64,
    /// `full_macs + binary_macs/64`.
    pub ops: f64,
}

impl ArchDescriptor {
    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub(crate) fn input_shape(&self) -> Result<Shape> {
        match self.input[..] {
            [n] if n > 0 => Ok(Shape::Flat(n)),
            [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape::Chw(c, h, w)),
            _ => Err(Error::InconsistentArch(format!(
                "input shape must be [features] or [c, h, w], got {:?}",
                self.input
            ))),
        }
    }

    /// The same architecture with every binarized layer widened back to 32
    /// bits (for size-reduction and baseline comparisons).
    pub fn to_full_precision(&self) -> ArchDescriptor {
        let layers = self
            .layers
            .iter()
            .map(|e| LayerEntry {
                input: e.input,
                spec: match &e.spec {
                    LayerSpec::DenseBinary { out_dim } => LayerSpec::DenseFull {
                        out_dim: *out_dim,
                        bias: false,
                    },
                    LayerSpec::ConvBinary {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    } => LayerSpec::ConvFull {
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        bias: false,
                    },
                    other => other.clone(),
                },
            })
            .collect();
        ArchDescriptor {
            name: format!("{}-fp32", self.name),
            input: self.input.clone(),
            layers,
        }
    }
}

/// Shape-check a descriptor and total up its parameter bits and
/// multiply-accumulate operations.
pub fn count_params_ops(arch: &ArchDescriptor) -> Result<CostSummary> {
    let shapes = walk_shapes(arch)?;
    let mut full_params = 0u64;
    let mut binary_params = 0u64;
    let mut full_macs = 0u64;
    let mut binary_macs = 0u64;

    for (i, entry) in arch.layers.iter().enumerate() {
        let inp = shapes[i];
        match &entry.spec {
            LayerSpec::DenseFull { out_dim, bias } => {
                let ind = flat_dim(inp, i)?;
                full_params += (ind * out_dim + if *bias { *out_dim } else { 0 }) as u64;
                full_macs += (ind * out_dim) as u64;
            }
            LayerSpec::DenseBinary { out_dim } => {
                let ind = flat_dim(inp, i)?;
                binary_params += (ind * out_dim) as u64;
                binary_macs += (ind * out_dim) as u64;
            }
            LayerSpec::ConvFull {
                out_channels,
                kernel,
                stride,
                padding,
                bias,
            } => {
                let (c, h, w) = chw(inp, i)?;
                let weights = out_channels * c * kernel * kernel;
                let oh = out_dim(h, *kernel, *stride, *padding);
                let ow = out_dim(w, *kernel, *stride, *padding);
                full_params += (weights + if *bias { *out_channels } else { 0 }) as u64;
                full_macs += (weights * oh * ow) as u64;
            }
            LayerSpec::ConvBinary {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = chw(inp, i)?;
                let weights = out_channels * c * kernel * kernel;
                let oh = out_dim(h, *kernel, *stride, *padding);
                let ow = out_dim(w, *kernel, *stride, *padding);
                binary_params += weights as u64;
                binary_macs += (weights * oh * ow) as u64;
            }
            _ => {}
        }
    }

    let size_bits = 32 * full_params + binary_params;
    Ok(CostSummary {
        full_params,
        binary_params,
        full_macs,
        binary_macs,
        size_mb: size_bits as f64 / 8.0 / 1e6,
        ops: full_macs as f64 + binary_macs as f64 / 64.0,
    })
}

/// Per-entry *input* shapes, with full consistency checking of the layer DAG.
pub(crate) fn walk_shapes(arch: &ArchDescriptor) -> Result<Vec<Shape>> {
    let input_shape = arch.input_shape()?;
    let mut in_shapes: Vec<Shape> = Vec::with_capacity(arch.layers.len());
    let mut out_shapes: Vec<Shape> = Vec::with_capacity(arch.layers.len());

    for (i, entry) in arch.layers.iter().enumerate() {
        let inp = match entry.input {
            None => {
                if i == 0 {
                    input_shape
                } else {
                    out_shapes[i - 1]
                }
            }
            Some(j) if j < i => out_shapes[j],
            Some(j) => {
                return Err(Error::InconsistentArch(format!(
                    "layer {i} references layer {j}, which is not earlier in the list"
                )))
            }
        };
        let out = match &entry.spec {
            LayerSpec::DenseFull { out_dim, .. } | LayerSpec::DenseBinary { out_dim } => {
                flat_dim(inp, i)?;
                if *out_dim == 0 {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: out_dim must be positive"
                    )));
                }
                Shape::Flat(*out_dim)
            }
            LayerSpec::ConvFull {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            }
            | LayerSpec::ConvBinary {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = chw(inp, i)?;
                conv_out(inp, *out_channels, *kernel, *stride, *padding, i)?;
                let oh = out_dim(h, *kernel, *stride, *padding);
                let ow = out_dim(w, *kernel, *stride, *padding);
                Shape::Chw(*out_channels, oh, ow)
            }
            LayerSpec::Batchnorm | LayerSpec::Hardtanh => inp,
            LayerSpec::Flatten => match inp {
                Shape::Flat(n) => Shape::Flat(n),
                Shape::Chw(c, h, w) => Shape::Flat(c * h * w),
            },
            LayerSpec::Pool {
                window,
                stride,
                padding,
                ..
            } => {
                let (c, h, w) = chw(inp, i)?;
                let s = stride.unwrap_or(*window);
                if *window == 0 || s == 0 {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: pooling window and stride must be positive"
                    )));
                }
                if h + 2 * padding < *window || w + 2 * padding < *window {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: pooling window {window} exceeds padded input {h}×{w}"
                    )));
                }
                Shape::Chw(
                    c,
                    out_dim(h, *window, s, *padding),
                    out_dim(w, *window, s, *padding),
                )
            }
            LayerSpec::Add { with } => {
                if *with >= i {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: add references layer {with}, which is not earlier"
                    )));
                }
                let other = out_shapes[*with];
                if other != inp {
                    return Err(Error::InconsistentArch(format!(
                        "layer {i}: add operands disagree: {} vs {}",
                        inp.describe(),
                        other.describe()
                    )));
                }
                inp
            }
        };
        in_shapes.push(inp);
        out_shapes.push(out);
    }
    Ok(in_shapes)
}

fn flat_dim(s: Shape, layer: usize) -> Result<usize> {
    match s {
        Shape::Flat(n) => Ok(n),
        Shape::Chw(..) => Err(Error::InconsistentArch(format!(
            "layer {layer}: dense layer fed a spatial tensor {}; add a flatten first",
            s.describe()
        ))),
    }
}

fn chw(s: Shape, layer: usize) -> Result<(usize, usize, usize)> {
    match s {
        Shape::Chw(c, h, w) => Ok((c, h, w)),
        Shape::Flat(..) => Err(Error::InconsistentArch(format!(
            "layer {layer}: convolution/pooling fed a flat tensor {}",
            s.describe()
        ))),
    }
}

fn conv_out(
    inp: Shape,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    layer: usize,
) -> Result<()> {
    let (_, h, w) = chw(inp, layer)?;
    if out_channels == 0 || kernel == 0 || stride == 0 {
        return Err(Error::InconsistentArch(format!(
            "layer {layer}: channels, kernel and stride must be positive"
        )));
    }
    if h + 2 * padding < kernel || w + 2 * padding < kernel {
        return Err(Error::InconsistentArch(format!(
            "layer {layer}: kernel {kernel} exceeds padded input {h}×{w}"
        )));
    }
    Ok(())
}
