//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HBNN" | u32 version | u32 header_len | header JSON (UTF-8)
//!        | u32 tensor_count | tensor*
//! tensor = u16 name_len | name | u8 dtype (0 = f64, 1 = i8)
//!        | u64 element_count | payload
//! ```
//!
//! The header carries the training config, the architecture descriptor, the
//! step counters and the selected candidate per binarized layer; tensors
//! carry every parameter, cluster candidate, BatchNorm statistic, momentum
//! buffer and sign snapshot. A save/load round trip restores training
//! bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epc::Cluster;
use crate::error::{Error, Result};
use crate::gyrovector::BallPoint;
use crate::nn::model::BuildOptions;
use crate::nn::{ArchDescriptor, Layer, Model, WeightParam};
use crate::train::data::DatasetHandle;
use crate::train::{write_atomic, SgdState, TrainConfig, Trainer};

const MAGIC: &[u8; 4] = b"HBNN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    arch: ArchDescriptor,
    step: u64,
    epoch_loss_accum: f64,
    epoch_loss_count: u64,
    /// Selected candidate per binarized layer (0-based).
    selected: Vec<usize>,
    /// Cluster size per binarized layer (how many `clusterN` tensors exist).
    cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
enum TensorData {
    F64(Vec<f64>),
    I8(Vec<i8>),
}

fn tensor_f64(map: &BTreeMap<String, TensorData>, name: &str) -> Result<Vec<f64>> {
    match map.get(name) {
        Some(TensorData::F64(v)) => Ok(v.clone()),
        Some(TensorData::I8(_)) => Err(Error::CorruptCheckpoint(format!(
            "tensor {name} has the wrong dtype"
        ))),
        None => Err(Error::CorruptCheckpoint(format!("missing tensor {name}"))),
    }
}

fn tensor_i8(map: &BTreeMap<String, TensorData>, name: &str) -> Result<Vec<i8>> {
    match map.get(name) {
        Some(TensorData::I8(v)) => Ok(v.clone()),
        Some(TensorData::F64(_)) => Err(Error::CorruptCheckpoint(format!(
            "tensor {name} has the wrong dtype"
        ))),
        None => Err(Error::CorruptCheckpoint(format!("missing tensor {name}"))),
    }
}

/// Serialize the full training state of `trainer` to `path` (atomically).
pub fn checkpoint_save(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, TensorData)> = Vec::new();

    for (i, layer) in trainer.model.layers.iter().enumerate() {
        match layer {
            Layer::DenseFull(l) => {
                tensors.push((format!("layer{i}.weight"), TensorData::F64(l.weights.clone())));
                tensors.push((format!("layer{i}.bias"), TensorData::F64(l.bias.clone())));
            }
            Layer::ConvFull(l) => {
                tensors.push((format!("layer{i}.weight"), TensorData::F64(l.weights.clone())));
                tensors.push((format!("layer{i}.bias"), TensorData::F64(l.bias.clone())));
            }
            Layer::BinaryDense(_) | Layer::BinaryConv(_) => {
                let (latent, param) = match layer {
                    Layer::BinaryDense(l) => (l.latent.coords(), &l.param),
                    Layer::BinaryConv(l) => (l.latent.coords(), &l.param),
                    _ => unreachable!(),
                };
                tensors.push((format!("layer{i}.latent"), TensorData::F64(latent.to_vec())));
                if let WeightParam::Ball(cluster) = param {
                    for (j, c) in cluster.candidates().iter().enumerate() {
                        tensors.push((
                            format!("layer{i}.cluster{j}"),
                            TensorData::F64(c.coords().to_vec()),
                        ));
                    }
                }
            }
            Layer::BatchNorm(l) => {
                tensors.push((format!("layer{i}.gamma"), TensorData::F64(l.gamma.clone())));
                tensors.push((format!("layer{i}.beta"), TensorData::F64(l.beta.clone())));
                tensors.push((
                    format!("layer{i}.running_mean"),
                    TensorData::F64(l.running_mean.clone()),
                ));
                tensors.push((
                    format!("layer{i}.running_var"),
                    TensorData::F64(l.running_var.clone()),
                ));
            }
            _ => {}
        }
    }

    for (k, v) in trainer.opt_state().velocity.iter().enumerate() {
        tensors.push((format!("opt.velocity{k}"), TensorData::F64(v.clone())));
    }
    let (initial, prev) = trainer.signs_for_checkpoint();
    for (k, s) in initial.iter().enumerate() {
        tensors.push((format!("signs.initial{k}"), TensorData::I8(s.clone())));
    }
    for (k, s) in prev.iter().enumerate() {
        tensors.push((format!("signs.prev{k}"), TensorData::I8(s.clone())));
    }

    let (step, epoch_loss_accum, epoch_loss_count) = trainer.state_for_checkpoint();
    let cluster_sizes = trainer
        .model
        .layers
        .iter()
        .filter(|l| l.is_binary())
        .map(|l| l.cluster().map_or(0, |c| c.len()))
        .collect();
    let header = Header {
        config: trainer.config.clone(),
        arch: trainer.arch.clone(),
        step,
        epoch_loss_accum,
        epoch_loss_count,
        selected: trainer.model.selected_indices(),
        cluster_sizes,
    };

    let header_json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, data) in &tensors {
        bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        match data {
            TensorData::F64(v) => {
                bytes.push(0);
                bytes.extend_from_slice(&(v.len() as u64).to_le_bytes());
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::I8(v) => {
                bytes.push(1);
                bytes.extend_from_slice(&(v.len() as u64).to_le_bytes());
                bytes.extend(v.iter().map(|x| *x as u8));
            }
        }
    }
    write_atomic(path, &bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected end of file at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Everything a checkpoint holds, reassembled.
pub struct CheckpointState {
    pub config: TrainConfig,
    pub arch: ArchDescriptor,
    pub step: u64,
    pub epoch_loss_accum: f64,
    pub epoch_loss_count: u64,
    pub model: Model,
    pub velocity: Vec<Vec<f64>>,
    pub initial_signs: Vec<Vec<i8>>,
    pub prev_epoch_signs: Vec<Vec<i8>>,
}

/// Parse and restore a checkpoint file.
pub fn checkpoint_load(path: &Path) -> Result<CheckpointState> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            got: version,
        });
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("invalid header: {e}")))?;
    let count = r.u32()? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|e| Error::CorruptCheckpoint(format!("invalid tensor name: {e}")))?;
        let dtype = r.take(1)?[0];
        let n = r.u64()? as usize;
        let data = match dtype {
            0 => {
                let raw = r.take(n * 8)?;
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => TensorData::I8(r.take(n)?.iter().map(|b| *b as i8).collect()),
            d => {
                return Err(Error::CorruptCheckpoint(format!(
                    "unknown dtype {d} for tensor {name}"
                )))
            }
        };
        map.insert(name, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    // Rebuild the model skeleton, then overwrite all state.
    let opts = BuildOptions {
        mode: header.config.mode,
        ball: header.config.ball()?,
        cluster_size: header.config.cluster_size,
        seed: header.config.seed,
    };
    let mut model = Model::build(&header.arch, &opts)?;
    let ball = header.config.ball()?;
    let mut bin_idx = 0usize;
    for (i, layer) in model.layers.iter_mut().enumerate() {
        match layer {
            Layer::DenseFull(l) => {
                l.weights = expect_len(tensor_f64(&map, &format!("layer{i}.weight"))?, l.weights.len(), i)?;
                l.bias = expect_len(tensor_f64(&map, &format!("layer{i}.bias"))?, l.bias.len(), i)?;
            }
            Layer::ConvFull(l) => {
                l.weights = expect_len(tensor_f64(&map, &format!("layer{i}.weight"))?, l.weights.len(), i)?;
                l.bias = expect_len(tensor_f64(&map, &format!("layer{i}.bias"))?, l.bias.len(), i)?;
            }
            Layer::BinaryDense(_) | Layer::BinaryConv(_) => {
                let latent = tensor_f64(&map, &format!("layer{i}.latent"))?;
                let t = header.cluster_sizes.get(bin_idx).copied().unwrap_or(0);
                let selected = header.selected.get(bin_idx).copied().unwrap_or(0);
                let param = if t > 0 {
                    let mut candidates = Vec::with_capacity(t);
                    for j in 0..t {
                        let coords = tensor_f64(&map, &format!("layer{i}.cluster{j}"))?;
                        candidates.push(BallPoint::new(coords, &ball).map_err(|e| {
                            Error::CorruptCheckpoint(format!("layer{i}.cluster{j}: {e}"))
                        })?);
                    }
                    WeightParam::Ball(Cluster::from_candidates(candidates, selected, ball)?)
                } else {
                    WeightParam::Identity
                };
                match layer {
                    Layer::BinaryDense(l) => {
                        if latent.len() != l.latent.dim() {
                            return Err(Error::CorruptCheckpoint(format!(
                                "layer{i}.latent has {} entries, expected {}",
                                latent.len(),
                                l.latent.dim()
                            )));
                        }
                        l.latent.coords_mut().copy_from_slice(&latent);
                        l.param = param;
                    }
                    Layer::BinaryConv(l) => {
                        if latent.len() != l.latent.dim() {
                            return Err(Error::CorruptCheckpoint(format!(
                                "layer{i}.latent has {} entries, expected {}",
                                latent.len(),
                                l.latent.dim()
                            )));
                        }
                        l.latent.coords_mut().copy_from_slice(&latent);
                        l.param = param;
                    }
                    _ => unreachable!(),
                }
                bin_idx += 1;
            }
            Layer::BatchNorm(l) => {
                l.gamma = expect_len(tensor_f64(&map, &format!("layer{i}.gamma"))?, l.gamma.len(), i)?;
                l.beta = expect_len(tensor_f64(&map, &format!("layer{i}.beta"))?, l.beta.len(), i)?;
                l.running_mean = expect_len(
                    tensor_f64(&map, &format!("layer{i}.running_mean"))?,
                    l.running_mean.len(),
                    i,
                )?;
                l.running_var = expect_len(
                    tensor_f64(&map, &format!("layer{i}.running_var"))?,
                    l.running_var.len(),
                    i,
                )?;
            }
            _ => {}
        }
    }

    let mut velocity = Vec::new();
    let mut k = 0;
    while let Some(TensorData::F64(v)) = map.get(&format!("opt.velocity{k}")) {
        velocity.push(v.clone());
        k += 1;
    }
    let mut initial_signs = Vec::new();
    let mut k = 0;
    while map.contains_key(&format!("signs.initial{k}")) {
        initial_signs.push(tensor_i8(&map, &format!("signs.initial{k}"))?);
        k += 1;
    }
    let mut prev_epoch_signs = Vec::new();
    let mut k = 0;
    while map.contains_key(&format!("signs.prev{k}")) {
        prev_epoch_signs.push(tensor_i8(&map, &format!("signs.prev{k}"))?);
        k += 1;
    }

    Ok(CheckpointState {
        config: header.config,
        arch: header.arch,
        step: header.step,
        epoch_loss_accum: header.epoch_loss_accum,
        epoch_loss_count: header.epoch_loss_count,
        model,
        velocity,
        initial_signs,
        prev_epoch_signs,
    })
}

fn expect_len(v: Vec<f64>, expected: usize, layer: usize) -> Result<Vec<f64>> {
    if v.len() != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "layer {layer}: tensor has {} entries, expected {expected}",
            v.len()
        )));
    }
    Ok(v)
}

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint_save(self, path)
    }

    /// Resume training from a checkpoint plus the datasets it was trained on.
    pub fn from_checkpoint(
        state: CheckpointState,
        train_data: DatasetHandle,
        test_data: DatasetHandle,
    ) -> Result<Trainer> {
        Trainer::from_parts(
            state.config,
            state.arch,
            state.model,
            Some(SgdState {
                velocity: state.velocity,
            }),
            state.step,
            state.epoch_loss_accum,
            state.epoch_loss_count,
            Some(state.initial_signs),
            Some(state.prev_epoch_signs),
            train_data,
            test_data,
        )
    }
}
