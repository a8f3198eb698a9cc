//! Training harness: SGD with momentum, weight decay and a cosine schedule;
//! the cluster selection-and-update loop; metrics; and checkpointing.

pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod surface;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epc::select_optimal;
use crate::error::{Error, Result};
use crate::gyrovector::BallConfig;
use crate::nn::model::{BuildOptions, ParamMode};
use crate::nn::{softmax_cross_entropy, ArchDescriptor, ForwardMode, Model, Tensor};
use data::DatasetHandle;
use metrics::{flip_rate, MetricsRecord};

fn default_radius() -> f64 {
    0.05
}
fn default_cluster_size() -> usize {
    4
}
fn default_selection_period() -> usize {
    100
}
fn default_batch_size() -> usize {
    256
}
fn default_base_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_mode() -> ParamMode {
    ParamMode::Epc
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_cluster_size")]
    pub cluster_size: usize,
    /// Candidate re-selection period, in steps.
    #[serde(default = "default_selection_period")]
    pub selection_period: usize,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: ParamMode,
}

impl TrainConfig {
    /// Collect every invalid field in one pass.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            issues.push(format!("radius must be > 0, got {}", self.radius));
        }
        if self.cluster_size == 0 {
            issues.push("cluster_size must be ≥ 1".into());
        }
        if self.selection_period == 0 {
            issues.push("selection_period must be ≥ 1".into());
        }
        if self.epochs == 0 {
            issues.push("epochs must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            issues.push("batch_size must be ≥ 1".into());
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            issues.push(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            issues.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            issues.push(format!(
                "weight_decay must be ≥ 0, got {}",
                self.weight_decay
            ));
        }
        issues
    }

    pub fn checked(self) -> Result<Self> {
        let issues = self.validate();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn ball(&self) -> Result<BallConfig> {
        BallConfig::new(self.radius)
    }
}

/// Cosine-annealed learning rate: `base·(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step as f64 / total_steps as f64;
    base_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}

/// SGD momentum buffers, one per parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub selection_ran: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub final_test_accuracy: f64,
    pub final_train_loss: f64,
    pub cumulative_flip_rates: Vec<f64>,
    pub last_epoch_flip_rates: Vec<f64>,
    pub selected_indices: Vec<usize>,
    pub epochs: usize,
    pub steps: u64,
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub arch: ArchDescriptor,
    train_data: DatasetHandle,
    test_data: DatasetHandle,
    opt: SgdState,
    step: u64,
    epoch_loss_accum: f64,
    epoch_loss_count: u64,
    initial_signs: Vec<Vec<i8>>,
    prev_epoch_signs: Vec<Vec<i8>>,
    cached_perm: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        arch: ArchDescriptor,
        train_data: DatasetHandle,
        test_data: DatasetHandle,
    ) -> Result<Self> {
        let config = config.checked()?;
        let opts = BuildOptions {
            mode: config.mode,
            ball: config.ball()?,
            cluster_size: config.cluster_size,
            seed: config.seed,
        };
        let model = Model::build(&arch, &opts)?;
        Self::from_parts(config, arch, model, None, 0, 0.0, 0, None, None, train_data, test_data)
    }

    /// Assemble a trainer from existing state (fresh runs and checkpoint
    /// restores share this path).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: TrainConfig,
        arch: ArchDescriptor,
        mut model: Model,
        opt: Option<SgdState>,
        step: u64,
        epoch_loss_accum: f64,
        epoch_loss_count: u64,
        initial_signs: Option<Vec<Vec<i8>>>,
        prev_epoch_signs: Option<Vec<Vec<i8>>>,
        train_data: DatasetHandle,
        test_data: DatasetHandle,
    ) -> Result<Self> {
        if train_data.feature_shape != arch.input {
            return Err(Error::DimensionMismatch {
                expected: arch.input.iter().product(),
                got: train_data.feature_len(),
            });
        }
        let opt = match opt {
            Some(o) => o,
            None => SgdState {
                velocity: model
                    .param_slots()
                    .iter()
                    .map(|s| vec![0.0; s.values.len()])
                    .collect(),
            },
        };
        let signs = model.binary_weight_signs()?;
        let initial_signs = initial_signs.unwrap_or_else(|| signs.clone());
        let prev_epoch_signs = prev_epoch_signs.unwrap_or(signs);
        Ok(Self {
            model,
            config,
            arch,
            train_data,
            test_data,
            opt,
            step,
            epoch_loss_accum,
            epoch_loss_count,
            initial_signs,
            prev_epoch_signs,
            cached_perm: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.train_data.len() / self.config.batch_size).max(1)
    }

    pub fn total_steps(&self) -> u64 {
        (self.steps_per_epoch() * self.config.epochs) as u64
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.step, self.total_steps(), self.config.base_lr)
    }

    pub fn opt_state(&self) -> &SgdState {
        &self.opt
    }

    pub fn initial_signs(&self) -> &[Vec<i8>] {
        &self.initial_signs
    }

    /// Deterministic epoch shuffle: a permutation of the training set keyed
    /// by `(seed, epoch)` only, so a resumed run sees the same batches.
    fn epoch_indices(&mut self, epoch: u64) -> &[usize] {
        if self.cached_perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.config
                    .seed
                    .wrapping_add(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                    ^ 0xDA7A_0BA7,
            );
            let mut perm: Vec<usize> = (0..self.train_data.len()).collect();
            perm.shuffle(&mut rng);
            self.cached_perm = Some((epoch, perm));
        }
        &self.cached_perm.as_ref().unwrap().1
    }

    fn current_batch(&mut self) -> (Tensor, Vec<usize>) {
        let spe = self.steps_per_epoch() as u64;
        let epoch = self.step / spe;
        let pos = (self.step % spe) as usize;
        let bs = self.config.batch_size;
        let lo = pos * bs;
        let hi = (lo + bs).min(self.train_data.len());
        let idx = self.epoch_indices(epoch)[lo..hi].to_vec();
        self.train_data.batch(&idx)
    }

    /// One optimization step: optional candidate re-selection, forward,
    /// loss, backward, cluster update, SGD update.
    pub fn step_once(&mut self) -> Result<StepOutcome> {
        let (x, y) = self.current_batch();
        let lr = self.current_lr();

        let selection_ran = if self.config.mode == ParamMode::Epc
            && self.step % self.config.selection_period as u64 == 0
        {
            self.run_selection(&x, &y, lr)?;
            true
        } else {
            false
        };

        let logits = self.model.forward(&x, ForwardMode::Train)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, &y)?;
        if !loss.is_finite() {
            return Err(self.non_finite_diagnostics(loss));
        }
        self.model.backward(&grad_logits)?;

        // Cluster update (Eq.-style Riemannian step). Between selection
        // rounds only the selected candidate carries a task gradient; at a
        // selection round every candidate was already updated from its probe.
        if self.config.mode == ParamMode::Epc && !selection_ran {
            for li in self.model.binary_layers() {
                let grad = self.model.layers[li]
                    .grad_basepoint()
                    .map(|g| g.to_vec());
                if let (Some(g), Some(cluster)) = (grad, self.model.layers[li].cluster_mut()) {
                    let mut grads = vec![vec![0.0; cluster.dim()]; cluster.len()];
                    grads[cluster.selected()] = g;
                    cluster.apply_grad_step(&grads, lr)?;
                }
            }
        }

        self.sgd_update(lr);
        self.epoch_loss_accum += loss;
        self.epoch_loss_count += 1;
        self.step += 1;
        Ok(StepOutcome {
            step: self.step,
            loss,
            lr,
            selection_ran,
        })
    }

    /// Per-layer greedy candidate selection on the current minibatch: probe
    /// every candidate with a forward/backward pass (batch statistics, no
    /// running-stat updates), pick the argmin loss, and give each candidate
    /// one Riemannian step from its own probe gradient.
    fn run_selection(&mut self, x: &Tensor, y: &[usize], lr: f64) -> Result<()> {
        for li in self.model.binary_layers() {
            let t = match self.model.layers[li].cluster() {
                Some(c) if c.len() > 1 => c.len(),
                _ => continue,
            };
            let mut losses = Vec::with_capacity(t);
            let mut grads = Vec::with_capacity(t);
            for j in 0..t {
                self.model.layers[li]
                    .cluster_mut()
                    .expect("binary layer has a cluster")
                    .set_selected(j)?;
                let logits = self.model.forward(x, ForwardMode::Probe)?;
                let (loss, grad_logits) = softmax_cross_entropy(&logits, y)?;
                if !loss.is_finite() {
                    return Err(self.non_finite_diagnostics(loss));
                }
                self.model.backward(&grad_logits)?;
                losses.push(loss);
                grads.push(
                    self.model.layers[li]
                        .grad_basepoint()
                        .expect("probe backward fills the basepoint gradient")
                        .to_vec(),
                );
            }
            let best = select_optimal(&losses)?;
            let cluster = self.model.layers[li].cluster_mut().unwrap();
            cluster.apply_grad_step(&grads, lr)?;
            cluster.set_selected(best)?;
        }
        Ok(())
    }

    fn sgd_update(&mut self, lr: f64) {
        let momentum = self.config.momentum;
        let wd = self.config.weight_decay;
        for (slot, vel) in self.model.param_slots().into_iter().zip(&mut self.opt.velocity) {
            let decay = if slot.kind.decays() { wd } else { 0.0 };
            for i in 0..slot.values.len() {
                let g = slot.grads[i] + decay * slot.values[i];
                vel[i] = momentum * vel[i] + g;
                slot.values[i] -= lr * vel[i];
            }
        }
    }

    fn non_finite_diagnostics(&mut self, loss: f64) -> Error {
        let mut lines = vec![format!("loss = {loss} at step {}", self.step)];
        for slot in self.model.param_slots() {
            let norm = slot.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            lines.push(format!("  ‖{}‖ = {:.6e}", slot.name, norm));
        }
        Error::NonFiniteLoss(lines.join("\n"))
    }

    /// Train for the configured number of epochs, emitting one record per
    /// epoch boundary.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricsRecord)) -> Result<TrainSummary> {
        let spe = self.steps_per_epoch() as u64;
        let total = self.total_steps();
        let mut last_record = None;
        while self.step < total {
            let out = self.step_once()?;
            if self.step % spe == 0 {
                let record = self.epoch_record(out.lr)?;
                sink(&record);
                last_record = Some(record);
            }
        }
        let last = match last_record {
            Some(r) => r,
            // resumed at (or past) the final step: report the current state
            None => self.epoch_record(self.current_lr())?,
        };
        Ok(TrainSummary {
            final_test_accuracy: last.test_accuracy,
            final_train_loss: last.train_loss,
            cumulative_flip_rates: last.per_layer_flip_rate.clone(),
            last_epoch_flip_rates: last.per_layer_epoch_flip_rate.clone(),
            selected_indices: last.selected_indices.clone(),
            epochs: self.config.epochs,
            steps: self.step,
        })
    }

    fn epoch_record(&mut self, lr: f64) -> Result<MetricsRecord> {
        let epoch = (self.step / self.steps_per_epoch() as u64) as usize;
        let cur_signs = self.model.binary_weight_signs()?;
        let cumulative = flip_rate(&self.initial_signs, &cur_signs)?;
        let per_epoch = flip_rate(&self.prev_epoch_signs, &cur_signs)?;
        self.prev_epoch_signs = cur_signs;
        let train_loss = if self.epoch_loss_count > 0 {
            self.epoch_loss_accum / self.epoch_loss_count as f64
        } else {
            f64::NAN
        };
        self.epoch_loss_accum = 0.0;
        self.epoch_loss_count = 0;
        let test_accuracy = evaluate(&mut self.model, &self.test_data)?;
        Ok(MetricsRecord {
            step: self.step,
            epoch,
            lr,
            train_loss,
            test_accuracy,
            per_layer_flip_rate: cumulative,
            per_layer_epoch_flip_rate: per_epoch,
            selected_indices: self
                .model
                .selected_indices()
                .iter()
                .map(|s| s + 1)
                .collect(),
        })
    }

    pub fn evaluate_test(&mut self) -> Result<f64> {
        evaluate(&mut self.model, &self.test_data)
    }

    pub fn train_data(&self) -> &DatasetHandle {
        &self.train_data
    }

    pub fn test_data(&self) -> &DatasetHandle {
        &self.test_data
    }

    pub(crate) fn state_for_checkpoint(&self) -> (u64, f64, u64) {
        (self.step, self.epoch_loss_accum, self.epoch_loss_count)
    }

    pub(crate) fn signs_for_checkpoint(&self) -> (&[Vec<i8>], &[Vec<i8>]) {
        (&self.initial_signs, &self.prev_epoch_signs)
    }
}

/// Eval-mode accuracy over a dataset, in fixed-size batches.
pub fn evaluate(model: &mut Model, data: &DatasetHandle) -> Result<f64> {
    const EVAL_BATCH: usize = 512;
    let n = data.len();
    let mut correct = 0usize;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (lo..hi).collect();
        let (x, y) = data.batch(&idx);
        let logits = model.forward(&x, ForwardMode::Eval)?;
        let k = logits.sample_size();
        for (s, label) in y.iter().enumerate() {
            let row = logits.sample(s);
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == *label {
                correct += 1;
            }
        }
        lo = hi;
    }
    Ok(correct as f64 / n as f64)
}

/// Mean eval-mode loss of a model on one batch.
pub fn eval_loss(model: &mut Model, x: &Tensor, y: &[usize]) -> Result<f64> {
    let logits = model.forward(x, ForwardMode::Eval)?;
    Ok(softmax_cross_entropy(&logits, y)?.0)
}

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename).
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
