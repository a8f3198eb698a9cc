//! Hand-written binarized network layers: forward passes over bit-packed
//! signs, analytic backward passes through both straight-through estimators
//! and the cluster parametrization, plus architecture descriptors and
//! parameter/operation accounting.

pub mod arch;
pub mod conv;
pub mod layers;
pub mod model;
pub mod tensor;

pub use arch::{count_params_ops, ArchDescriptor, CostSummary, LayerEntry, LayerSpec};
pub use layers::{ForwardMode, Layer, WeightParam};
pub use model::{softmax_cross_entropy, Model, ParamKind};
pub use tensor::Tensor;

/// Batch rows per parallel work unit. Fixed independently of the thread
/// count so that reduction order (and therefore every f64 bit) does not
/// depend on how many workers are running.
pub(crate) const PAR_CHUNK: usize = 32;
