//! Hyperbolic binary neural networks.
//!
//! The crate has three levels:
//!
//! - [`gyrovector`]: Poincaré-ball algebra (Möbius addition and scalar
//!   multiplication, exponential/logarithmic maps, geodesic distance).
//! - [`epc`] and [`binarize`]: the exponential parametrization cluster that
//!   turns the ball-constrained weight problem into an unconstrained
//!   Euclidean one, plus sign binarization, straight-through estimators and
//!   bit-packed XNOR/popcount kernels.
//! - [`nn`] and [`train`]: binarized layers with hand-written backward
//!   passes, architecture descriptors with parameter/OPs accounting, and a
//!   full training harness (datasets, SGD with cosine schedule, cluster
//!   selection, metrics, checkpoints, loss surfaces).
//!
//! The `hbnn` binary exposes all of it on the command line; see the README.

pub mod binarize;
pub mod epc;
pub mod error;
pub mod gyrovector;
pub mod mathcheck;
pub mod nn;
pub mod train;

pub(crate) mod vecops;

pub use error::{Error, Result};
