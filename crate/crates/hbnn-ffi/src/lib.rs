//! C ABI over the ball algebra, the cluster parametrization and the
//! bit-packed binarization kernels.
//!
//! Conventions: handles are opaque pointers created by `*_new`/`*_pack`
//! constructors and released by the matching `*_free`; every function
//! returns an [`HbnnStatus`] and writes results through out-pointers; vector
//! arguments are dense `double` arrays of the stated length. Functions never
//! take ownership of their inputs.

use std::ffi::{c_char, CStr};

use hbnn::binarize::{ste_activation_grad, ste_weight_grad_mask, BitTensor};
use hbnn::epc::{epc_inverse, epc_map_selected, epc_vjp, Cluster, LatentWeight};
use hbnn::gyrovector::{
    conformal_factor, exp_map, geodesic_distance, log_map, mobius_add, mobius_scalar_mul,
    project_to_ball, BallConfig, BallPoint, TangentVec,
};
use hbnn::nn::{count_params_ops, ArchDescriptor};
use hbnn::Error;

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HbnnStatus {
    HbnnOk = 0,
    /// A required pointer argument was null.
    HbnnNullArgument = 1,
    /// An argument was out of range (sizes, indices, non-finite scalars).
    HbnnInvalidArgument = 2,
    /// A value violated a mathematical domain (point on or outside the ball).
    HbnnDomainError = 3,
    HbnnDimensionMismatch = 4,
    /// Malformed JSON or inconsistent architecture descriptor.
    HbnnParseError = 5,
}

fn status_of(err: &Error) -> HbnnStatus {
    match err {
        Error::Domain(_) => HbnnStatus::HbnnDomainError,
        Error::DimensionMismatch { .. } => HbnnStatus::HbnnDimensionMismatch,
        Error::Json(_) | Error::Parse { .. } | Error::InconsistentArch(_) => {
            HbnnStatus::HbnnParseError
        }
        _ => HbnnStatus::HbnnInvalidArgument,
    }
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn hbnn_status_name(status: HbnnStatus) -> *const c_char {
    let name: &'static [u8] = match status {
        HbnnStatus::HbnnOk => b"ok\0",
        HbnnStatus::HbnnNullArgument => b"null argument\0",
        HbnnStatus::HbnnInvalidArgument => b"invalid argument\0",
        HbnnStatus::HbnnDomainError => b"domain error\0",
        HbnnStatus::HbnnDimensionMismatch => b"dimension mismatch\0",
        HbnnStatus::HbnnParseError => b"parse error\0",
    };
    name.as_ptr() as *const c_char
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hbnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque Poincaré-ball context (radius parameter plus numeric guards).
pub struct HbnnBall {
    cfg: BallConfig,
}

/// Opaque bit-packed ±1 tensor.
pub struct HbnnBitTensor {
    bits: BitTensor,
}

/// Opaque basepoint cluster.
pub struct HbnnCluster {
    cluster: Cluster,
}

unsafe fn slice_in<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_out<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn ball_point(coords: &[f64], cfg: &BallConfig) -> Result<BallPoint, HbnnStatus> {
    BallPoint::new(coords.to_vec(), cfg).map_err(|e| status_of(&e))
}

/// Create a ball context with radius parameter `r` (> 0); the ball radius is
/// `1/sqrt(r)`.
///
/// # Safety
/// `out` must be a valid pointer; the result must be released with
/// [`hbnn_ball_free`].
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_new(radius_param: f64, out: *mut *mut HbnnBall) -> HbnnStatus {
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    match BallConfig::new(radius_param) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(HbnnBall { cfg }));
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// # Safety
/// `ball` must be null or a pointer from [`hbnn_ball_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_free(ball: *mut HbnnBall) {
    if !ball.is_null() {
        drop(Box::from_raw(ball));
    }
}

macro_rules! try_ball {
    ($ball:expr) => {
        match $ball.as_ref() {
            Some(b) => &b.cfg,
            None => return HbnnStatus::HbnnNullArgument,
        }
    };
}

/// Möbius addition `p ⊕ q`; `out` receives `len` doubles.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_mobius_add(
    ball: *const HbnnBall,
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(p), Some(q), Some(out)) = (slice_in(p, len), slice_in(q, len), slice_out(out, len))
    else {
        return HbnnStatus::HbnnNullArgument;
    };
    let (bp, bq) = match (ball_point(p, cfg), ball_point(q, cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    out.copy_from_slice(mobius_add(&bp, &bq, cfg).coords());
    HbnnStatus::HbnnOk
}

/// Möbius scalar multiplication `c ⊗ p`.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_mobius_scalar_mul(
    ball: *const HbnnBall,
    c: f64,
    p: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(p), Some(out)) = (slice_in(p, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    if !c.is_finite() {
        return HbnnStatus::HbnnInvalidArgument;
    }
    match ball_point(p, cfg) {
        Ok(bp) => {
            out.copy_from_slice(mobius_scalar_mul(c, &bp, cfg).coords());
            HbnnStatus::HbnnOk
        }
        Err(s) => s,
    }
}

/// Exponential map at `base` (origin-basepoint convention).
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_exp_map(
    ball: *const HbnnBall,
    base: *const f64,
    v: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(base), Some(v), Some(out)) =
        (slice_in(base, len), slice_in(v, len), slice_out(out, len))
    else {
        return HbnnStatus::HbnnNullArgument;
    };
    let b = match ball_point(base, cfg) {
        Ok(b) => b,
        Err(s) => return s,
    };
    let tv = match TangentVec::new(v.to_vec()) {
        Ok(t) => t,
        Err(e) => return status_of(&e),
    };
    out.copy_from_slice(exp_map(&b, &tv, cfg).coords());
    HbnnStatus::HbnnOk
}

/// Logarithmic map: the tangent vector carrying `base` to `y`.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_log_map(
    ball: *const HbnnBall,
    base: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(base), Some(y), Some(out)) =
        (slice_in(base, len), slice_in(y, len), slice_out(out, len))
    else {
        return HbnnStatus::HbnnNullArgument;
    };
    let (b, by) = match (ball_point(base, cfg), ball_point(y, cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    out.copy_from_slice(log_map(&b, &by, cfg).coords());
    HbnnStatus::HbnnOk
}

/// Geodesic distance between two interior points.
///
/// # Safety
/// `p` and `q` must be valid for `len` doubles; `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_distance(
    ball: *const HbnnBall,
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(p), Some(q)) = (slice_in(p, len), slice_in(q, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    let (bp, bq) = match (ball_point(p, cfg), ball_point(q, cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    *out = geodesic_distance(&bp, &bq, cfg);
    HbnnStatus::HbnnOk
}

/// Conformal factor `λ_x`.
///
/// # Safety
/// `x` must be valid for `len` doubles; `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_conformal_factor(
    ball: *const HbnnBall,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let Some(x) = slice_in(x, len) else {
        return HbnnStatus::HbnnNullArgument;
    };
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    let bx = match ball_point(x, cfg) {
        Ok(b) => b,
        Err(s) => return s,
    };
    match conformal_factor(&bx, cfg) {
        Ok(v) => {
            *out = v;
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// Clip an arbitrary vector into the ball interior.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ball_project(
    ball: *const HbnnBall,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(x), Some(out)) = (slice_in(x, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    out.copy_from_slice(project_to_ball(x, cfg).coords());
    HbnnStatus::HbnnOk
}

/// Elementwise sign with `sign(0) = +1`, written as ±1.0 doubles.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_sign_binarize(
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let (Some(x), Some(out)) = (slice_in(x, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    out.copy_from_slice(&hbnn::binarize::sign_binarize(x));
    HbnnStatus::HbnnOk
}

/// Surrogate gradient of the activation binarization.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ste_activation_grad(
    a: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let (Some(a), Some(out)) = (slice_in(a, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    out.copy_from_slice(&ste_activation_grad(a));
    HbnnStatus::HbnnOk
}

/// Clip-rule mask `1{|w| ≤ 1/sqrt(r)}` as 0/1 doubles.
///
/// # Safety
/// All pointers must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hbnn_ste_weight_grad_mask(
    ball: *const HbnnBall,
    w: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    let (Some(w), Some(out)) = (slice_in(w, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    out.copy_from_slice(&ste_weight_grad_mask(w, cfg));
    HbnnStatus::HbnnOk
}

/// Pack a ±1 vector (entries ≥ 0 count as +1) into 64-bit words.
///
/// # Safety
/// `signs` must be valid for `len` doubles; the result must be released with
/// [`hbnn_bits_free`].
#[no_mangle]
pub unsafe extern "C" fn hbnn_bits_pack(
    signs: *const f64,
    len: usize,
    out: *mut *mut HbnnBitTensor,
) -> HbnnStatus {
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    let Some(signs) = slice_in(signs, len) else {
        return HbnnStatus::HbnnNullArgument;
    };
    *out = Box::into_raw(Box::new(HbnnBitTensor {
        bits: BitTensor::pack(signs),
    }));
    HbnnStatus::HbnnOk
}

/// # Safety
/// `bits` must be null or a pointer from [`hbnn_bits_pack`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hbnn_bits_free(bits: *mut HbnnBitTensor) {
    if !bits.is_null() {
        drop(Box::from_raw(bits));
    }
}

/// Number of logical (±1) elements in a packed tensor.
///
/// # Safety
/// `bits` must be a valid packed tensor.
#[no_mangle]
pub unsafe extern "C" fn hbnn_bits_len(bits: *const HbnnBitTensor) -> usize {
    bits.as_ref().map_or(0, |b| b.bits.logical_len())
}

/// Unpack to ±1.0 doubles; `out` must hold `hbnn_bits_len` doubles.
///
/// # Safety
/// `bits` must be valid; `out` must hold the logical length.
#[no_mangle]
pub unsafe extern "C" fn hbnn_bits_unpack(
    bits: *const HbnnBitTensor,
    out: *mut f64,
) -> HbnnStatus {
    let Some(b) = bits.as_ref() else {
        return HbnnStatus::HbnnNullArgument;
    };
    let Some(out) = slice_out(out, b.bits.logical_len()) else {
        return HbnnStatus::HbnnNullArgument;
    };
    out.copy_from_slice(&b.bits.unpack());
    HbnnStatus::HbnnOk
}

/// XNOR/popcount dot product of two packed ±1 tensors of equal length.
///
/// # Safety
/// `a` and `b` must be valid packed tensors; `out` must hold one i64.
#[no_mangle]
pub unsafe extern "C" fn hbnn_bits_xnor_dot(
    a: *const HbnnBitTensor,
    b: *const HbnnBitTensor,
    out: *mut i64,
) -> HbnnStatus {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        return HbnnStatus::HbnnNullArgument;
    };
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    match hbnn::binarize::xnor_popcount_dot(&a.bits, &b.bits) {
        Ok(v) => {
            *out = v;
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// Create a basepoint cluster: candidate 0 at the origin, the rest sampled
/// deterministically from `seed`.
///
/// # Safety
/// `ball` must be valid; `out` receives an owned cluster released with
/// [`hbnn_cluster_free`].
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_new(
    ball: *const HbnnBall,
    t: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut HbnnCluster,
) -> HbnnStatus {
    let cfg = try_ball!(ball);
    if out.is_null() {
        return HbnnStatus::HbnnNullArgument;
    }
    match Cluster::init(t, dim, seed, *cfg) {
        Ok(cluster) => {
            *out = Box::into_raw(Box::new(HbnnCluster { cluster }));
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// # Safety
/// `cluster` must be null or a pointer from [`hbnn_cluster_new`].
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_free(cluster: *mut HbnnCluster) {
    if !cluster.is_null() {
        drop(Box::from_raw(cluster));
    }
}

/// Currently selected candidate index.
///
/// # Safety
/// `cluster` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_selected(cluster: *const HbnnCluster) -> usize {
    cluster.as_ref().map_or(0, |c| c.cluster.selected())
}

/// Select a candidate by index.
///
/// # Safety
/// `cluster` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_set_selected(
    cluster: *mut HbnnCluster,
    index: usize,
) -> HbnnStatus {
    let Some(c) = cluster.as_mut() else {
        return HbnnStatus::HbnnNullArgument;
    };
    match c.cluster.set_selected(index) {
        Ok(()) => HbnnStatus::HbnnOk,
        Err(e) => status_of(&e),
    }
}

/// Map a latent vector through the selected candidate.
///
/// # Safety
/// `w` and `out` must be valid for the cluster dimension.
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_map_selected(
    cluster: *const HbnnCluster,
    w: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let Some(c) = cluster.as_ref() else {
        return HbnnStatus::HbnnNullArgument;
    };
    let (Some(w), Some(out)) = (slice_in(w, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    let lw = match LatentWeight::new(w.to_vec()) {
        Ok(l) => l,
        Err(e) => return status_of(&e),
    };
    match epc_map_selected(&lw, &c.cluster) {
        Ok(p) => {
            out.copy_from_slice(p.coords());
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// Invert the selected candidate's map.
///
/// # Safety
/// `y` and `out` must be valid for the cluster dimension.
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_inverse(
    cluster: *const HbnnCluster,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let Some(c) = cluster.as_ref() else {
        return HbnnStatus::HbnnNullArgument;
    };
    let (Some(y), Some(out)) = (slice_in(y, len), slice_out(out, len)) else {
        return HbnnStatus::HbnnNullArgument;
    };
    let by = match ball_point(y, c.cluster.cfg()) {
        Ok(b) => b,
        Err(s) => return s,
    };
    match epc_inverse(&by, &c.cluster) {
        Ok(w) => {
            out.copy_from_slice(w.coords());
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// Pull a gradient at the mapped weight back into latent space
/// (`Jᵀ·cotangent` of the selected candidate's map).
///
/// # Safety
/// `w`, `cotangent` and `out` must be valid for the cluster dimension.
#[no_mangle]
pub unsafe extern "C" fn hbnn_cluster_vjp(
    cluster: *const HbnnCluster,
    w: *const f64,
    cotangent: *const f64,
    len: usize,
    out: *mut f64,
) -> HbnnStatus {
    let Some(c) = cluster.as_ref() else {
        return HbnnStatus::HbnnNullArgument;
    };
    let (Some(w), Some(g), Some(out)) = (
        slice_in(w, len),
        slice_in(cotangent, len),
        slice_out(out, len),
    ) else {
        return HbnnStatus::HbnnNullArgument;
    };
    let lw = match LatentWeight::new(w.to_vec()) {
        Ok(l) => l,
        Err(e) => return status_of(&e),
    };
    match epc_vjp(&lw, &c.cluster, g) {
        Ok(v) => {
            out.copy_from_slice(&v);
            HbnnStatus::HbnnOk
        }
        Err(e) => status_of(&e),
    }
}

/// Parameter size (MB) and operation counts of an architecture descriptor
/// given as JSON, plus its full-precision baseline.
///
/// # Safety
/// `json` must be a NUL-terminated string; out-pointers must each hold one
/// double.
#[no_mangle]
pub unsafe extern "C" fn hbnn_arch_cost_from_json(
    json: *const c_char,
    size_mb: *mut f64,
    ops: *mut f64,
    fp_size_mb: *mut f64,
    fp_ops: *mut f64,
) -> HbnnStatus {
    if json.is_null() || size_mb.is_null() || ops.is_null() || fp_size_mb.is_null() || fp_ops.is_null()
    {
        return HbnnStatus::HbnnNullArgument;
    }
    let Ok(text) = CStr::from_ptr(json).to_str() else {
        return HbnnStatus::HbnnParseError;
    };
    let arch = match ArchDescriptor::from_json(text) {
        Ok(a) => a,
        Err(e) => return status_of(&e),
    };
    let cost = match count_params_ops(&arch) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    let fp = match count_params_ops(&arch.to_full_precision()) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    *size_mb = cost.size_mb;
    *ops = cost.ops;
    *fp_size_mb = fp.size_mb;
    *fp_ops = fp.ops;
    HbnnStatus::HbnnOk
}
