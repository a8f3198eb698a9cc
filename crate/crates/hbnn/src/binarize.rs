//! Sign binarization, straight-through estimators, and bit-packed
//! XNOR/popcount arithmetic.
//!
//! Sign vectors over {−1, +1} are packed 64 per word (bit 1 ↔ +1) so that a
//! dot product of two ±1 vectors reduces to
//! `2·popcount(xnor(a, b)) − n`, an exact integer.

use crate::error::{Error, Result};
use crate::gyrovector::BallConfig;

/// Deterministic binarization: +1 where `x ≥ 0`, −1 otherwise. In particular
/// `sign(0) = +1`.
pub fn sign_binarize(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect()
}

/// Bit-packed encoding of a {−1, +1} tensor.
///
/// Invariants: `logical_len ≤ 64·words.len() < logical_len + 64`, and every
/// padding bit beyond `logical_len` is zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitTensor {
    words: Vec<u64>,
    logical_len: usize,
    shape: Vec<usize>,
}

impl BitTensor {
    /// Pack a sign vector (entries interpreted as +1 when ≥ 0).
    pub fn pack(signs: &[f64]) -> Self {
        Self::pack_with_shape(signs, vec![signs.len()])
    }

    pub fn pack_with_shape(signs: &[f64], shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), signs.len());
        let logical_len = signs.len();
        let mut words = vec![0u64; logical_len.div_ceil(64)];
        for (i, s) in signs.iter().enumerate() {
            if *s >= 0.0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self {
            words,
            logical_len,
            shape,
        }
    }

    /// Unpack to a ±1 vector.
    pub fn unpack(&self) -> Vec<f64> {
        (0..self.logical_len)
            .map(|i| {
                if self.words[i / 64] >> (i % 64) & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect()
    }

    #[inline]
    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Convenience wrappers matching the free-function style of the rest of the
/// crate.
pub fn pack_bits(signs: &[f64]) -> BitTensor {
    BitTensor::pack(signs)
}

pub fn unpack_bits(b: &BitTensor) -> Vec<f64> {
    b.unpack()
}

/// `Σᵢ aᵢ·bᵢ` over ±1 values via XNOR and masked popcount.
pub fn xnor_popcount_dot(a: &BitTensor, b: &BitTensor) -> Result<i64> {
    if a.logical_len != b.logical_len {
        return Err(Error::DimensionMismatch {
            expected: a.logical_len,
            got: b.logical_len,
        });
    }
    Ok(xnor_dot_words(&a.words, &b.words, a.logical_len))
}

/// Core kernel on raw words; `len` is the number of valid bits. Padding bits
/// are zero in both inputs, so the xnor sets them to one; the final word is
/// masked to keep only valid positions.
pub(crate) fn xnor_dot_words(a: &[u64], b: &[u64], len: usize) -> i64 {
    debug_assert_eq!(a.len(), b.len());
    let mut agree: u32 = 0;
    let full = len / 64;
    for i in 0..full {
        agree += (!(a[i] ^ b[i])).count_ones();
    }
    let rem = len % 64;
    if rem > 0 {
        let mask = (1u64 << rem) - 1;
        agree += (!(a[full] ^ b[full]) & mask).count_ones();
    }
    2 * agree as i64 - len as i64
}

/// Straight-through mask for the weight gradient: 1 where `|wᵢ| ≤ bound`,
/// else 0, with the clip bound widened from 1 to the ball radius `1/√r`.
/// Mapped weights always lie inside the ball, so for them this mask is
/// identically one.
pub fn ste_weight_grad_mask(w: &[f64], cfg: &BallConfig) -> Vec<f64> {
    let bound = 1.0 / cfg.sqrt_r();
    ste_weight_grad_mask_with_bound(w, bound)
}

pub fn ste_weight_grad_mask_with_bound(w: &[f64], bound: f64) -> Vec<f64> {
    w.iter()
        .map(|v| if v.abs() <= bound { 1.0 } else { 0.0 })
        .collect()
}

/// Piecewise-linear surrogate gradient of the activation binarization:
/// `2 + 2a` on `[−1, 0)`, `2 − 2a` on `[0, 1]`, zero elsewhere.
pub fn ste_activation_grad(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| ste_activation_grad_scalar(*v)).collect()
}

#[inline]
pub(crate) fn ste_activation_grad_scalar(a: f64) -> f64 {
    if (-1.0..0.0).contains(&a) {
        2.0 + 2.0 * a
    } else if (0.0..=1.0).contains(&a) {
        2.0 - 2.0 * a
    } else {
        0.0
    }
}
