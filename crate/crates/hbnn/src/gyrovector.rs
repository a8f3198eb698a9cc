//! Poincaré-ball gyrovector algebra.
//!
//! The ball `{x : r‖x‖² < 1}` of radius `1/√r` carries the conformal metric
//! `λ_x² g^E` with `λ_x = 2/(1 − r‖x‖²)`. Möbius addition and scalar
//! multiplication make it a gyrovector space; the exponential and logarithmic
//! maps here use a fixed basepoint convention: the tangent space is taken at
//! the origin (`λ = 2`) and the result is left-translated, so every map is an
//! isometric translate of `exp₀` and `d(b, exp(b, v)) = 2‖v‖` holds exactly.
//!
//! All operations are pure and all values immutable once constructed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{all_finite, dot, norm, norm_sq, scale};

/// Ball parameters: `radius_param` is the `r` in `r‖x‖² < 1` (the ball radius
/// is `1/√r`), plus the numerical guard widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    pub radius_param: f64,
    /// Below this norm a vector is treated as zero wherever `v/‖v‖` appears.
    pub eps_zero: f64,
    /// Projection margin: points are kept at norm ≤ (1 − eps_boundary)/√r.
    pub eps_boundary: f64,
}

impl BallConfig {
    pub const DEFAULT_EPS_ZERO: f64 = 1e-12;
    pub const DEFAULT_EPS_BOUNDARY: f64 = 1e-5;

    pub fn new(radius_param: f64) -> Result<Self> {
        Self::with_eps(
            radius_param,
            Self::DEFAULT_EPS_ZERO,
            Self::DEFAULT_EPS_BOUNDARY,
        )
    }

    pub fn with_eps(radius_param: f64, eps_zero: f64, eps_boundary: f64) -> Result<Self> {
        if !(radius_param > 0.0) || !radius_param.is_finite() {
            return Err(Error::Domain(format!(
                "radius_param must be strictly positive, got {radius_param}"
            )));
        }
        if !(eps_zero > 0.0) {
            return Err(Error::Domain(format!(
                "eps_zero must be positive, got {eps_zero}"
            )));
        }
        if !(eps_boundary > 0.0 && eps_boundary < 1.0) {
            return Err(Error::Domain(format!(
                "eps_boundary must lie in (0, 1), got {eps_boundary}"
            )));
        }
        Ok(Self {
            radius_param,
            eps_zero,
            eps_boundary,
        })
    }

    #[inline]
    pub fn sqrt_r(&self) -> f64 {
        self.radius_param.sqrt()
    }

    /// Largest Euclidean norm retained by [`project_to_ball`].
    #[inline]
    pub fn max_norm(&self) -> f64 {
        (1.0 - self.eps_boundary) / self.sqrt_r()
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, cfg: &BallConfig) -> Result<Self> {
        if !all_finite(&coords) {
            return Err(Error::Domain("ball point has non-finite entries".into()));
        }
        let nsq = norm_sq(&coords);
        if cfg.radius_param * nsq >= 1.0 {
            return Err(Error::Domain(format!(
                "point with r‖x‖² = {} is not inside the ball",
                cfg.radius_param * nsq
            )));
        }
        Ok(Self { coords })
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    /// The ball is closed under negation; `-x` needs no re-validation.
    pub fn neg(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Caller guarantees the invariant (used on hot paths where the value was
    /// just produced by a closed operation).
    pub(crate) fn new_unchecked(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// A tangent vector; the tangent space is identified with ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    coords: Vec<f64>,
}

impl TangentVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if !all_finite(&coords) {
            return Err(Error::Domain(
                "tangent vector has non-finite entries".into(),
            ));
        }
        Ok(Self { coords })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Conformal factor `λ_x = 2/(1 − r‖x‖²)`; at the origin this is 2 and it
/// grows toward the boundary.
pub fn conformal_factor(x: &BallPoint, cfg: &BallConfig) -> Result<f64> {
    let denom = 1.0 - cfg.radius_param * norm_sq(x.coords());
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "conformal factor undefined: 1 − r‖x‖² = {denom}"
        )));
    }
    Ok(2.0 / denom)
}

/// Möbius addition
/// `p ⊕ q = [(1 + 2r⟨p,q⟩ + r‖q‖²)p + (1 − r‖p‖²)q] / [1 + 2r⟨p,q⟩ + r²‖p‖²‖q‖²]`.
///
/// The coefficients are arranged so that `0 ⊕ q = q` and `(−p) ⊕ p = 0` hold
/// bit-exactly, not just to rounding.
pub fn mobius_add(p: &BallPoint, q: &BallPoint, cfg: &BallConfig) -> BallPoint {
    debug_assert_eq!(p.dim(), q.dim());
    let r = cfg.radius_param;
    let pq = dot(p.coords(), q.coords());
    let np = norm_sq(p.coords());
    let nq = norm_sq(q.coords());

    // a = 1 + 2r⟨p,q⟩ + r‖q‖², factored so that q = −p gives a ≡ b exactly.
    let a = 1.0 + r * (2.0 * pq + nq);
    let b = 1.0 - r * np;
    let d = 1.0 + r * (2.0 * pq + r * np * nq);

    let out: Vec<f64> = p
        .coords()
        .iter()
        .zip(q.coords())
        .map(|(pi, qi)| (a * pi + b * qi) / d)
        .collect();
    project_to_ball(&out, cfg)
}

/// Möbius scalar multiplication
/// `c ⊗ p = (1/√r)·tanh(c·tanh⁻¹(√r‖p‖))·p/‖p‖`, with `c ⊗ 0 := 0`.
pub fn mobius_scalar_mul(c: f64, p: &BallPoint, cfg: &BallConfig) -> BallPoint {
    let n = norm(p.coords());
    if n < cfg.eps_zero {
        return BallPoint::origin(p.dim());
    }
    let sr = cfg.sqrt_r();
    let t = (c * (sr * n).atanh()).tanh();
    let factor = t / (sr * n);
    project_to_ball(&scale(p.coords(), factor), cfg)
}

/// Exponential map with the origin-basepoint convention:
/// `exp(b, v) = b ⊕ (tanh(√r‖v‖)·v/(√r‖v‖))`, and `exp(b, 0) = b`.
pub fn exp_map(base: &BallPoint, v: &TangentVec, cfg: &BallConfig) -> BallPoint {
    debug_assert_eq!(base.dim(), v.dim());
    let seg = tangent_segment(v.coords(), cfg);
    mobius_add(base, &seg, cfg)
}

/// The ball element `tanh(√r‖v‖)·v/(√r‖v‖)` shared by every basepoint; this
/// is `exp(0, v)` itself.
pub(crate) fn tangent_segment(v: &[f64], cfg: &BallConfig) -> BallPoint {
    let n = norm(v);
    if n < cfg.eps_zero {
        return BallPoint::new_unchecked(v.to_vec());
    }
    let sr = cfg.sqrt_r();
    let factor = (sr * n).tanh() / (sr * n);
    project_to_ball(&scale(v, factor), cfg)
}

/// Inverse of [`exp_map`] at the same basepoint:
/// `log(b, y) = (1/√r)·tanh⁻¹(√r‖u‖)·u/‖u‖` with `u = (−b) ⊕ y`.
pub fn log_map(base: &BallPoint, y: &BallPoint, cfg: &BallConfig) -> TangentVec {
    debug_assert_eq!(base.dim(), y.dim());
    let u = mobius_add(&base.neg(), y, cfg);
    let n = norm(u.coords());
    if n < cfg.eps_zero {
        return TangentVec::zero(base.dim());
    }
    let sr = cfg.sqrt_r();
    let factor = (sr * n).atanh() / (sr * n);
    TangentVec {
        coords: scale(u.coords(), factor),
    }
}

/// Geodesic distance `d(p, q) = (2/√r)·tanh⁻¹(√r‖(−p) ⊕ q‖)`.
pub fn geodesic_distance(p: &BallPoint, q: &BallPoint, cfg: &BallConfig) -> f64 {
    let u = mobius_add(&p.neg(), q, cfg);
    let sr = cfg.sqrt_r();
    (2.0 / sr) * (sr * norm(u.coords())).atanh()
}

/// Clip a raw vector into the ball interior: vectors at squared norm below
/// `(1 − eps_boundary)²/r` pass through unchanged, anything else is rescaled
/// onto that margin sphere.
pub fn project_to_ball(x: &[f64], cfg: &BallConfig) -> BallPoint {
    let nsq = norm_sq(x);
    let margin = 1.0 - cfg.eps_boundary;
    if cfg.radius_param * nsq < margin * margin {
        return BallPoint::new_unchecked(x.to_vec());
    }
    let factor = cfg.max_norm() / nsq.sqrt();
    BallPoint::new_unchecked(scale(x, factor))
}

/// Vector–Jacobian product of `q ↦ p ⊕ q` (Möbius addition in its second
/// argument): returns `J_qᵀ·g`.
pub fn mobius_add_vjp_q(p: &BallPoint, q: &BallPoint, g: &[f64], cfg: &BallConfig) -> Vec<f64> {
    let r = cfg.radius_param;
    let pc = p.coords();
    let qc = q.coords();
    let pq = dot(pc, qc);
    let np = norm_sq(pc);
    let nq = norm_sq(qc);
    let a = 1.0 + r * (2.0 * pq + nq);
    let b = 1.0 - r * np;
    let d = 1.0 + r * (2.0 * pq + r * np * nq);

    let pg = dot(pc, g);
    // N = a·p + b·q; ⟨N, g⟩
    let ng = a * pg + b * dot(qc, g);

    // ∂A/∂q = 2r(p + q), ∂D/∂q = 2r·p + 2r²‖p‖²·q, ∂N/∂q = p(∂A/∂q)ᵀ + b·I
    let inv_d = 1.0 / d;
    let inv_d2 = inv_d * inv_d;
    (0..pc.len())
        .map(|i| {
            let da = 2.0 * r * (pc[i] + qc[i]);
            let dd = 2.0 * r * pc[i] + 2.0 * r * r * np * qc[i];
            inv_d * (da * pg + b * g[i]) - inv_d2 * ng * dd
        })
        .collect()
}

/// Vector–Jacobian product of `p ↦ p ⊕ q` (Möbius addition in its first
/// argument): returns `J_pᵀ·g`.
pub fn mobius_add_vjp_p(p: &BallPoint, q: &BallPoint, g: &[f64], cfg: &BallConfig) -> Vec<f64> {
    let r = cfg.radius_param;
    let pc = p.coords();
    let qc = q.coords();
    let pq = dot(pc, qc);
    let np = norm_sq(pc);
    let nq = norm_sq(qc);
    let a = 1.0 + r * (2.0 * pq + nq);
    let b = 1.0 - r * np;
    let d = 1.0 + r * (2.0 * pq + r * np * nq);

    let pg = dot(pc, g);
    let qg = dot(qc, g);
    let ng = a * pg + b * qg;

    // ∂A/∂p = 2r·q, ∂B/∂p = −2r·p, ∂D/∂p = 2r·q + 2r²‖q‖²·p,
    // ∂N/∂p = A·I + p(∂A/∂p)ᵀ + q(∂B/∂p)ᵀ
    let inv_d = 1.0 / d;
    let inv_d2 = inv_d * inv_d;
    (0..pc.len())
        .map(|i| {
            let dd = 2.0 * r * qc[i] + 2.0 * r * r * nq * pc[i];
            inv_d * (a * g[i] + 2.0 * r * qc[i] * pg - 2.0 * r * pc[i] * qg) - inv_d2 * ng * dd
        })
        .collect()
}
