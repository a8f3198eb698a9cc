//! Exponential parametrization cluster.
//!
//! A cluster holds `t` trainable basepoints `F₁..F_t` in the ball. A latent
//! Euclidean weight vector `w̃` is mapped through the exponential map at each
//! basepoint; training selects the candidate with the lowest loss and
//! optimizes `w̃` in plain Euclidean space through that map. With `t = 1` and
//! `F₁ = 0` this reduces to the ordinary exponential map at the origin.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gyrovector::{
    log_map, mobius_add, mobius_add_vjp_p, mobius_add_vjp_q, mobius_scalar_mul, project_to_ball,
    tangent_segment, BallConfig, BallPoint,
};
use crate::vecops::{all_finite, dot, norm, scale};

/// Unconstrained Euclidean weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentWeight {
    coords: Vec<f64>,
}

impl LatentWeight {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if !all_finite(&coords) {
            return Err(Error::Domain(
                "latent weight has non-finite entries".into(),
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

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Ordered list of basepoints plus the currently selected index (0-based).
#[derive(Debug, Clone)]
pub struct Cluster {
    candidates: Vec<BallPoint>,
    selected: usize,
    cfg: BallConfig,
}

impl Cluster {
    /// Candidate 0 is always the exact origin, so the plain exponential map
    /// is always available to the selection step. The remaining candidates
    /// are sampled uniformly from the ball of Euclidean radius `0.1/√r`,
    /// deterministically in `seed`.
    pub fn init(t: usize, dim: usize, seed: u64, cfg: BallConfig) -> Result<Self> {
        if t == 0 || dim == 0 {
            return Err(Error::Domain(format!(
                "cluster needs t ≥ 1 and dim ≥ 1, got t = {t}, dim = {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut candidates = Vec::with_capacity(t);
        candidates.push(BallPoint::origin(dim));
        let radius = 0.1 / cfg.sqrt_r();
        for _ in 1..t {
            candidates.push(sample_in_ball(&mut rng, dim, radius, &cfg));
        }
        Ok(Self {
            candidates,
            selected: 0,
            cfg,
        })
    }

    pub fn from_candidates(
        candidates: Vec<BallPoint>,
        selected: usize,
        cfg: BallConfig,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyCluster);
        }
        if selected >= candidates.len() {
            return Err(Error::Domain(format!(
                "selected index {selected} out of range for {} candidates",
                candidates.len()
            )));
        }
        let dim = candidates[0].dim();
        if candidates.iter().any(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: candidates.iter().map(|c| c.dim()).find(|d| *d != dim).unwrap(),
            });
        }
        Ok(Self {
            candidates,
            selected,
            cfg,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.candidates[0].dim()
    }

    #[inline]
    pub fn selected(&self) -> usize {
        self.selected
    }

    pub fn set_selected(&mut self, idx: usize) -> Result<()> {
        if idx >= self.candidates.len() {
            return Err(Error::Domain(format!(
                "selected index {idx} out of range for {} candidates",
                self.candidates.len()
            )));
        }
        self.selected = idx;
        Ok(())
    }

    #[inline]
    pub fn candidate(&self, j: usize) -> &BallPoint {
        &self.candidates[j]
    }

    pub fn candidates(&self) -> &[BallPoint] {
        &self.candidates
    }

    #[inline]
    pub fn cfg(&self) -> &BallConfig {
        &self.cfg
    }

    /// One Riemannian gradient step per candidate:
    /// `F_j ← F_j ⊕ ((−eta) ⊗ lift(g_j))` where `lift` clips the Euclidean
    /// gradient into the ball. Zero gradients leave a candidate untouched.
    pub fn apply_grad_step(&mut self, grads: &[Vec<f64>], eta: f64) -> Result<()> {
        if grads.len() != self.candidates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.candidates.len(),
                got: grads.len(),
            });
        }
        let dim = self.dim();
        for (f, g) in self.candidates.iter_mut().zip(grads) {
            if g.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: g.len(),
                });
            }
            if eta == 0.0 || g.iter().all(|x| *x == 0.0) {
                continue;
            }
            let lifted = project_to_ball(g, &self.cfg);
            let step = mobius_scalar_mul(-eta, &lifted, &self.cfg);
            *f = mobius_add(f, &step, &self.cfg);
        }
        Ok(())
    }
}

fn sample_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64, cfg: &BallConfig) -> BallPoint {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&dir).max(1e-300);
    let u: f64 = rng.gen_range(0.0..1.0);
    let target = radius * u.powf(1.0 / dim as f64);
    project_to_ball(&scale(&dir, target / n), cfg)
}

/// Map a latent weight through every candidate. The Euclidean segment
/// `tanh(√r‖w‖)·w/(√r‖w‖)` is shared, so it is computed once and translated
/// `t` times.
pub fn epc_map_all(w: &LatentWeight, cl: &Cluster) -> Result<Vec<BallPoint>> {
    check_dim(cl.dim(), w.dim())?;
    let seg = tangent_segment(w.coords(), &cl.cfg);
    Ok(cl
        .candidates
        .iter()
        .map(|f| mobius_add(f, &seg, &cl.cfg))
        .collect())
}

/// Map through the selected candidate only. Matches
/// `epc_map_all(w, cl)[cl.selected()]` bit for bit.
pub fn epc_map_selected(w: &LatentWeight, cl: &Cluster) -> Result<BallPoint> {
    check_dim(cl.dim(), w.dim())?;
    let seg = tangent_segment(w.coords(), &cl.cfg);
    Ok(mobius_add(&cl.candidates[cl.selected], &seg, &cl.cfg))
}

/// Inverse of [`epc_map_selected`]: recovers the latent weight of a mapped
/// point through the selected candidate.
pub fn epc_inverse(y: &BallPoint, cl: &Cluster) -> Result<LatentWeight> {
    check_dim(cl.dim(), y.dim())?;
    let v = log_map(&cl.candidates[cl.selected], y, &cl.cfg);
    Ok(LatentWeight {
        coords: v.into_coords(),
    })
}

/// Vector–Jacobian product of `w ↦ epc_map_selected(w, cl)`: returns
/// `Jᵀ·cotangent`, the pullback of a gradient at the mapped weight into
/// latent space.
pub fn epc_vjp(w: &LatentWeight, cl: &Cluster, cotangent: &[f64]) -> Result<Vec<f64>> {
    check_dim(cl.dim(), w.dim())?;
    check_dim(cl.dim(), cotangent.len())?;
    let cfg = &cl.cfg;
    let seg = tangent_segment(w.coords(), cfg);
    let g2 = mobius_add_vjp_q(&cl.candidates[cl.selected], &seg, cotangent, cfg);
    Ok(segment_vjp(w.coords(), &g2, cfg))
}

/// Vector–Jacobian product of `F ↦ F ⊕ segment(w)` at the selected candidate:
/// the gradient of the loss with respect to the basepoint itself.
pub fn epc_basepoint_vjp(w: &LatentWeight, cl: &Cluster, cotangent: &[f64]) -> Result<Vec<f64>> {
    check_dim(cl.dim(), w.dim())?;
    check_dim(cl.dim(), cotangent.len())?;
    let cfg = &cl.cfg;
    let seg = tangent_segment(w.coords(), cfg);
    Ok(mobius_add_vjp_p(
        &cl.candidates[cl.selected],
        &seg,
        cotangent,
        cfg,
    ))
}

/// Pullback through `w ↦ tanh(√r‖w‖)·w/(√r‖w‖)`. The Jacobian is
/// `h(t)·I + c(t)·wwᵀ` with `h(t) = tanh(√r t)/(√r t)`; a series expansion
/// covers the cancellation-prone region near `t = 0`.
fn segment_vjp(w: &[f64], g: &[f64], cfg: &BallConfig) -> Vec<f64> {
    let t = norm(w);
    if t < cfg.eps_zero {
        return g.to_vec();
    }
    let r = cfg.radius_param;
    let st = cfg.sqrt_r() * t;
    let th = st.tanh();
    let h = th / st;
    let coef = if st < 1e-4 {
        -(2.0 / 3.0) * r + (8.0 / 15.0) * r * r * t * t
    } else {
        let sech2 = 1.0 - th * th;
        (sech2 - h) / (t * t)
    };
    let wg = dot(w, g);
    g.iter()
        .zip(w)
        .map(|(gi, wi)| h * gi + coef * wg * wi)
        .collect()
}

/// Index of the smallest loss; ties break toward the lowest index.
pub fn select_optimal(candidate_losses: &[f64]) -> Result<usize> {
    if candidate_losses.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if let Some(bad) = candidate_losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss(format!(
            "candidate loss {bad} is not finite"
        )));
    }
    let mut best = 0;
    for (i, l) in candidate_losses.iter().enumerate().skip(1) {
        if *l < candidate_losses[best] {
            best = i;
        }
    }
    Ok(best)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gyrovector::{exp_map, geodesic_distance, TangentVec};

    fn cfg(r: f64) -> BallConfig {
        BallConfig::new(r).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn map_all_of_zero_returns_candidates() {
        let cl = Cluster::init(4, 6, 3, cfg(0.05)).unwrap();
        let out = epc_map_all(&LatentWeight::zero(6), &cl).unwrap();
        for (o, f) in out.iter().zip(cl.candidates()) {
            assert_eq!(o.coords(), f.coords());
        }
    }

    #[test]
    fn single_origin_candidate_equals_plain_exp_map() {
        let c = cfg(0.05);
        let cl = Cluster::init(1, 5, 0, c).unwrap();
        let mut r = rng(4);
        for _ in 0..100 {
            let w: Vec<f64> = (0..5).map(|_| r.gen_range(-3.0..3.0)).collect();
            let lw = LatentWeight::new(w.clone()).unwrap();
            let via_cluster = epc_map_selected(&lw, &cl).unwrap();
            let via_exp = exp_map(
                &BallPoint::origin(5),
                &TangentVec::new(w).unwrap(),
                &c,
            );
            assert_eq!(via_cluster.coords(), via_exp.coords());
        }
    }

    #[test]
    fn map_all_outputs_stay_inside_ball() {
        let c = cfg(1.0);
        let cl = Cluster::init(4, 8, 9, c).unwrap();
        let mut r = rng(5);
        for _ in 0..200 {
            let w: Vec<f64> = (0..8).map(|_| r.gen_range(-10.0..10.0)).collect();
            let out = epc_map_all(&LatentWeight::new(w).unwrap(), &cl).unwrap();
            for p in out {
                assert!(c.radius_param * crate::vecops::norm_sq(p.coords()) < 1.0);
            }
        }
    }

    #[test]
    fn selected_matches_indexed_map_all_bitwise() {
        let c = cfg(0.05);
        let mut cl = Cluster::init(4, 7, 11, c).unwrap();
        let mut r = rng(6);
        for sel in 0..4 {
            cl.set_selected(sel).unwrap();
            let w: Vec<f64> = (0..7).map(|_| r.gen_range(-2.0..2.0)).collect();
            let lw = LatentWeight::new(w).unwrap();
            let all = epc_map_all(&lw, &cl).unwrap();
            let one = epc_map_selected(&lw, &cl).unwrap();
            assert_eq!(one.coords(), all[sel].coords());
        }
    }

    #[test]
    fn inverse_roundtrip_every_candidate_both_radii() {
        for r_param in [0.05, 1.0] {
            let c = cfg(r_param);
            let mut cl = Cluster::init(4, 6, 21, c).unwrap();
            let mut r = rng(7);
            for _ in 0..250 {
                for sel in 0..4 {
                    cl.set_selected(sel).unwrap();
                    let w: Vec<f64> = (0..6).map(|_| r.gen_range(-2.0..2.0)).collect();
                    let lw = LatentWeight::new(w.clone()).unwrap();
                    let y = epc_map_selected(&lw, &cl).unwrap();
                    let back = epc_inverse(&y, &cl).unwrap();
                    for i in 0..6 {
                        assert!((back.coords()[i] - w[i]).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_of_selected_candidate_is_zero() {
        let cl = Cluster::init(3, 5, 2, cfg(0.05)).unwrap();
        let back = epc_inverse(cl.candidate(cl.selected()), &cl).unwrap();
        assert!(norm(back.coords()) <= 1e-12);
    }

    #[test]
    fn inverse_matches_log_map_example() {
        // t = 1, F₁ = 0, r = 1: y = (tanh 1, 0) → (1, 0)
        let c = cfg(1.0);
        let cl = Cluster::init(1, 2, 0, c).unwrap();
        let y = BallPoint::new(vec![1.0_f64.tanh(), 0.0], &c).unwrap();
        let w = epc_inverse(&y, &cl).unwrap();
        assert!((w.coords()[0] - 1.0).abs() < 1e-12);
        assert!(w.coords()[1].abs() < 1e-12);
    }

    #[test]
    fn vjp_euclidean_limit_is_identity() {
        let c = cfg(1e-10);
        let cl = Cluster::init(2, 6, 13, c).unwrap();
        let mut r = rng(8);
        for _ in 0..50 {
            let w: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let out = epc_vjp(&LatentWeight::new(w).unwrap(), &cl, &g).unwrap();
            for i in 0..6 {
                assert!((out[i] - g[i]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for r_param in [0.05, 1.0] {
            let c = cfg(r_param);
            let mut cl = Cluster::init(4, 16, 17, c).unwrap();
            cl.set_selected(2).unwrap();
            let mut r = rng(9);
            for _ in 0..10 {
                let w: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
                let g: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
                let lw = LatentWeight::new(w.clone()).unwrap();
                let analytic = epc_vjp(&lw, &cl, &g).unwrap();
                let h = 1e-6;
                for i in 0..16 {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += h;
                    wm[i] -= h;
                    let fp = dot(
                        epc_map_selected(&LatentWeight::new(wp).unwrap(), &cl)
                            .unwrap()
                            .coords(),
                        &g,
                    );
                    let fm = dot(
                        epc_map_selected(&LatentWeight::new(wm).unwrap(), &cl)
                            .unwrap()
                            .coords(),
                        &g,
                    );
                    let fd = (fp - fm) / (2.0 * h);
                    let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
                    assert!(err <= 1e-4, "r={r_param} i={i}: {} vs {}", analytic[i], fd);
                }
            }
        }
    }

    #[test]
    fn basepoint_vjp_matches_finite_differences() {
        let c = cfg(0.05);
        let mut cl = Cluster::init(3, 8, 23, c).unwrap();
        cl.set_selected(1).unwrap();
        let mut r = rng(10);
        let w: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let lw = LatentWeight::new(w.clone()).unwrap();
        let analytic = epc_basepoint_vjp(&lw, &cl, &g).unwrap();
        let h = 1e-6;
        let f_base = cl.candidate(1).coords().to_vec();
        for i in 0..8 {
            let eval = |delta: f64| {
                let mut fc = f_base.clone();
                fc[i] += delta;
                let mut cl2 = cl.clone();
                cl2.candidates[1] = BallPoint::new(fc, &c).unwrap();
                dot(epc_map_selected(&lw, &cl2).unwrap().coords(), &g)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
            assert!(err <= 1e-4, "i={i}: {} vs {}", analytic[i], fd);
        }
    }

    #[test]
    fn vjp_finite_at_zero_weight() {
        let cl = Cluster::init(2, 4, 29, cfg(0.05)).unwrap();
        let out = epc_vjp(&LatentWeight::zero(4), &cl, &[1.0, -2.0, 0.5, 0.0]).unwrap();
        assert!(all_finite(&out));
    }

    #[test]
    fn grad_step_noop_cases() {
        let mut cl = Cluster::init(3, 5, 31, cfg(0.05)).unwrap();
        let before: Vec<Vec<f64>> = cl.candidates().iter().map(|c| c.coords().to_vec()).collect();
        cl.apply_grad_step(&vec![vec![0.0; 5]; 3], 0.1).unwrap();
        for (b, a) in before.iter().zip(cl.candidates()) {
            assert_eq!(&b[..], a.coords());
        }
        let grads: Vec<Vec<f64>> = (0..3).map(|i| vec![0.1 * (i as f64 + 1.0); 5]).collect();
        cl.apply_grad_step(&grads, 0.0).unwrap();
        for (b, a) in before.iter().zip(cl.candidates()) {
            assert_eq!(&b[..], a.coords());
        }
    }

    #[test]
    fn grad_step_euclidean_limit_is_sgd() {
        let c = cfg(1e-10);
        let candidates = vec![
            BallPoint::new(vec![0.2, -0.5, 0.9, 0.1], &c).unwrap(),
            BallPoint::new(vec![-1.2, 0.4, 0.0, 0.7], &c).unwrap(),
        ];
        let mut cl = Cluster::from_candidates(candidates, 0, c).unwrap();
        let before: Vec<Vec<f64>> = cl.candidates().iter().map(|p| p.coords().to_vec()).collect();
        let grads = vec![vec![0.3, -0.2, 0.1, 0.05], vec![-0.4, 0.2, 0.0, 0.6]];
        let eta = 0.25;
        cl.apply_grad_step(&grads, eta).unwrap();
        for j in 0..2 {
            for i in 0..4 {
                let expect = before[j][i] - eta * grads[j][i];
                assert!((cl.candidate(j).coords()[i] - expect).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn grad_step_preserves_ball_invariant() {
        let c = cfg(1.0);
        let mut cl = Cluster::init(4, 6, 41, c).unwrap();
        let mut r = rng(11);
        for _ in 0..50 {
            let grads: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..6).map(|_| r.gen_range(-5.0..5.0)).collect())
                .collect();
            cl.apply_grad_step(&grads, 0.5).unwrap();
            for p in cl.candidates() {
                assert!(c.radius_param * crate::vecops::norm_sq(p.coords()) < 1.0);
            }
        }
    }

    #[test]
    fn select_optimal_examples() {
        assert_eq!(select_optimal(&[0.7, 0.3, 0.5]).unwrap(), 1);
        assert_eq!(select_optimal(&[0.4, 0.4]).unwrap(), 0);
        assert_eq!(select_optimal(&[2.0]).unwrap(), 0);
        assert!(matches!(select_optimal(&[]), Err(Error::EmptyCluster)));
        assert!(matches!(
            select_optimal(&[0.1, f64::NAN]),
            Err(Error::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = cfg(0.05);
        let a = Cluster::init(4, 10, 99, c).unwrap();
        let b = Cluster::init(4, 10, 99, c).unwrap();
        for (x, y) in a.candidates().iter().zip(b.candidates()) {
            assert_eq!(x.coords(), y.coords());
        }
        assert_eq!(a.selected(), 0);
        assert_eq!(a.candidate(0).coords(), &vec![0.0; 10][..]);
        for f in a.candidates() {
            // ‖F‖ ≤ 0.1/√r, i.e. r‖F‖² ≤ 0.01
            assert!(c.radius_param * crate::vecops::norm_sq(f.coords()) <= 0.01 + 1e-15);
        }
        let single = Cluster::init(1, 3, 5, c).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.candidate(0).coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn cluster_never_needs_longer_tangent_than_single_map() {
        // With the origin among the candidates, min_j ‖log(F_j, y)‖ can only
        // improve on ‖log(0, y)‖.
        let c = cfg(0.05);
        let cl = Cluster::init(4, 6, 51, c).unwrap();
        let mut r = rng(12);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y = project_to_ball(&scale(&raw, r.gen_range(0.0..0.9) / c.sqrt_r() / norm(&raw).max(1e-12)), &c);
            let single = norm(log_map(&BallPoint::origin(6), &y, &c).coords());
            let best = cl
                .candidates()
                .iter()
                .map(|f| norm(log_map(f, &y, &c).coords()))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= single + 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let cl = Cluster::init(2, 4, 1, cfg(0.05)).unwrap();
        let w = LatentWeight::zero(5);
        assert!(matches!(
            epc_map_all(&w, &cl),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            epc_vjp(&LatentWeight::zero(4), &cl, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn translated_maps_are_isometric() {
        let c = cfg(0.05);
        let cl = Cluster::init(4, 5, 61, c).unwrap();
        let mut r = rng(13);
        for _ in 0..100 {
            let w1: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
            let l1 = LatentWeight::new(w1).unwrap();
            let l2 = LatentWeight::new(w2).unwrap();
            let all1 = epc_map_all(&l1, &cl).unwrap();
            let all2 = epc_map_all(&l2, &cl).unwrap();
            let d0 = geodesic_distance(&all1[0], &all2[0], &c);
            for j in 1..4 {
                let dj = geodesic_distance(&all1[j], &all2[j], &c);
                assert!((dj - d0).abs() <= 1e-8);
            }
        }
    }
}
