//! Runtime property suite over the ball algebra, the cluster
//! parametrization and the binarization kernels. Used by the `math-check`
//! CLI command; the same checks back the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binarize::{pack_bits, ste_activation_grad, unpack_bits, xnor_popcount_dot};
use crate::epc::{epc_inverse, epc_map_all, epc_map_selected, epc_vjp, Cluster, LatentWeight};
use crate::error::{Error, Result};
use crate::gyrovector::{
    exp_map, geodesic_distance, log_map, mobius_add, mobius_scalar_mul, BallConfig, BallPoint,
    TangentVec,
};
use crate::vecops::{dot, norm, norm_sq, scale};

/// Deliberate corruption hooks so the suite can prove it catches regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Negate the first coordinate of every Möbius addition result.
    MobiusSignFlip,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyReport {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

const DIM: usize = 8;

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn point(&mut self, cfg: &BallConfig, max_frac: f64) -> BallPoint {
        let dir: Vec<f64> = (0..DIM).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&dir).max(1e-30);
        let target = self.rng.gen_range(0.0..max_frac) / cfg.sqrt_r();
        BallPoint::new(scale(&dir, target / n), cfg).expect("sampled inside the ball")
    }

    fn tangent(&mut self, lo: f64, hi: f64) -> Vec<f64> {
        (0..DIM).map(|_| self.rng.gen_range(lo..hi)).collect()
    }
}

fn madd(p: &BallPoint, q: &BallPoint, cfg: &BallConfig, fault: FaultInjection) -> BallPoint {
    let out = mobius_add(p, q, cfg);
    match fault {
        FaultInjection::None => out,
        FaultInjection::MobiusSignFlip => {
            let mut c = out.into_coords();
            if !c.is_empty() {
                c[0] = -c[0];
            }
            // the corrupted point is still inside the ball
            BallPoint::new(c, cfg).expect("sign flip preserves the norm")
        }
    }
}

/// Run every property at the given radii. Errors on `trials == 0`; a failed
/// property is reported, not an `Err`.
pub fn run_suite(
    radii: &[f64],
    trials: usize,
    seed: u64,
    fault: FaultInjection,
) -> Result<Vec<PropertyReport>> {
    if trials == 0 {
        return Err(Error::Config(vec!["trials must be ≥ 1".into()]));
    }
    if radii.is_empty() {
        return Err(Error::Config(vec!["at least one radius is required".into()]));
    }
    for r in radii {
        if !(*r > 0.0) || !r.is_finite() {
            return Err(Error::Config(vec![format!("radius must be > 0, got {r}")]));
        }
    }

    let mut reports = Vec::new();
    for &r in radii {
        let cfg = BallConfig::new(r)?;
        let mut s = Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed ^ r.to_bits()),
        };

        // Left identity: 0 ⊕ q = q.
        let mut err = 0.0f64;
        for _ in 0..trials {
            let q = s.point(&cfg, 0.99);
            let got = madd(&BallPoint::origin(DIM), &q, &cfg, fault);
            let e = got
                .coords()
                .iter()
                .zip(q.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err = err.max(e);
        }
        reports.push(PropertyReport::new(format!("left-identity(r={r})"), err, 1e-12));

        // Left inverse: ‖(−p) ⊕ p‖ = 0.
        let mut err = 0.0f64;
        for _ in 0..trials {
            let p = s.point(&cfg, 0.99);
            err = err.max(norm(madd(&p.neg(), &p, &cfg, fault).coords()));
        }
        reports.push(PropertyReport::new(format!("left-inverse(r={r})"), err, 1e-12));

        // Closure: r‖p ⊕ q‖² < 1.
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let p = s.point(&cfg, 0.999);
            let q = s.point(&cfg, 0.999);
            worst = worst.max(r * norm_sq(madd(&p, &q, &cfg, fault).coords()));
        }
        reports.push(PropertyReport {
            name: format!("closure(r={r})"),
            max_error: worst,
            tolerance: 1.0,
            passed: worst < 1.0,
        });

        // Scalar-multiplication distributivity along a ray:
        // (a+b) ⊗ p = (a ⊗ p) ⊕ (b ⊗ p).
        let mut err = 0.0f64;
        for _ in 0..trials {
            let p = s.point(&cfg, 0.95);
            let a = s.rng.gen_range(-2.0..2.0);
            let b = s.rng.gen_range(-2.0..2.0);
            let lhs = mobius_scalar_mul(a + b, &p, &cfg);
            let rhs = madd(
                &mobius_scalar_mul(a, &p, &cfg),
                &mobius_scalar_mul(b, &p, &cfg),
                &cfg,
                fault,
            );
            let e = lhs
                .coords()
                .iter()
                .zip(rhs.coords())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            err = err.max(e);
        }
        reports.push(PropertyReport::new(
            format!("scalar-ray-distributivity(r={r})"),
            err,
            1e-9,
        ));

        // Möbius translation is an isometry: d(F⊕u₁, F⊕u₂) = d(u₁, u₂).
        let mut err = 0.0f64;
        for _ in 0..trials {
            let f = s.point(&cfg, 0.9);
            let u1 = s.point(&cfg, 0.9);
            let u2 = s.point(&cfg, 0.9);
            let d0 = geodesic_distance(&u1, &u2, &cfg);
            let d1 = geodesic_distance(
                &madd(&f, &u1, &cfg, fault),
                &madd(&f, &u2, &cfg, fault),
                &cfg,
            );
            err = err.max((d0 - d1).abs());
        }
        reports.push(PropertyReport::new(
            format!("translation-isometry(r={r})"),
            err,
            1e-8,
        ));

        // Exponential/logarithmic round trips (diffeomorphism).
        let mut err_ev = 0.0f64;
        let mut err_ve = 0.0f64;
        for _ in 0..trials {
            let base = s.point(&cfg, 0.9);
            let v = s.tangent(-2.0, 2.0);
            let tv = TangentVec::new(v.clone()).unwrap();
            let back = log_map(&base, &exp_map(&base, &tv, &cfg), &cfg);
            let e = back
                .coords()
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err_ev = err_ev.max(e);

            let y = s.point(&cfg, 0.9);
            let again = exp_map(&base, &log_map(&base, &y, &cfg), &cfg);
            let e = again
                .coords()
                .iter()
                .zip(y.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err_ve = err_ve.max(e);
        }
        reports.push(PropertyReport::new(format!("log∘exp-roundtrip(r={r})"), err_ev, 1e-6));
        reports.push(PropertyReport::new(format!("exp∘log-roundtrip(r={r})"), err_ve, 1e-6));

        // Geodesic norm: d(F, exp(F, v)) = 2‖v‖.
        let mut err = 0.0f64;
        for _ in 0..trials {
            let base = s.point(&cfg, 0.9);
            let v = s.tangent(-1.5, 1.5);
            let tv = TangentVec::new(v.clone()).unwrap();
            let d = geodesic_distance(&base, &exp_map(&base, &tv, &cfg), &cfg);
            err = err.max((d - 2.0 * norm(&v)).abs());
        }
        reports.push(PropertyReport::new(format!("geodesic-norm(r={r})"), err, 1e-6));

        // Cluster parametrization round trip for every candidate index.
        let mut cl = Cluster::init(4, DIM, seed ^ 0xC1, cfg)?;
        let mut err = 0.0f64;
        for i in 0..trials {
            cl.set_selected(i % 4)?;
            let w = s.tangent(-2.0, 2.0);
            let lw = LatentWeight::new(w.clone()).unwrap();
            let back = epc_inverse(&epc_map_selected(&lw, &cl)?, &cl)?;
            let e = back
                .coords()
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err = err.max(e);
        }
        reports.push(PropertyReport::new(
            format!("cluster-map-roundtrip(r={r})"),
            err,
            1e-6,
        ));

        // Single-candidate cluster at the origin ≡ plain exponential map.
        let single = Cluster::init(1, DIM, 0, cfg)?;
        let origin = BallPoint::origin(DIM);
        let mut err = 0.0f64;
        for _ in 0..trials {
            let w = s.tangent(-3.0, 3.0);
            let via_cluster = epc_map_selected(&LatentWeight::new(w.clone()).unwrap(), &single)?;
            let via_exp = exp_map(&origin, &TangentVec::new(w).unwrap(), &cfg);
            let e = via_cluster
                .coords()
                .iter()
                .zip(via_exp.coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err = err.max(e);
        }
        reports.push(PropertyReport::new(
            format!("single-cluster-equals-exp(r={r})"),
            err,
            0.0,
        ));

        // Cluster outputs stay inside the ball.
        let mut worst = 0.0f64;
        let cl4 = Cluster::init(4, DIM, seed ^ 0xC2, cfg)?;
        for _ in 0..trials {
            let w = s.tangent(-5.0, 5.0);
            for p in epc_map_all(&LatentWeight::new(w).unwrap(), &cl4)? {
                worst = worst.max(r * norm_sq(p.coords()));
            }
        }
        reports.push(PropertyReport {
            name: format!("cluster-closure(r={r})"),
            max_error: worst,
            tolerance: 1.0,
            passed: worst < 1.0,
        });

        // Analytic pullback vs central finite differences.
        let mut cl = Cluster::init(3, DIM, seed ^ 0xC3, cfg)?;
        cl.set_selected(1)?;
        let mut err = 0.0f64;
        let fd_trials = trials.min(25);
        for _ in 0..fd_trials {
            let w = s.tangent(-1.0, 1.0);
            let g = s.tangent(-1.0, 1.0);
            let lw = LatentWeight::new(w.clone()).unwrap();
            let analytic = epc_vjp(&lw, &cl, &g)?;
            let h = 1e-6;
            for i in 0..DIM {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fp = dot(
                    epc_map_selected(&LatentWeight::new(wp).unwrap(), &cl)?.coords(),
                    &g,
                );
                let fm = dot(
                    epc_map_selected(&LatentWeight::new(wm).unwrap(), &cl)?.coords(),
                    &g,
                );
                let fd = (fp - fm) / (2.0 * h);
                err = err.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
            }
        }
        reports.push(PropertyReport::new(
            format!("pullback-finite-difference(r={r})"),
            err,
            1e-4,
        ));
    }

    // Radius-independent checks.
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0xE0C1),
    };

    // Euclidean limit at r = 1e-10.
    let tiny = BallConfig::new(1e-10)?;
    let mut err_add = 0.0f64;
    let mut err_mul = 0.0f64;
    for _ in 0..trials {
        let p = s.tangent(-1.0, 1.0);
        let q = s.tangent(-1.0, 1.0);
        let bp = BallPoint::new(p.clone(), &tiny).unwrap();
        let bq = BallPoint::new(q.clone(), &tiny).unwrap();
        let sum = madd(&bp, &bq, &tiny, fault);
        let e = sum
            .coords()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (p[i] + q[i])).abs())
            .fold(0.0, f64::max);
        err_add = err_add.max(e);
        let c = s.rng.gen_range(-2.0..2.0);
        let prod = mobius_scalar_mul(c, &bp, &tiny);
        let e = prod
            .coords()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - c * p[i]).abs())
            .fold(0.0, f64::max);
        err_mul = err_mul.max(e);
    }
    reports.push(PropertyReport::new("euclidean-limit-add(r=1e-10)", err_add, 1e-6));
    reports.push(PropertyReport::new("euclidean-limit-mul(r=1e-10)", err_mul, 1e-6));

    // XNOR dot against the float oracle (exhaustive for length 16).
    let mut err = 0.0f64;
    let fixed: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let pf = pack_bits(&fixed);
    for bits in 0u32..(1 << 16) {
        let v: Vec<f64> = (0..16)
            .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let d = xnor_popcount_dot(&pf, &pack_bits(&v))? as f64;
        err = err.max((d - dot(&fixed, &v)).abs());
    }
    for n in [64usize, 65, 4096] {
        for _ in 0..trials.min(100) {
            let a: Vec<f64> = (0..n)
                .map(|_| if s.rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let b: Vec<f64> = (0..n)
                .map(|_| if s.rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let d = xnor_popcount_dot(&pack_bits(&a), &pack_bits(&b))? as f64;
            err = err.max((d - dot(&a, &b)).abs());
        }
    }
    reports.push(PropertyReport::new("xnor-float-oracle", err, 0.0));

    // Pack/unpack round trip.
    let mut err = 0.0f64;
    for _ in 0..trials {
        let n = s.rng.gen_range(1..200);
        let v: Vec<f64> = (0..n)
            .map(|_| if s.rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let round = unpack_bits(&pack_bits(&v));
        let e = round
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        err = err.max(e);
    }
    reports.push(PropertyReport::new("pack-unpack-roundtrip", err, 0.0));

    // Activation surrogate continuity at the joints.
    let g = ste_activation_grad(&[-1.0, 0.0, 1.0, -1.0 + 1e-12, 1.0 - 1e-12]);
    let err = (g[0]).abs().max((g[1] - 2.0).abs()).max(g[2].abs());
    reports.push(PropertyReport::new("activation-surrogate-joints", err, 1e-11));

    Ok(reports)
}
