//! Minimal, self-contained plain-BNN training loop used as the parity
//! oracle. It re-implements the documented computation from scratch —
//! initialization recipe, batch schedule, forward/backward arithmetic in the
//! stated order, and the SGD update — without touching the library's layer
//! or trainer code, so a bit-for-bit match of the loss trajectory checks the
//! whole training path.
//!
//! Documented conventions reproduced here:
//! - per-layer RNG streams: `seed ^ (idx+1)·0x9E3779B97F4A7C15` feeding
//!   ChaCha8, weights drawn row-major from ±bound with
//!   `bound = 1/√fan_in` (full-precision) or `BINARY_INIT_SCALE/√fan_in`
//!   (binarized latents);
//! - epoch shuffles keyed by `seed + epoch·0x9E3779B97F4A7C15 ^ 0xDA7A0BA7`;
//! - dot products accumulate in four strided lanes combined as
//!   `(s0+s1)+(s2+s3)` plus a sequential tail;
//! - cosine learning rate `base·(1+cos(π·step/total))/2`;
//! - SGD: `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`, weight decay only on
//!   dense weights and latents.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const IN: usize = 8;
const HID: usize = 16;
const OUT: usize = 3;
const BATCH: usize = 8;
const BN_EPS: f64 = 1e-5;
const BASE_LR: f64 = 0.05;
const MOMENTUM: f64 = 0.9;
const WEIGHT_DECAY: f64 = 5e-4;

/// Deterministic toy dataset shared by the oracle and the implementation.
pub fn toy_data(n: usize, dim: usize, classes: u8, seed: u64) -> (Vec<f32>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..dim {
            features.push(rng.gen_range(-1.0f64..1.0) as f32);
        }
        labels.push(rng.gen_range(0..classes));
    }
    (features, labels)
}

fn layer_seed(seed: u64, idx: u64) -> u64 {
    seed ^ (idx + 1).wrapping_mul(GOLDEN)
}

fn draw(seed: u64, len: usize, bound: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Four-lane dot product in the documented accumulation order.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut acc = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        acc += a[i] * b[i];
    }
    acc
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Train `steps` steps and return the loss at each step (measured before the
/// update, as the implementation reports it).
pub fn run(seed: u64, features: &[f32], labels: &[u8], steps: usize) -> Vec<f64> {
    let n = labels.len();
    // architecture: dense-binary(8→16), batchnorm(16), hardtanh,
    // dense-full(16→3, bias); layer indices 0..3
    let mut latent = draw(
        layer_seed(seed, 0),
        HID * IN,
        hbnn::nn::model::BINARY_INIT_SCALE / (IN as f64).sqrt(),
    );
    let mut gamma = vec![1.0f64; HID];
    let mut beta = vec![0.0f64; HID];
    let mut w3 = draw(layer_seed(seed, 3), OUT * HID, 1.0 / (HID as f64).sqrt());
    let mut b3 = vec![0.0f64; OUT];

    // momentum buffers in slot order: latent, gamma, beta, w3, b3
    let mut v_latent = vec![0.0f64; HID * IN];
    let mut v_gamma = vec![0.0f64; HID];
    let mut v_beta = vec![0.0f64; HID];
    let mut v_w3 = vec![0.0f64; OUT * HID];
    let mut v_b3 = vec![0.0f64; OUT];

    // single-epoch batch schedule
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0) ^ 0xDA7A_0BA7);
    perm.shuffle(&mut rng);
    let spe = n / BATCH;
    let total_steps = spe as u64; // one epoch

    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr = BASE_LR * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
            / 2.0;
        let idx = &perm[step * BATCH..(step + 1) * BATCH];
        let mut x = vec![0.0f64; BATCH * IN];
        let mut y = vec![0usize; BATCH];
        for (b, &i) in idx.iter().enumerate() {
            for d in 0..IN {
                x[b * IN + d] = features[i * IN + d] as f64;
            }
            y[b] = labels[i] as usize;
        }

        // forward: binarized dense
        let mut a1 = vec![0.0f64; BATCH * HID];
        for b in 0..BATCH {
            for o in 0..HID {
                let mut acc = 0.0;
                for i in 0..IN {
                    acc += sign(latent[o * IN + i]) * sign(x[b * IN + i]);
                }
                a1[b * HID + o] = acc;
            }
        }

        // batch normalization (population statistics, two passes)
        let m = BATCH as f64;
        let mut mean = vec![0.0f64; HID];
        for b in 0..BATCH {
            for f in 0..HID {
                mean[f] += a1[b * HID + f];
            }
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        let mut var = vec![0.0f64; HID];
        for b in 0..BATCH {
            for f in 0..HID {
                let d = a1[b * HID + f] - mean[f];
                var[f] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0f64; BATCH * HID];
        let mut a2 = vec![0.0f64; BATCH * HID];
        for b in 0..BATCH {
            for f in 0..HID {
                let xh = (a1[b * HID + f] - mean[f]) * inv_std[f];
                xhat[b * HID + f] = xh;
                a2[b * HID + f] = gamma[f] * xh + beta[f];
            }
        }

        // hardtanh
        let a3: Vec<f64> = a2.iter().map(|v| v.clamp(-1.0, 1.0)).collect();

        // full-precision head
        let mut logits = vec![0.0f64; BATCH * OUT];
        for b in 0..BATCH {
            for o in 0..OUT {
                logits[b * OUT + o] =
                    dot4(&w3[o * HID..(o + 1) * HID], &a3[b * HID..(b + 1) * HID]) + b3[o];
            }
        }

        // softmax cross-entropy (mean) and its gradient
        let mut loss = 0.0f64;
        let mut glogits = vec![0.0f64; BATCH * OUT];
        for b in 0..BATCH {
            let row = &logits[b * OUT..(b + 1) * OUT];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row {
                z += (v - max).exp();
            }
            let log_z = z.ln() + max;
            loss += log_z - row[y[b]];
            for j in 0..OUT {
                glogits[b * OUT + j] =
                    ((row[j] - max).exp() / z - if j == y[b] { 1.0 } else { 0.0 }) / m;
            }
        }
        loss /= m;
        losses.push(loss);

        // backward: head
        let mut gw3 = vec![0.0f64; OUT * HID];
        let mut gb3 = vec![0.0f64; OUT];
        for b in 0..BATCH {
            for o in 0..OUT {
                let g = glogits[b * OUT + o];
                if g != 0.0 {
                    for i in 0..HID {
                        gw3[o * HID + i] += g * a3[b * HID + i];
                    }
                }
                gb3[o] += g;
            }
        }
        let mut ga3 = vec![0.0f64; BATCH * HID];
        for b in 0..BATCH {
            for o in 0..OUT {
                let g = glogits[b * OUT + o];
                if g != 0.0 {
                    for i in 0..HID {
                        ga3[b * HID + i] += g * w3[o * HID + i];
                    }
                }
            }
        }

        // hardtanh gradient
        let mut ga2 = vec![0.0f64; BATCH * HID];
        for i in 0..BATCH * HID {
            ga2[i] = if a2[i].abs() <= 1.0 { ga3[i] } else { 0.0 };
        }

        // batchnorm backward
        let mut s1 = vec![0.0f64; HID];
        let mut s2 = vec![0.0f64; HID];
        for b in 0..BATCH {
            for f in 0..HID {
                s1[f] += ga2[b * HID + f];
                s2[f] += ga2[b * HID + f] * xhat[b * HID + f];
            }
        }
        let ggamma = s2.clone();
        let gbeta = s1.clone();
        let mut ga1 = vec![0.0f64; BATCH * HID];
        for b in 0..BATCH {
            for f in 0..HID {
                let k = gamma[f] * inv_std[f];
                let mean_dy = s1[f] / m;
                let mean_dy_xhat = s2[f] / m;
                ga1[b * HID + f] =
                    k * (ga2[b * HID + f] - mean_dy - xhat[b * HID + f] * mean_dy_xhat);
            }
        }

        // binarized layer: weight-side gradient with the unit clip mask
        let mut glatent = vec![0.0f64; HID * IN];
        for b in 0..BATCH {
            for o in 0..HID {
                let g = ga1[b * HID + o];
                if g != 0.0 {
                    for i in 0..IN {
                        glatent[o * IN + i] += g * sign(x[b * IN + i]);
                    }
                }
            }
        }
        for (gl, w) in glatent.iter_mut().zip(&latent) {
            *gl *= if w.abs() <= 1.0 { 1.0 } else { 0.0 };
        }

        // SGD with momentum, slot order latent → gamma → beta → w3 → b3
        let update = |lr: f64, w: &mut [f64], g: &[f64], v: &mut [f64], decay: f64| {
            for i in 0..w.len() {
                let gi = g[i] + decay * w[i];
                v[i] = MOMENTUM * v[i] + gi;
                w[i] -= lr * v[i];
            }
        };
        update(lr, &mut latent, &glatent, &mut v_latent, WEIGHT_DECAY);
        update(lr, &mut gamma, &ggamma, &mut v_gamma, 0.0);
        update(lr, &mut beta, &gbeta, &mut v_beta, 0.0);
        update(lr, &mut w3, &gw3, &mut v_w3, WEIGHT_DECAY);
        update(lr, &mut b3, &gb3, &mut v_b3, 0.0);
    }
    losses
}
