//! Loss-surface grids along two filter-normalized random directions in
//! latent-weight space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Layer, Model, ParamKind, Tensor};
use crate::train::eval_loss;
use crate::vecops::norm;

/// The grid plus its axis coordinates.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[i][j]` = loss at `w + alphas[i]·d1 + betas[j]·d2`.
    pub losses: Vec<Vec<f64>>,
}

/// Row width (the per-filter span) of each perturbed weight matrix, used for
/// filter normalization.
fn filter_width(layer: &Layer) -> Option<usize> {
    match layer {
        Layer::DenseFull(l) => Some(l.in_dim),
        Layer::BinaryDense(l) => Some(l.in_dim),
        Layer::ConvFull(l) => Some(l.geom.patch()),
        Layer::BinaryConv(l) => Some(l.geom.patch()),
        _ => None,
    }
}

/// Draw one Gaussian direction per perturbed slot and rescale each filter
/// (row) to the norm of the corresponding weight row.
fn directions(model: &mut Model, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // one width per Weight/Latent slot, in the same layer order that
    // param_slots() walks
    let widths: Vec<usize> = model.layers.iter().filter_map(filter_width).collect();
    let mut dirs = Vec::new();
    let mut wi = 0usize;
    for slot in model.param_slots() {
        if !matches!(slot.kind, ParamKind::Weight | ParamKind::Latent) {
            continue;
        }
        let width = widths.get(wi).copied().unwrap_or(slot.values.len());
        wi += 1;

        let mut d: Vec<f64> = (0..slot.values.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        for (drow, wrow) in d.chunks_mut(width).zip(slot.values.chunks(width)) {
            let wn = norm(wrow);
            let dn = norm(drow).max(1e-300);
            let scale = wn / dn;
            for v in drow.iter_mut() {
                *v *= scale;
            }
        }
        dirs.push(d);
    }
    dirs
}

/// Evaluate the loss grid over `[-extent, extent]²`. `resolution` must be
/// odd and ≥ 3 so that the exact center cell carries the unperturbed loss.
pub fn loss_surface_grid(
    model: &mut Model,
    batch: &Tensor,
    labels: &[usize],
    seed: u64,
    extent: f64,
    resolution: usize,
) -> Result<SurfaceGrid> {
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::Config(vec![format!(
            "surface resolution must be odd and ≥ 3, got {resolution}"
        )]));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::Config(vec![format!(
            "surface extent must be > 0, got {extent}"
        )]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = directions(model, &mut rng);
    let d2 = directions(model, &mut rng);
    let originals: Vec<Vec<f64>> = model
        .param_slots()
        .iter()
        .filter(|s| matches!(s.kind, ParamKind::Weight | ParamKind::Latent))
        .map(|s| s.values.to_vec())
        .collect();

    let axis: Vec<f64> = (0..resolution)
        .map(|i| -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64)
        .collect();
    // force the exact midpoint to zero (floating linspace may miss it)
    let mut axis = axis;
    axis[resolution / 2] = 0.0;

    let mut losses = vec![vec![0.0; resolution]; resolution];
    for (i, &alpha) in axis.iter().enumerate() {
        for (j, &beta) in axis.iter().enumerate() {
            {
                let mut slot_idx = 0;
                for slot in model.param_slots() {
                    if !matches!(slot.kind, ParamKind::Weight | ParamKind::Latent) {
                        continue;
                    }
                    let orig = &originals[slot_idx];
                    let da = &d1[slot_idx];
                    let db = &d2[slot_idx];
                    for k in 0..slot.values.len() {
                        slot.values[k] = orig[k] + alpha * da[k] + beta * db[k];
                    }
                    slot_idx += 1;
                }
            }
            losses[i][j] = eval_loss(model, batch, labels)?;
        }
    }

    // restore
    let mut slot_idx = 0;
    for slot in model.param_slots() {
        if !matches!(slot.kind, ParamKind::Weight | ParamKind::Latent) {
            continue;
        }
        slot.values.copy_from_slice(&originals[slot_idx]);
        slot_idx += 1;
    }

    Ok(SurfaceGrid {
        alphas: axis.clone(),
        betas: axis,
        losses,
    })
}

impl SurfaceGrid {
    /// CSV with alpha/beta axis header rows:
    /// first row `alpha,<betas…>`, then one row per alpha.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("alpha\\beta");
        for b in &self.betas {
            out.push(',');
            out.push_str(&format!("{b}"));
        }
        out.push('\n');
        for (i, a) in self.alphas.iter().enumerate() {
            out.push_str(&format!("{a}"));
            for v in &self.losses[i] {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn center(&self) -> f64 {
        self.losses[self.alphas.len() / 2][self.betas.len() / 2]
    }
}
