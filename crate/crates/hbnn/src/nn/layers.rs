//! Network layers with hand-written forward and backward passes.
//!
//! Binarized layers map their latent weight through the cluster
//! parametrization (or use it directly in plain mode), binarize weights and
//! incoming activations, and compute the dot products on packed bits. The
//! backward pass routes the weight gradient through the straight-through
//! clip mask and the parametrization pullback, and the activation gradient
//! through the piecewise-linear surrogate.
//!
//! Batch work is split into fixed-size chunks ([`PAR_CHUNK`]) processed in
//! parallel; reductions fold the per-chunk partials in chunk order, so
//! results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::binarize::{ste_activation_grad_scalar, ste_weight_grad_mask_with_bound, xnor_dot_words};
use crate::epc::{epc_basepoint_vjp, epc_map_selected, epc_vjp, Cluster, LatentWeight};
use crate::error::{Error, Result};
use crate::nn::conv::{col2im, im2col, out_dim};
use crate::nn::tensor::Tensor;
use crate::nn::PAR_CHUNK;
use crate::vecops::axpy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Cache activations for backward and update BatchNorm running stats.
    Train,
    /// Cache for backward and use batch statistics, but leave running stats
    /// untouched (candidate-selection probes).
    Probe,
    /// Running statistics, no caching.
    Eval,
}

impl ForwardMode {
    fn caches(self) -> bool {
        matches!(self, ForwardMode::Train | ForwardMode::Probe)
    }

    fn updates_running(self) -> bool {
        matches!(self, ForwardMode::Train)
    }
}

/// How a binarized layer turns its latent vector into the constrained weight.
#[derive(Debug, Clone)]
pub enum WeightParam {
    /// Latent → ball via the selected cluster candidate; straight-through
    /// clip bound is the ball radius `1/√r`.
    Ball(Cluster),
    /// Plain BNN: the latent vector is the weight; clip bound 1.
    Identity,
}

impl WeightParam {
    fn ste_bound(&self) -> f64 {
        match self {
            WeightParam::Ball(cl) => 1.0 / cl.cfg().sqrt_r(),
            WeightParam::Identity => 1.0,
        }
    }
}

fn pack_row(src: &[f64], dst: &mut [u64]) {
    for w in dst.iter_mut() {
        *w = 0;
    }
    for (i, v) in src.iter().enumerate() {
        if *v >= 0.0 {
            dst[i / 64] |= 1 << (i % 64);
        }
    }
}

fn unpack_row(words: &[u64], len: usize, dst: &mut [f64]) {
    for i in 0..len {
        dst[i] = if words[i / 64] >> (i % 64) & 1 == 1 {
            1.0
        } else {
            -1.0
        };
    }
}

// ---------------------------------------------------------------------------
// Full-precision dense
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DenseFull {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out][in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache_input: Option<Tensor>,
}

impl DenseFull {
    /// `bias` may be empty for bias-free layers.
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), in_dim * out_dim);
        debug_assert!(bias.is_empty() || bias.len() == out_dim);
        Self {
            in_dim,
            out_dim,
            weights,
            grad_weights: vec![0.0; in_dim * out_dim],
            grad_bias: vec![0.0; bias.len()],
            bias,
            cache_input: None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        check_features(x, self.in_dim)?;
        let b = x.batch();
        let (ind, outd) = (self.in_dim, self.out_dim);
        let w = &self.weights;
        let bias = &self.bias;
        let mut out = vec![0.0; b * outd];
        out.par_chunks_mut(PAR_CHUNK * outd)
            .zip(x.data().par_chunks(PAR_CHUNK * ind))
            .for_each(|(oc, xc)| {
                for (orow, xrow) in oc.chunks_mut(outd).zip(xc.chunks(ind)) {
                    for (o, ov) in orow.iter_mut().enumerate() {
                        let wrow = &w[o * ind..(o + 1) * ind];
                        *ov = crate::vecops::dot(wrow, xrow)
                            + if bias.is_empty() { 0.0 } else { bias[o] };
                    }
                }
            });
        if mode.caches() {
            self.cache_input = Some(x.clone());
        }
        Tensor::from_vec(vec![b, outd], out)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let x = self.cache_input.take().ok_or(Error::StaleCache)?;
        let b = x.batch();
        let (ind, outd) = (self.in_dim, self.out_dim);
        let g = grad_out.data();

        let nchunks = b.div_ceil(PAR_CHUNK);
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..nchunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * PAR_CHUNK;
                let hi = (lo + PAR_CHUNK).min(b);
                let mut gw = vec![0.0; outd * ind];
                let mut gb = vec![0.0; outd];
                for s in lo..hi {
                    let grow = &g[s * outd..(s + 1) * outd];
                    let xrow = x.sample(s);
                    for (o, go) in grow.iter().enumerate() {
                        if *go != 0.0 {
                            axpy(&mut gw[o * ind..(o + 1) * ind], *go, xrow);
                        }
                        gb[o] += *go;
                    }
                }
                (gw, gb)
            })
            .collect();
        self.grad_weights.iter_mut().for_each(|v| *v = 0.0);
        self.grad_bias.iter_mut().for_each(|v| *v = 0.0);
        for (gw, gb) in &partials {
            for (a, v) in self.grad_weights.iter_mut().zip(gw) {
                *a += v;
            }
            for (a, v) in self.grad_bias.iter_mut().zip(gb) {
                *a += v;
            }
        }

        if !need_input_grad {
            return Tensor::from_vec(vec![b, 0], Vec::new());
        }
        let w = &self.weights;
        let mut gin = vec![0.0; b * ind];
        gin.par_chunks_mut(PAR_CHUNK * ind)
            .zip(g.par_chunks(PAR_CHUNK * outd))
            .for_each(|(gic, gc)| {
                for (girow, grow) in gic.chunks_mut(ind).zip(gc.chunks(outd)) {
                    for (o, go) in grow.iter().enumerate() {
                        if *go != 0.0 {
                            axpy(girow, *go, &w[o * ind..(o + 1) * ind]);
                        }
                    }
                }
            });
        Tensor::from_vec(vec![b, ind], gin)
    }
}

// ---------------------------------------------------------------------------
// Binarized dense
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct BinDenseCache {
    input: Tensor,
    mapped: Vec<f64>,
    wbits: Vec<u64>,
    abits: Vec<u64>,
}

#[derive(Debug)]
pub struct BinaryDense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub latent: LatentWeight,
    pub param: WeightParam,
    pub grad_latent: Vec<f64>,
    /// Gradient with respect to the selected basepoint, when parametrized.
    pub grad_basepoint: Option<Vec<f64>>,
    cache: Option<BinDenseCache>,
}

impl BinaryDense {
    pub fn new(in_dim: usize, out_dim: usize, latent: Vec<f64>, param: WeightParam) -> Self {
        debug_assert_eq!(latent.len(), in_dim * out_dim);
        let n = latent.len();
        Self {
            in_dim,
            out_dim,
            latent: LatentWeight::new(latent).expect("finite latent weights"),
            param,
            grad_latent: vec![0.0; n],
            grad_basepoint: None,
            cache: None,
        }
    }

    /// The constrained full-precision weight the layer binarizes.
    pub fn mapped_weights(&self) -> Result<Vec<f64>> {
        match &self.param {
            WeightParam::Ball(cl) => Ok(epc_map_selected(&self.latent, cl)?.into_coords()),
            WeightParam::Identity => Ok(self.latent.coords().to_vec()),
        }
    }

    /// Signs actually used at inference, as ±1.
    pub fn weight_signs(&self) -> Result<Vec<i8>> {
        Ok(self
            .mapped_weights()?
            .iter()
            .map(|v| if *v >= 0.0 { 1 } else { -1 })
            .collect())
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        check_features(x, self.in_dim)?;
        let b = x.batch();
        let (ind, outd) = (self.in_dim, self.out_dim);
        let wpr = ind.div_ceil(64);

        let mapped = self.mapped_weights()?;
        let mut wbits = vec![0u64; outd * wpr];
        for o in 0..outd {
            pack_row(&mapped[o * ind..(o + 1) * ind], &mut wbits[o * wpr..(o + 1) * wpr]);
        }

        let mut abits = vec![0u64; b * wpr];
        let mut out = vec![0.0; b * outd];
        out.par_chunks_mut(PAR_CHUNK * outd)
            .zip(abits.par_chunks_mut(PAR_CHUNK * wpr))
            .zip(x.data().par_chunks(PAR_CHUNK * ind))
            .for_each(|((oc, ac), xc)| {
                for ((orow, arow), xrow) in
                    oc.chunks_mut(outd).zip(ac.chunks_mut(wpr)).zip(xc.chunks(ind))
                {
                    pack_row(xrow, arow);
                    for (o, ov) in orow.iter_mut().enumerate() {
                        *ov = xnor_dot_words(&wbits[o * wpr..(o + 1) * wpr], arow, ind) as f64;
                    }
                }
            });

        if mode.caches() {
            self.cache = Some(BinDenseCache {
                input: x.clone(),
                mapped,
                wbits,
                abits,
            });
        }
        Tensor::from_vec(vec![b, outd], out)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let b = cache.input.batch();
        let (ind, outd) = (self.in_dim, self.out_dim);
        let wpr = ind.div_ceil(64);
        let g = grad_out.data();

        // ∂L/∂(binary weight): Σ_b g[b,o]·sign(a)[b,i]
        let nchunks = b.div_ceil(PAR_CHUNK);
        let partials: Vec<Vec<f64>> = (0..nchunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * PAR_CHUNK;
                let hi = (lo + PAR_CHUNK).min(b);
                let mut gw = vec![0.0; outd * ind];
                let mut arow = vec![0.0; ind];
                for s in lo..hi {
                    unpack_row(&cache.abits[s * wpr..(s + 1) * wpr], ind, &mut arow);
                    let grow = &g[s * outd..(s + 1) * outd];
                    for (o, go) in grow.iter().enumerate() {
                        if *go != 0.0 {
                            axpy(&mut gw[o * ind..(o + 1) * ind], *go, &arow);
                        }
                    }
                }
                gw
            })
            .collect();
        let mut grad_wb = vec![0.0; outd * ind];
        for p in &partials {
            for (a, v) in grad_wb.iter_mut().zip(p) {
                *a += v;
            }
        }

        // Clip-rule mask (all ones for ball-constrained weights), then the
        // parametrization pullback.
        let mask = ste_weight_grad_mask_with_bound(&cache.mapped, self.param.ste_bound());
        for (gv, m) in grad_wb.iter_mut().zip(&mask) {
            *gv *= m;
        }
        match &self.param {
            WeightParam::Ball(cl) => {
                self.grad_latent = epc_vjp(&self.latent, cl, &grad_wb)?;
                self.grad_basepoint = Some(epc_basepoint_vjp(&self.latent, cl, &grad_wb)?);
            }
            WeightParam::Identity => {
                self.grad_latent = grad_wb;
                self.grad_basepoint = None;
            }
        }

        if !need_input_grad {
            return Tensor::from_vec(vec![b, 0], Vec::new());
        }
        // Input gradient through the activation surrogate.
        let wbits = &cache.wbits;
        let input = &cache.input;
        let mut gin = vec![0.0; b * ind];
        gin.par_chunks_mut(PAR_CHUNK * ind)
            .zip(g.par_chunks(PAR_CHUNK * outd))
            .enumerate()
            .for_each(|(ci, (gic, gc))| {
                let base = ci * PAR_CHUNK;
                let mut wrow = vec![0.0; ind];
                for (s, (girow, grow)) in gic.chunks_mut(ind).zip(gc.chunks(outd)).enumerate() {
                    for (o, go) in grow.iter().enumerate() {
                        if *go != 0.0 {
                            unpack_row(&wbits[o * wpr..(o + 1) * wpr], ind, &mut wrow);
                            axpy(girow, *go, &wrow);
                        }
                    }
                    let xrow = input.sample(base + s);
                    for (gi, xv) in girow.iter_mut().zip(xrow) {
                        *gi *= ste_activation_grad_scalar(*xv);
                    }
                }
            });
        Tensor::from_vec(vec![b, ind], gin)
    }
}

// ---------------------------------------------------------------------------
// Convolutions (shared plumbing)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        if x.shape().len() != 4 || x.shape()[1] != self.in_ch {
            return Err(Error::DimensionMismatch {
                expected: self.in_ch,
                got: if x.shape().len() == 4 { x.shape()[1] } else { 0 },
            });
        }
        let h = x.shape()[2];
        let w = x.shape()[3];
        Ok((
            x.batch(),
            out_dim(h, self.kernel, self.stride, self.padding),
            out_dim(w, self.kernel, self.stride, self.padding),
        ))
    }
}

#[derive(Debug)]
struct BinConvCache {
    input: Tensor,
    mapped: Vec<f64>,
    wbits: Vec<u64>,
    /// Per sample: `positions × words_per_patch` packed sign patches.
    colbits: Vec<u64>,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
pub struct BinaryConv {
    pub geom: ConvGeom,
    pub latent: LatentWeight,
    pub param: WeightParam,
    pub grad_latent: Vec<f64>,
    pub grad_basepoint: Option<Vec<f64>>,
    cache: Option<BinConvCache>,
}

impl BinaryConv {
    pub fn new(geom: ConvGeom, latent: Vec<f64>, param: WeightParam) -> Self {
        debug_assert_eq!(latent.len(), geom.out_ch * geom.patch());
        let n = latent.len();
        Self {
            geom,
            latent: LatentWeight::new(latent).expect("finite latent weights"),
            param,
            grad_latent: vec![0.0; n],
            grad_basepoint: None,
            cache: None,
        }
    }

    pub fn mapped_weights(&self) -> Result<Vec<f64>> {
        match &self.param {
            WeightParam::Ball(cl) => Ok(epc_map_selected(&self.latent, cl)?.into_coords()),
            WeightParam::Identity => Ok(self.latent.coords().to_vec()),
        }
    }

    pub fn weight_signs(&self) -> Result<Vec<i8>> {
        Ok(self
            .mapped_weights()?
            .iter()
            .map(|v| if *v >= 0.0 { 1 } else { -1 })
            .collect())
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let (b, oh, ow) = self.geom.check_input(x)?;
        let g = self.geom;
        let patch = g.patch();
        let cpr = patch.div_ceil(64);
        let positions = oh * ow;
        let (h, w) = (x.shape()[2], x.shape()[3]);

        let mapped = self.mapped_weights()?;
        let mut wbits = vec![0u64; g.out_ch * cpr];
        for oc in 0..g.out_ch {
            pack_row(&mapped[oc * patch..(oc + 1) * patch], &mut wbits[oc * cpr..(oc + 1) * cpr]);
        }

        let mut colbits = vec![0u64; b * positions * cpr];
        let mut out = vec![0.0; b * g.out_ch * positions];
        out.par_chunks_mut(g.out_ch * positions)
            .zip(colbits.par_chunks_mut(positions * cpr))
            .zip(x.data().par_chunks(g.in_ch * h * w))
            .for_each(|((osamp, csamp), xsamp)| {
                let mut cols = vec![0.0; positions * patch];
                im2col(xsamp, g.in_ch, h, w, g.kernel, g.stride, g.padding, &mut cols);
                for p in 0..positions {
                    pack_row(&cols[p * patch..(p + 1) * patch], &mut csamp[p * cpr..(p + 1) * cpr]);
                }
                for oc in 0..g.out_ch {
                    let wrow = &wbits[oc * cpr..(oc + 1) * cpr];
                    for p in 0..positions {
                        osamp[oc * positions + p] =
                            xnor_dot_words(wrow, &csamp[p * cpr..(p + 1) * cpr], patch) as f64;
                    }
                }
            });

        if mode.caches() {
            self.cache = Some(BinConvCache {
                input: x.clone(),
                mapped,
                wbits,
                colbits,
                oh,
                ow,
            });
        }
        Tensor::from_vec(vec![b, g.out_ch, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let g = self.geom;
        let b = cache.input.batch();
        let (h, w) = (cache.input.shape()[2], cache.input.shape()[3]);
        let patch = g.patch();
        let cpr = patch.div_ceil(64);
        let positions = cache.oh * cache.ow;
        let go = grad_out.data();

        // Weight-side gradient: Σ_{b,p} g[b,oc,p]·sign(col)[b,p,·]
        let partials: Vec<Vec<f64>> = (0..b)
            .into_par_iter()
            .map(|s| {
                let mut gw = vec![0.0; g.out_ch * patch];
                let mut crow = vec![0.0; patch];
                let cbase = s * positions * cpr;
                for p in 0..positions {
                    unpack_row(&cache.colbits[cbase + p * cpr..cbase + (p + 1) * cpr], patch, &mut crow);
                    for oc in 0..g.out_ch {
                        let gv = go[(s * g.out_ch + oc) * positions + p];
                        if gv != 0.0 {
                            axpy(&mut gw[oc * patch..(oc + 1) * patch], gv, &crow);
                        }
                    }
                }
                gw
            })
            .collect();
        let mut grad_wb = vec![0.0; g.out_ch * patch];
        for p in &partials {
            for (a, v) in grad_wb.iter_mut().zip(p) {
                *a += v;
            }
        }

        let mask = ste_weight_grad_mask_with_bound(&cache.mapped, self.param.ste_bound());
        for (gv, m) in grad_wb.iter_mut().zip(&mask) {
            *gv *= m;
        }
        match &self.param {
            WeightParam::Ball(cl) => {
                self.grad_latent = epc_vjp(&self.latent, cl, &grad_wb)?;
                self.grad_basepoint = Some(epc_basepoint_vjp(&self.latent, cl, &grad_wb)?);
            }
            WeightParam::Identity => {
                self.grad_latent = grad_wb;
                self.grad_basepoint = None;
            }
        }

        if !need_input_grad {
            return Tensor::from_vec(vec![b, 0], Vec::new());
        }
        // Input gradient: back through the packed patches, then the
        // activation surrogate on the original input values.
        let wbits = &cache.wbits;
        let input = &cache.input;
        let mut gin = vec![0.0; b * g.in_ch * h * w];
        gin.par_chunks_mut(g.in_ch * h * w)
            .enumerate()
            .for_each(|(s, gisamp)| {
                let mut gcols = vec![0.0; positions * patch];
                let mut wrow = vec![0.0; patch];
                for oc in 0..g.out_ch {
                    unpack_row(&wbits[oc * cpr..(oc + 1) * cpr], patch, &mut wrow);
                    for p in 0..positions {
                        let gv = go[(s * g.out_ch + oc) * positions + p];
                        if gv != 0.0 {
                            axpy(&mut gcols[p * patch..(p + 1) * patch], gv, &wrow);
                        }
                    }
                }
                col2im(&gcols, g.in_ch, h, w, g.kernel, g.stride, g.padding, gisamp);
                let xsamp = input.sample(s);
                for (gi, xv) in gisamp.iter_mut().zip(xsamp) {
                    *gi *= ste_activation_grad_scalar(*xv);
                }
            });
        Tensor::from_vec(vec![b, g.in_ch, h, w], gin)
    }
}

#[derive(Debug)]
struct ConvFullCache {
    input_shape: Vec<usize>,
    cols: Vec<f64>,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
pub struct ConvFull {
    pub geom: ConvGeom,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
    cache: Option<ConvFullCache>,
}

impl ConvFull {
    pub fn new(geom: ConvGeom, weights: Vec<f64>, bias: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), geom.out_ch * geom.patch());
        let n = weights.len();
        let nb = bias.len();
        Self {
            geom,
            weights,
            bias,
            grad_weights: vec![0.0; n],
            grad_bias: vec![0.0; nb],
            cache: None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let (b, oh, ow) = self.geom.check_input(x)?;
        let g = self.geom;
        let patch = g.patch();
        let positions = oh * ow;
        let (h, w) = (x.shape()[2], x.shape()[3]);

        let weights = &self.weights;
        let bias = &self.bias;
        let mut cols = vec![0.0; b * positions * patch];
        let mut out = vec![0.0; b * g.out_ch * positions];
        out.par_chunks_mut(g.out_ch * positions)
            .zip(cols.par_chunks_mut(positions * patch))
            .zip(x.data().par_chunks(g.in_ch * h * w))
            .for_each(|((osamp, csamp), xsamp)| {
                im2col(xsamp, g.in_ch, h, w, g.kernel, g.stride, g.padding, csamp);
                for oc in 0..g.out_ch {
                    let wrow = &weights[oc * patch..(oc + 1) * patch];
                    let bv = if bias.is_empty() { 0.0 } else { bias[oc] };
                    for p in 0..positions {
                        let crow = &csamp[p * patch..(p + 1) * patch];
                        osamp[oc * positions + p] = crate::vecops::dot(wrow, crow) + bv;
                    }
                }
            });

        if mode.caches() {
            self.cache = Some(ConvFullCache {
                input_shape: x.shape().to_vec(),
                cols,
                oh,
                ow,
            });
        }
        Tensor::from_vec(vec![b, g.out_ch, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let g = self.geom;
        let b = cache.input_shape[0];
        let (h, w) = (cache.input_shape[2], cache.input_shape[3]);
        let patch = g.patch();
        let positions = cache.oh * cache.ow;
        let go = grad_out.data();

        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..b)
            .into_par_iter()
            .map(|s| {
                let mut gw = vec![0.0; g.out_ch * patch];
                let mut gb = vec![0.0; g.out_ch];
                let csamp = &cache.cols[s * positions * patch..(s + 1) * positions * patch];
                for oc in 0..g.out_ch {
                    for p in 0..positions {
                        let gv = go[(s * g.out_ch + oc) * positions + p];
                        if gv != 0.0 {
                            axpy(
                                &mut gw[oc * patch..(oc + 1) * patch],
                                gv,
                                &csamp[p * patch..(p + 1) * patch],
                            );
                        }
                        gb[oc] += gv;
                    }
                }
                (gw, gb)
            })
            .collect();
        self.grad_weights.iter_mut().for_each(|v| *v = 0.0);
        self.grad_bias.iter_mut().for_each(|v| *v = 0.0);
        for (gw, gb) in &partials {
            for (a, v) in self.grad_weights.iter_mut().zip(gw) {
                *a += v;
            }
            if !self.grad_bias.is_empty() {
                for (a, v) in self.grad_bias.iter_mut().zip(gb) {
                    *a += v;
                }
            }
        }

        if !need_input_grad {
            return Tensor::from_vec(vec![b, 0], Vec::new());
        }
        let weights = &self.weights;
        let mut gin = vec![0.0; b * g.in_ch * h * w];
        gin.par_chunks_mut(g.in_ch * h * w)
            .enumerate()
            .for_each(|(s, gisamp)| {
                let mut gcols = vec![0.0; positions * patch];
                for oc in 0..g.out_ch {
                    let wrow = &weights[oc * patch..(oc + 1) * patch];
                    for p in 0..positions {
                        let gv = go[(s * g.out_ch + oc) * positions + p];
                        if gv != 0.0 {
                            axpy(&mut gcols[p * patch..(p + 1) * patch], gv, wrow);
                        }
                    }
                }
                col2im(&gcols, g.in_ch, h, w, g.kernel, g.stride, g.padding, gisamp);
            });
        Tensor::from_vec(vec![b, g.in_ch, h, w], gin)
    }
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    cache: Option<std::sync::Arc<BnCache>>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
            grad_gamma: vec![0.0; dim],
            grad_beta: vec![0.0; dim],
            cache: None,
        }
    }

    /// (features, repeats-per-feature) for rank-2 `[B, F]` and rank-4
    /// `[B, C, H, W]` inputs.
    fn feature_layout(&self, x: &Tensor) -> Result<usize> {
        let feats = match x.shape().len() {
            2 => x.shape()[1],
            4 => x.shape()[1],
            _ => {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    got: x.shape().len(),
                })
            }
        };
        if feats != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: feats,
            });
        }
        Ok(if x.shape().len() == 4 {
            x.shape()[2] * x.shape()[3]
        } else {
            1
        })
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let rep = self.feature_layout(x)?;
        let b = x.batch();
        let f = self.dim;
        let m = (b * rep) as f64;
        let data = x.data();

        let (mean, var) = if mode == ForwardMode::Eval {
            (self.running_mean.clone(), self.running_var.clone())
        } else {
            // Two-pass batch statistics, chunked deterministically.
            let nchunks = b.div_ceil(PAR_CHUNK);
            let sums: Vec<Vec<f64>> = (0..nchunks)
                .into_par_iter()
                .map(|ci| {
                    let lo = ci * PAR_CHUNK;
                    let hi = (lo + PAR_CHUNK).min(b);
                    let mut acc = vec![0.0; f];
                    for s in lo..hi {
                        let row = &data[s * f * rep..(s + 1) * f * rep];
                        for (fi, a) in acc.iter_mut().enumerate() {
                            for r in 0..rep {
                                *a += row[fi * rep + r];
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut mean = vec![0.0; f];
            for part in &sums {
                for (a, v) in mean.iter_mut().zip(part) {
                    *a += v;
                }
            }
            for v in mean.iter_mut() {
                *v /= m;
            }
            let vars: Vec<Vec<f64>> = (0..nchunks)
                .into_par_iter()
                .map(|ci| {
                    let lo = ci * PAR_CHUNK;
                    let hi = (lo + PAR_CHUNK).min(b);
                    let mut acc = vec![0.0; f];
                    for s in lo..hi {
                        let row = &data[s * f * rep..(s + 1) * f * rep];
                        for (fi, a) in acc.iter_mut().enumerate() {
                            for r in 0..rep {
                                let d = row[fi * rep + r] - mean[fi];
                                *a += d * d;
                            }
                        }
                    }
                    acc
                })
                .collect();
            let mut var = vec![0.0; f];
            for part in &vars {
                for (a, v) in var.iter_mut().zip(part) {
                    *a += v;
                }
            }
            for v in var.iter_mut() {
                *v /= m;
            }
            if mode.updates_running() {
                for i in 0..f {
                    self.running_mean[i] =
                        (1.0 - self.momentum) * self.running_mean[i] + self.momentum * mean[i];
                    self.running_var[i] =
                        (1.0 - self.momentum) * self.running_var[i] + self.momentum * var[i];
                }
            }
            (mean, var)
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = &self.gamma;
        let beta = &self.beta;
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        out.par_chunks_mut(PAR_CHUNK * f * rep)
            .zip(xhat.par_chunks_mut(PAR_CHUNK * f * rep))
            .zip(data.par_chunks(PAR_CHUNK * f * rep))
            .for_each(|((ocp, xcp), dcp)| {
                for ((orow, xrow), drow) in ocp
                    .chunks_mut(f * rep)
                    .zip(xcp.chunks_mut(f * rep))
                    .zip(dcp.chunks(f * rep))
                {
                    for fi in 0..f {
                        for r in 0..rep {
                            let idx = fi * rep + r;
                            let xh = (drow[idx] - mean[fi]) * inv_std[fi];
                            xrow[idx] = xh;
                            orow[idx] = gamma[fi] * xh + beta[fi];
                        }
                    }
                }
            });

        if mode.caches() {
            self.cache = Some(std::sync::Arc::new(BnCache {
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            }));
        }
        Tensor::from_vec(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or(Error::StaleCache)?;
        let shape = cache.shape.clone();
        let b = shape[0];
        let f = self.dim;
        let rep: usize = if shape.len() == 4 { shape[2] * shape[3] } else { 1 };
        let m = (b * rep) as f64;
        let g = grad_out.data();
        let xhat = &cache.xhat;

        let nchunks = b.div_ceil(PAR_CHUNK);
        let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..nchunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * PAR_CHUNK;
                let hi = (lo + PAR_CHUNK).min(b);
                let mut s1 = vec![0.0; f];
                let mut s2 = vec![0.0; f];
                for s in lo..hi {
                    let grow = &g[s * f * rep..(s + 1) * f * rep];
                    let xrow = &xhat[s * f * rep..(s + 1) * f * rep];
                    for fi in 0..f {
                        for r in 0..rep {
                            let idx = fi * rep + r;
                            s1[fi] += grow[idx];
                            s2[fi] += grow[idx] * xrow[idx];
                        }
                    }
                }
                (s1, s2)
            })
            .collect();
        let mut sum_dy = vec![0.0; f];
        let mut sum_dy_xhat = vec![0.0; f];
        for (s1, s2) in &partials {
            for (a, v) in sum_dy.iter_mut().zip(s1) {
                *a += v;
            }
            for (a, v) in sum_dy_xhat.iter_mut().zip(s2) {
                *a += v;
            }
        }
        self.grad_beta.copy_from_slice(&sum_dy);
        self.grad_gamma.copy_from_slice(&sum_dy_xhat);

        let gamma = &self.gamma;
        let inv_std = &cache.inv_std;
        let mut gin = vec![0.0; g.len()];
        gin.par_chunks_mut(PAR_CHUNK * f * rep)
            .zip(g.par_chunks(PAR_CHUNK * f * rep))
            .zip(xhat.par_chunks(PAR_CHUNK * f * rep))
            .for_each(|((gic, gc), xc)| {
                for ((girow, grow), xrow) in gic
                    .chunks_mut(f * rep)
                    .zip(gc.chunks(f * rep))
                    .zip(xc.chunks(f * rep))
                {
                    for fi in 0..f {
                        let k = gamma[fi] * inv_std[fi];
                        let mean_dy = sum_dy[fi] / m;
                        let mean_dy_xhat = sum_dy_xhat[fi] / m;
                        for r in 0..rep {
                            let idx = fi * rep + r;
                            girow[idx] = k * (grow[idx] - mean_dy - xrow[idx] * mean_dy_xhat);
                        }
                    }
                }
            });
        Tensor::from_vec(shape, gin)
    }
}

// ---------------------------------------------------------------------------
// Hardtanh, flatten, average pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Hardtanh {
    cache_input: Option<Tensor>,
}

impl Hardtanh {
    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        if mode.caches() {
            self.cache_input = Some(x.clone());
        }
        Tensor::from_vec(x.shape().to_vec(), out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.cache_input.take().ok_or(Error::StaleCache)?;
        let gin: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(x.data())
            .map(|(g, v)| if v.abs() <= 1.0 { *g } else { 0.0 })
            .collect();
        Tensor::from_vec(x.shape().to_vec(), gin)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cache_shape: Option<Vec<usize>>,
}

impl Flatten {
    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        if mode.caches() {
            self.cache_shape = Some(x.shape().to_vec());
        }
        let b = x.batch();
        let s = x.sample_size();
        x.clone().reshape(vec![b, s])
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.cache_shape.take().ok_or(Error::StaleCache)?;
        grad_out.clone().reshape(shape)
    }
}

#[derive(Debug, Clone)]
pub struct AvgPool {
    pub window: usize,
    cache_shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            cache_shape: None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        if x.shape().len() != 4 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                got: x.shape().len(),
            });
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let k = self.window;
        if h % k != 0 || w % k != 0 {
            return Err(Error::InconsistentArch(format!(
                "average pooling window {k} does not divide spatial dims {h}×{w}"
            )));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; b * c * oh * ow];
        let data = x.data();
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                let oplane = (bi * c + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += data[plane + (oy * k + ky) * w + ox * k + kx];
                            }
                        }
                        out[oplane + oy * ow + ox] = acc * inv;
                    }
                }
            }
        }
        if mode.caches() {
            self.cache_shape = Some(x.shape().to_vec());
        }
        Tensor::from_vec(vec![b, c, oh, ow], out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self.cache_shape.take().ok_or(Error::StaleCache)?;
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let k = self.window;
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let g = grad_out.data();
        let mut gin = vec![0.0; b * c * h * w];
        for bi in 0..b {
            for ci in 0..c {
                let plane = (bi * c + ci) * h * w;
                let oplane = (bi * c + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = g[oplane + oy * ow + ox] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                gin[plane + (oy * k + ky) * w + ox * k + kx] += gv;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(shape, gin)
    }
}

// ---------------------------------------------------------------------------
// Layer dispatch
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum Layer {
    DenseFull(DenseFull),
    BinaryDense(BinaryDense),
    ConvFull(ConvFull),
    BinaryConv(BinaryConv),
    BatchNorm(BatchNorm),
    Hardtanh(Hardtanh),
    Flatten(Flatten),
    AvgPool(AvgPool),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: ForwardMode) -> Result<Tensor> {
        match self {
            Layer::DenseFull(l) => l.forward(x, mode),
            Layer::BinaryDense(l) => l.forward(x, mode),
            Layer::ConvFull(l) => l.forward(x, mode),
            Layer::BinaryConv(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Hardtanh(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x, mode),
            Layer::AvgPool(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(grad_out, true)
    }

    /// Backward that skips the input-gradient computation; for the first
    /// layer of a network, where that gradient would be discarded.
    pub fn backward_params_only(&mut self, grad_out: &Tensor) -> Result<()> {
        self.backward_impl(grad_out, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        match self {
            Layer::DenseFull(l) => l.backward(grad_out, need_input_grad),
            Layer::BinaryDense(l) => l.backward(grad_out, need_input_grad),
            Layer::ConvFull(l) => l.backward(grad_out, need_input_grad),
            Layer::BinaryConv(l) => l.backward(grad_out, need_input_grad),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Hardtanh(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
            Layer::AvgPool(l) => l.backward(grad_out),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Layer::BinaryDense(_) | Layer::BinaryConv(_))
    }

    pub fn cluster(&self) -> Option<&Cluster> {
        match self {
            Layer::BinaryDense(l) => match &l.param {
                WeightParam::Ball(c) => Some(c),
                WeightParam::Identity => None,
            },
            Layer::BinaryConv(l) => match &l.param {
                WeightParam::Ball(c) => Some(c),
                WeightParam::Identity => None,
            },
            _ => None,
        }
    }

    pub fn cluster_mut(&mut self) -> Option<&mut Cluster> {
        match self {
            Layer::BinaryDense(l) => match &mut l.param {
                WeightParam::Ball(c) => Some(c),
                WeightParam::Identity => None,
            },
            Layer::BinaryConv(l) => match &mut l.param {
                WeightParam::Ball(c) => Some(c),
                WeightParam::Identity => None,
            },
            _ => None,
        }
    }

    pub fn grad_basepoint(&self) -> Option<&[f64]> {
        match self {
            Layer::BinaryDense(l) => l.grad_basepoint.as_deref(),
            Layer::BinaryConv(l) => l.grad_basepoint.as_deref(),
            _ => None,
        }
    }

    /// Inference weight signs of binarized layers.
    pub fn weight_signs(&self) -> Option<Result<Vec<i8>>> {
        match self {
            Layer::BinaryDense(l) => Some(l.weight_signs()),
            Layer::BinaryConv(l) => Some(l.weight_signs()),
            _ => None,
        }
    }
}

fn check_features(x: &Tensor, expected: usize) -> Result<()> {
    if x.shape().len() != 2 || x.shape()[1] != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.sample_size(),
        });
    }
    Ok(())
}
