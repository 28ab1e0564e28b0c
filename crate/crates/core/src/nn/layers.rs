//! Differentiable layers and the stack that chains them.
//!
//! The architecture family is: one feature layer (Nystrom, multi-kernel
//! Nystrom, Fastfood, or nothing) followed by dense layers up to the
//! classifier. Feature layers sit on frozen extractor outputs, so no
//! gradient ever flows into their inputs; only their own parameters (the
//! Nystrom map W, or the Fastfood diagonals in adaptive mode) are trained.

use crate::error::{Error, Result};
use crate::features::{FastfoodBlock, LandmarkSet};
use crate::kernels::gram;
use crate::tensor::{fwht_in_place, Matrix, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

/// Nystrom feature layer: kernel vector against frozen landmarks, then a
/// trainable linear map `w`. With `adaptive = false`, `w` stays pinned to
/// the whitening factor `K11^{-1/2}` and the layer is the classical
/// Nystrom feature map.
#[derive(Debug, Clone)]
pub struct NystromLayer {
    pub landmarks: LandmarkSet,
    pub w: Matrix,
    pub adaptive: bool,
}

impl NystromLayer {
    /// Warm-started layer: `w` is initialized at `K11^{-1/2}` so adaptive
    /// training begins exactly at the non-adaptive solution.
    pub fn new(landmarks: LandmarkSet, adaptive: bool) -> Self {
        let w = landmarks.k11_inv_sqrt.clone();
        NystromLayer {
            landmarks,
            w,
            adaptive,
        }
    }

    /// Adaptive layer with a scaled-random `w` (possibly rectangular).
    pub fn with_random_w(landmarks: LandmarkSet, out_dim: usize, seed: u64) -> Self {
        let m = landmarks.m();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / (m + out_dim) as f64).sqrt()).unwrap();
        let w = Matrix::from_fn(m, out_dim, |_, _| normal.sample(&mut rng));
        NystromLayer {
            landmarks,
            w,
            adaptive: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.landmarks.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let kvec = gram(&self.landmarks.kernel, x, &self.landmarks.points)?;
        let out = kvec.matmul(&self.w)?;
        Ok((out, kvec))
    }
}

/// Concatenation of per-kernel Nystrom representations. With
/// `group_slices`, sublayer i sees only its column range of the input
/// (one Nystrom approximation per feature group).
#[derive(Debug, Clone)]
pub struct MultiKernelLayer {
    pub sublayers: Vec<NystromLayer>,
    pub group_slices: Option<Vec<Range<usize>>>,
}

impl MultiKernelLayer {
    pub fn new(
        sublayers: Vec<NystromLayer>,
        group_slices: Option<Vec<Range<usize>>>,
    ) -> Result<Self> {
        if sublayers.is_empty() {
            return Err(Error::InvalidArgument("need at least one sublayer".into()));
        }
        if let Some(slices) = &group_slices {
            if slices.len() != sublayers.len() {
                return Err(Error::dim(format!(
                    "{} slices for {} sublayers",
                    slices.len(),
                    sublayers.len()
                )));
            }
            let mut sorted: Vec<&Range<usize>> = slices.iter().collect();
            sorted.sort_by_key(|r| r.start);
            for pair in sorted.windows(2) {
                if pair[1].start < pair[0].end {
                    return Err(Error::InvalidArgument(format!(
                        "overlapping column groups {:?} and {:?}",
                        pair[0], pair[1]
                    )));
                }
            }
            for (sl, sub) in slices.iter().zip(&sublayers) {
                if sl.end - sl.start != sub.input_dim() {
                    return Err(Error::dim(format!(
                        "group {:?} width {} vs landmark dimension {}",
                        sl,
                        sl.end - sl.start,
                        sub.input_dim()
                    )));
                }
            }
        } else {
            let d = sublayers[0].input_dim();
            if sublayers.iter().any(|s| s.input_dim() != d) {
                return Err(Error::dim(
                    "sublayers disagree on input dimension".to_string(),
                ));
            }
        }
        Ok(MultiKernelLayer {
            sublayers,
            group_slices,
        })
    }

    pub fn input_dim(&self) -> usize {
        match &self.group_slices {
            Some(slices) => slices.iter().map(|r| r.end).max().unwrap_or(0),
            None => self.sublayers[0].input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.sublayers.iter().map(|s| s.output_dim()).sum()
    }

    fn sub_input(&self, x: &Matrix, i: usize) -> Matrix {
        match &self.group_slices {
            Some(slices) => x.select_cols(slices[i].start, slices[i].end),
            None => x.clone(),
        }
    }
}

/// Fully-connected layer with optional relu.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-normal weights, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / (in_dim + out_dim) as f64).sqrt()).unwrap();
        DenseLayer {
            weight: Matrix::from_fn(in_dim, out_dim, |_, _| normal.sample(&mut rng)),
            bias: Vector::zeros(out_dim),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = x.matmul(&self.weight)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        let out = match self.activation {
            Activation::None => pre.clone(),
            Activation::Relu => {
                let mut o = pre.clone();
                for v in o.data_mut() {
                    *v = v.max(0.0);
                }
                o
            }
        };
        Ok((out, pre))
    }
}

/// Fastfood feature layer. In adaptive mode the three diagonals of every
/// block are trained; the permutation and scale stay fixed.
#[derive(Debug, Clone)]
pub struct FriedLayer {
    pub blocks: Vec<FastfoodBlock>,
    pub adaptive: bool,
}

impl FriedLayer {
    pub fn new(blocks: Vec<FastfoodBlock>, adaptive: bool) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("need at least one block".into()));
        }
        let d_pad = blocks[0].d_pad;
        if blocks.iter().any(|b| b.d_pad != d_pad) {
            return Err(Error::dim(
                "fastfood blocks disagree on padded dimension".to_string(),
            ));
        }
        Ok(FriedLayer { blocks, adaptive })
    }

    pub fn d_pad(&self) -> usize {
        self.blocks[0].d_pad
    }

    pub fn output_dim(&self) -> usize {
        2 * self.d_pad() * self.blocks.len()
    }

    fn feature_scale(&self) -> f64 {
        1.0 / ((self.d_pad() * self.blocks.len()) as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Nystrom(NystromLayer),
    MultiKernel(MultiKernelLayer),
    Dense(DenseLayer),
    Fried(FriedLayer),
}

impl Layer {
    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Nystrom(l) => l.output_dim(),
            Layer::MultiKernel(l) => l.output_dim(),
            Layer::Dense(l) => l.output_dim(),
            Layer::Fried(l) => l.output_dim(),
        }
    }

    fn is_dense(&self) -> bool {
        matches!(self, Layer::Dense(_))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        match self {
            Layer::Nystrom(l) => {
                if l.adaptive {
                    l.w.rows() * l.w.cols()
                } else {
                    0
                }
            }
            Layer::MultiKernel(l) => l
                .sublayers
                .iter()
                .map(|s| if s.adaptive { s.w.rows() * s.w.cols() } else { 0 })
                .sum(),
            Layer::Dense(l) => l.weight.rows() * l.weight.cols() + l.bias.len(),
            Layer::Fried(l) => {
                if l.adaptive {
                    3 * l.d_pad() * l.blocks.len()
                } else {
                    0
                }
            }
        }
    }

    /// Frozen scalars the layer must keep around for inference: landmark
    /// points, pinned whitening factors, non-adaptive fastfood diagonals.
    pub fn frozen_count(&self) -> usize {
        fn nystrom_frozen(l: &NystromLayer) -> usize {
            let pts = l.landmarks.m() * l.landmarks.dim();
            if l.adaptive {
                pts
            } else {
                pts + l.w.rows() * l.w.cols()
            }
        }
        match self {
            Layer::Nystrom(l) => nystrom_frozen(l),
            Layer::MultiKernel(l) => l.sublayers.iter().map(nystrom_frozen).sum(),
            Layer::Dense(_) => 0,
            Layer::Fried(l) => {
                if l.adaptive {
                    0
                } else {
                    3 * l.d_pad() * l.blocks.len()
                }
            }
        }
    }
}

/// Per-layer intermediates kept by the forward pass for backprop.
pub enum LayerCache {
    Nystrom {
        kvec: Matrix,
    },
    MultiKernel {
        kvecs: Vec<Matrix>,
    },
    Dense {
        input: Matrix,
        pre: Matrix,
    },
    Fried {
        x_pad: Matrix,
        /// Per block: (after permutation, after first fwht+gaussian fwht, Vx).
        per_block: Vec<FriedBlockCache>,
    },
}

pub struct FriedBlockCache {
    /// Input to the G diagonal: `P H B x`.
    pub after_perm: Matrix,
    /// Input to the S diagonal: `H G P H B x`.
    pub before_s: Matrix,
    /// `V x`.
    pub z: Matrix,
}

pub struct ForwardCache {
    pub per_layer: Vec<LayerCache>,
    pub batch: usize,
}

/// An ordered stack of layers: one optional feature layer, then dense
/// layers. Owns all trainable parameters.
#[derive(Debug, Clone)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate().skip(1) {
            if !l.is_dense() {
                return Err(Error::InvalidArgument(format!(
                    "feature layers must come first; layer {i} is not dense"
                )));
            }
        }
        for i in 1..layers.len() {
            let prev = layers[i - 1].output_dim();
            let Layer::Dense(d) = &layers[i] else {
                unreachable!()
            };
            if d.input_dim() != prev {
                return Err(Error::dim(format!(
                    "layer {i} expects {} inputs, previous layer emits {prev}",
                    d.input_dim()
                )));
            }
        }
        Ok(LayerStack { layers })
    }

    pub fn empty() -> Self {
        LayerStack { layers: Vec::new() }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output_dim())
    }

    /// Trainable scalars only; frozen landmark storage is reported
    /// separately by [`LayerStack::frozen_scalar_count`].
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.trainable_count()).sum()
    }

    pub fn frozen_scalar_count(&self) -> usize {
        self.layers.iter().map(|l| l.frozen_count()).sum()
    }

    /// Trainable tensors in stack order, flattened to slices. The order is
    /// the contract shared with [`LayerStack::backward`] and the optimizer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Nystrom(l) => {
                    if l.adaptive {
                        out.push(l.w.data_mut());
                    }
                }
                Layer::MultiKernel(l) => {
                    for s in &mut l.sublayers {
                        if s.adaptive {
                            out.push(s.w.data_mut());
                        }
                    }
                }
                Layer::Dense(l) => {
                    out.push(l.weight.data_mut());
                    out.push(l.bias.data_mut());
                }
                Layer::Fried(l) => {
                    if l.adaptive {
                        for b in &mut l.blocks {
                            out.push(b.s_diag.data_mut());
                            out.push(b.g_diag.data_mut());
                            out.push(b.b_diag.data_mut());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Nystrom(l) => {
                    if l.adaptive {
                        out.push(l.w.rows() * l.w.cols());
                    }
                }
                Layer::MultiKernel(l) => {
                    for s in &l.sublayers {
                        if s.adaptive {
                            out.push(s.w.rows() * s.w.cols());
                        }
                    }
                }
                Layer::Dense(l) => {
                    out.push(l.weight.rows() * l.weight.cols());
                    out.push(l.bias.len());
                }
                Layer::Fried(l) => {
                    if l.adaptive {
                        for b in &l.blocks {
                            out.push(b.s_diag.len());
                            out.push(b.g_diag.len());
                            out.push(b.b_diag.len());
                        }
                    }
                }
            }
        }
        out
    }

    /// Forward pass, caching every intermediate backprop needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let mut cur = x.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Nystrom(l) => {
                    let (out, kvec) = l.forward(&cur)?;
                    (out, LayerCache::Nystrom { kvec })
                }
                Layer::MultiKernel(l) => {
                    if l.input_dim() > cur.cols() {
                        return Err(Error::dim(format!(
                            "multi-kernel layer needs {} columns, input has {}",
                            l.input_dim(),
                            cur.cols()
                        )));
                    }
                    let mut kvecs = Vec::with_capacity(l.sublayers.len());
                    let mut outs = Vec::with_capacity(l.sublayers.len());
                    for (i, sub) in l.sublayers.iter().enumerate() {
                        let xi = l.sub_input(&cur, i);
                        let (out, kvec) = sub.forward(&xi)?;
                        kvecs.push(kvec);
                        outs.push(out);
                    }
                    let width: usize = outs.iter().map(|o| o.cols()).sum();
                    let mut cat = Matrix::zeros(cur.rows(), width);
                    for r in 0..cur.rows() {
                        let row = cat.row_mut(r);
                        let mut off = 0;
                        for o in &outs {
                            row[off..off + o.cols()].copy_from_slice(o.row(r));
                            off += o.cols();
                        }
                    }
                    (cat, LayerCache::MultiKernel { kvecs })
                }
                Layer::Dense(l) => {
                    if cur.cols() != l.input_dim() {
                        return Err(Error::dim(format!(
                            "dense layer expects {} inputs, got {}",
                            l.input_dim(),
                            cur.cols()
                        )));
                    }
                    let (out, pre) = l.forward(&cur)?;
                    (
                        out,
                        LayerCache::Dense {
                            input: cur.clone(),
                            pre,
                        },
                    )
                }
                Layer::Fried(l) => {
                    let d_pad = l.d_pad();
                    if cur.cols() > d_pad {
                        return Err(Error::dim(format!(
                            "fastfood layer takes at most {d_pad} columns, input has {}",
                            cur.cols()
                        )));
                    }
                    let mut x_pad = Matrix::zeros(cur.rows(), d_pad);
                    for r in 0..cur.rows() {
                        x_pad.row_mut(r)[..cur.cols()].copy_from_slice(cur.row(r));
                    }
                    let scale = l.feature_scale();
                    let mut out = Matrix::zeros(cur.rows(), l.output_dim());
                    let mut per_block = Vec::with_capacity(l.blocks.len());
                    for (bi, block) in l.blocks.iter().enumerate() {
                        let cache = fried_block_forward(block, &x_pad)?;
                        let off = bi * 2 * d_pad;
                        for r in 0..cur.rows() {
                            let zrow = cache.z.row(r);
                            let orow = out.row_mut(r);
                            for (j, &v) in zrow.iter().enumerate() {
                                orow[off + j] = v.cos() * scale;
                                orow[off + d_pad + j] = v.sin() * scale;
                            }
                        }
                        per_block.push(cache);
                    }
                    (out, LayerCache::Fried { x_pad, per_block })
                }
            };
            per_layer.push(cache);
            cur = next;
        }
        Ok((
            cur,
            ForwardCache {
                per_layer,
                batch: x.rows(),
            },
        ))
    }

    /// Reverse-mode pass. Returns gradient buffers aligned with
    /// [`LayerStack::param_slices_mut`]. Frozen tensors (landmarks,
    /// non-adaptive maps) receive no gradient entries at all.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Vec<Vec<f64>>> {
        if cache.per_layer.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward cache does not match stack".into(),
            ));
        }
        let mut grads_rev: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut d = dlogits.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.per_layer).rev() {
            match (layer, lc) {
                (Layer::Nystrom(l), LayerCache::Nystrom { kvec }) => {
                    if l.adaptive {
                        let dw = kvec.transpose().matmul(&d)?;
                        grads_rev.push(vec![dw.data().to_vec()]);
                    } else {
                        grads_rev.push(vec![]);
                    }
                    // first layer: no input gradient needed
                }
                (Layer::MultiKernel(l), LayerCache::MultiKernel { kvecs }) => {
                    let mut group = Vec::new();
                    let mut off = 0;
                    for (sub, kvec) in l.sublayers.iter().zip(kvecs) {
                        let w_cols = sub.output_dim();
                        let dsub = d.select_cols(off, off + w_cols);
                        if sub.adaptive {
                            let dw = kvec.transpose().matmul(&dsub)?;
                            group.push(dw.data().to_vec());
                        }
                        off += w_cols;
                    }
                    grads_rev.push(group);
                }
                (Layer::Dense(l), LayerCache::Dense { input, pre }) => {
                    let mut dpre = d.clone();
                    if l.activation == Activation::Relu {
                        for (g, p) in dpre.data_mut().iter_mut().zip(pre.data()) {
                            if *p <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    let dw = input.transpose().matmul(&dpre)?;
                    let mut db = vec![0.0; l.bias.len()];
                    for r in 0..dpre.rows() {
                        for (acc, g) in db.iter_mut().zip(dpre.row(r)) {
                            *acc += g;
                        }
                    }
                    d = dpre.matmul(&l.weight.transpose())?;
                    grads_rev.push(vec![dw.data().to_vec(), db]);
                }
                (Layer::Fried(l), LayerCache::Fried { x_pad, per_block }) => {
                    if l.adaptive {
                        let mut group = Vec::new();
                        let d_pad = l.d_pad();
                        let scale = l.feature_scale();
                        for (bi, (block, bc)) in l.blocks.iter().zip(per_block).enumerate() {
                            let off = bi * 2 * d_pad;
                            let (ds, dg, db) =
                                fried_block_backward(block, bc, x_pad, &d, off, scale)?;
                            group.push(ds);
                            group.push(dg);
                            group.push(db);
                        }
                        grads_rev.push(group);
                    } else {
                        grads_rev.push(vec![]);
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "forward cache does not match stack".into(),
                    ))
                }
            }
        }
        grads_rev.reverse();
        Ok(grads_rev.into_iter().flatten().collect())
    }
}

fn fried_block_forward(block: &FastfoodBlock, x_pad: &Matrix) -> Result<FriedBlockCache> {
    let d_pad = block.d_pad;
    let b = x_pad.rows();
    let mut after_perm = Matrix::zeros(b, d_pad);
    let mut before_s = Matrix::zeros(b, d_pad);
    let mut z = Matrix::zeros(b, d_pad);
    let scale = 1.0 / (block.sigma * (d_pad as f64).sqrt());
    let mut buf = vec![0.0; d_pad];
    for r in 0..b {
        buf.copy_from_slice(x_pad.row(r));
        for (v, bd) in buf.iter_mut().zip(block.b_diag.data()) {
            *v *= bd;
        }
        fwht_in_place(&mut buf)?;
        {
            let ap = after_perm.row_mut(r);
            for (i, a) in ap.iter_mut().enumerate() {
                *a = buf[block.perm[i]];
            }
        }
        {
            let (ap, bs) = (after_perm.row(r), before_s.row_mut(r));
            for ((t, a), g) in bs.iter_mut().zip(ap).zip(block.g_diag.data()) {
                *t = a * g;
            }
        }
        fwht_in_place(before_s.row_mut(r))?;
        let (bs, zr) = (before_s.row(r), z.row_mut(r));
        for ((o, t), s) in zr.iter_mut().zip(bs).zip(block.s_diag.data()) {
            *o = t * s * scale;
        }
    }
    Ok(FriedBlockCache {
        after_perm,
        before_s,
        z,
    })
}

/// Gradients of the loss w.r.t. one block's (s, g, b) diagonals given the
/// gradient `d` of the concatenated trig features.
fn fried_block_backward(
    block: &FastfoodBlock,
    bc: &FriedBlockCache,
    x_pad: &Matrix,
    d: &Matrix,
    col_off: usize,
    feature_scale: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d_pad = block.d_pad;
    let b = x_pad.rows();
    let v_scale = 1.0 / (block.sigma * (d_pad as f64).sqrt());
    let mut ds = vec![0.0; d_pad];
    let mut dg = vec![0.0; d_pad];
    let mut db = vec![0.0; d_pad];
    let mut dz = vec![0.0; d_pad];
    let mut dt = vec![0.0; d_pad];
    for r in 0..b {
        let drow = d.row(r);
        let zrow = bc.z.row(r);
        for j in 0..d_pad {
            let dcos = drow[col_off + j];
            let dsin = drow[col_off + d_pad + j];
            dz[j] = (-zrow[j].sin() * dcos + zrow[j].cos() * dsin) * feature_scale;
        }
        // z = v_scale * s .* t5, t5 cached in before_s
        let t5 = bc.before_s.row(r);
        for j in 0..d_pad {
            ds[j] += dz[j] * v_scale * t5[j];
            dt[j] = dz[j] * v_scale * block.s_diag[j];
        }
        // t5 = H t4, so dt4 = H dt5
        fwht_in_place(&mut dt)?;
        // t4 = g .* t3, t3 cached in after_perm
        let t3 = bc.after_perm.row(r);
        for j in 0..d_pad {
            dg[j] += dt[j] * t3[j];
            dt[j] *= block.g_diag[j];
        }
        // t3 = P t2: scatter back through the permutation
        dz.fill(0.0); // reuse as dt2
        for i in 0..d_pad {
            dz[block.perm[i]] += dt[i];
        }
        // t2 = H t1, so dt1 = H dt2
        fwht_in_place(&mut dz)?;
        // t1 = b .* x
        let xrow = x_pad.row(r);
        for j in 0..d_pad {
            db[j] += dz[j] * xrow[j];
        }
    }
    Ok((ds, dg, db))
}
