//! The blur-size classifier: three 3×3 convolution + mean-pool stages
//! followed by five affine layers and a log-softmax, implemented as batched
//! matrix products.
//!
//! Every parallel region partitions disjoint output rows and keeps a fixed
//! sequential inner order, so results are bitwise identical for any thread
//! count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Layer-shape configuration. The spatial side must be divisible by 8
/// (three 2×2 pools); the flattened width feeding the first affine layer is
/// `conv_channels[2] * (input_side / 8)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub input_side: usize,
    pub conv_channels: [usize; 3],
    pub fc_widths: [usize; 4],
    pub classes: usize,
}

impl NetConfig {
    pub fn with_classes(classes: usize) -> Self {
        NetConfig {
            input_side: 32,
            conv_channels: [16, 32, 32],
            fc_widths: [512, 256, 128, 64],
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.input_side % 8 != 0 {
            return Err(Error::InvalidConfiguration(format!(
                "input side must be a positive multiple of 8, got {}",
                self.input_side
            )));
        }
        if self.classes == 0 {
            return Err(Error::InvalidConfiguration("classes must be >= 1".into()));
        }
        if self.conv_channels.iter().any(|&c| c == 0) || self.fc_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfiguration(
                "layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn flatten_dim(&self) -> usize {
        let side = self.input_side / 8;
        self.conv_channels[2] * side * side
    }

    fn fc_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(5);
        let mut prev = self.flatten_dim();
        for &w in &self.fc_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.classes));
        dims
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    /// Filters, row-major `[c_out][c_in * 9]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcLayer {
    pub dim_in: usize,
    pub dim_out: usize,
    /// Row-major `[dim_out][dim_in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable tensors; doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub cfg: NetConfig,
    pub conv: Vec<ConvLayer>,
    pub fc: Vec<FcLayer>,
}

impl NetworkParams {
    /// Seeded initialization: uniform `±sqrt(6 / fan_in)` weights and small
    /// uniform biases. Nonzero biases keep pre-activations off the exact
    /// rectifier breakpoint that zero-filled receptive fields would
    /// otherwise pin them to (rectified sparsity makes all-zero fields
    /// common), which keeps the loss differentiable at the starting point.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::new();
        let mut c_in = 1usize;
        for &c_out in &cfg.conv_channels {
            let fan_in = (c_in * 9) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let weight = (0..c_out * c_in * 9)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = (0..c_out).map(|_| rng.random_range(-0.05..0.05)).collect();
            conv.push(ConvLayer {
                c_in,
                c_out,
                weight,
                bias,
            });
            c_in = c_out;
        }
        let fc = cfg
            .fc_dims()
            .into_iter()
            .map(|(dim_in, dim_out)| {
                let bound = (6.0 / dim_in as f64).sqrt();
                FcLayer {
                    dim_in,
                    dim_out,
                    weight: (0..dim_out * dim_in)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: (0..dim_out).map(|_| rng.random_range(-0.05..0.05)).collect(),
                }
            })
            .collect();
        Ok(NetworkParams { cfg, conv, fc })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_tensor_mut(|t| t.iter_mut().for_each(|v| *v = 0.0));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|t| n += t.len());
        n
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(&[f64])) {
        for layer in &self.conv {
            f(&layer.weight);
            f(&layer.bias);
        }
        for layer in &self.fc {
            f(&layer.weight);
            f(&layer.bias);
        }
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for layer in &mut self.conv {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
        for layer in &mut self.fc {
            f(&mut layer.weight);
            f(&mut layer.bias);
        }
    }

    /// Pairwise visit over matching tensors of `self` and `other`.
    pub fn zip_tensors_mut(&mut self, other: &Self, mut f: impl FnMut(&mut [f64], &[f64])) {
        for (a, b) in self.conv.iter_mut().zip(&other.conv) {
            f(&mut a.weight, &b.weight);
            f(&mut a.bias, &b.bias);
        }
        for (a, b) in self.fc.iter_mut().zip(&other.fc) {
            f(&mut a.weight, &b.weight);
            f(&mut a.bias, &b.bias);
        }
    }

    /// Log-probabilities, one `classes`-wide row per input feature.
    pub fn forward(&self, features: &[Grid]) -> Result<Vec<Vec<f64>>> {
        let input = BatchPlanes::from_features(features, self.cfg.input_side)?;
        let (_, logp) = self.forward_cached(&input);
        let k = self.cfg.classes;
        Ok(logp.chunks_exact(k).map(|row| row.to_vec()).collect())
    }

    /// Forward pass keeping every intermediate needed by `backward`.
    pub(crate) fn forward_cached(&self, input: &BatchPlanes) -> (ForwardCache, Vec<f64>) {
        let batch = input.batch;
        let mut planes = input.clone();
        let mut conv_caches = Vec::with_capacity(self.conv.len());
        for layer in &self.conv {
            let (cache, pooled) = conv_stage_forward(layer, &planes);
            conv_caches.push(cache);
            planes = pooled;
        }
        let flat = planes.flatten();
        let mut fc_inputs = Vec::with_capacity(self.fc.len());
        let mut x = flat;
        for (i, layer) in self.fc.iter().enumerate() {
            let mut z = affine_forward(layer, &x, batch);
            if i + 1 < self.fc.len() {
                relu_in_place(&mut z);
            }
            fc_inputs.push(x);
            x = z;
        }
        let logp = log_softmax_rows(&x, self.cfg.classes);
        (
            ForwardCache {
                batch,
                conv_caches,
                fc_inputs,
                logits_shape: self.cfg.classes,
            },
            logp,
        )
    }

    /// Backward pass from `d loss / d logits`; returns parameter gradients
    /// and the gradient with respect to the input planes.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> (Self, BatchPlanes) {
        let batch = cache.batch;
        let mut grads = self.zeros_like();
        let mut dx = dlogits.to_vec();
        for i in (0..self.fc.len()).rev() {
            let layer = &self.fc[i];
            let x = &cache.fc_inputs[i];
            let (dw, db, mut dprev) = affine_backward(layer, x, &dx, batch);
            grads.fc[i].weight = dw;
            grads.fc[i].bias = db;
            if i > 0 {
                // the stored input of layer i is the rectified output of
                // layer i-1, so its zeros mask the upstream gradient
                for (g, &v) in dprev.iter_mut().zip(x.iter()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dx = dprev;
        }
        let side = self.cfg.input_side / 8;
        let mut dplanes = BatchPlanes::unflatten(&dx, self.cfg.conv_channels[2], batch, side, side);
        for i in (0..self.conv.len()).rev() {
            let (dlayer, dinput) = conv_stage_backward(&self.conv[i], &cache.conv_caches[i], &dplanes);
            grads.conv[i] = dlayer;
            dplanes = dinput;
        }
        (grads, dplanes)
    }
}

/// Activations in channel-plane layout: `planes[c][b * h * w + y * w + x]`.
#[derive(Clone, Debug)]
pub(crate) struct BatchPlanes {
    pub channels: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl BatchPlanes {
    pub fn zeros(channels: usize, batch: usize, h: usize, w: usize) -> Self {
        BatchPlanes {
            channels,
            batch,
            h,
            w,
            data: vec![0.0; channels * batch * h * w],
        }
    }

    pub fn from_features(features: &[Grid], side: usize) -> Result<Self> {
        let batch = features.len();
        if batch == 0 {
            return Err(Error::InvalidArgument("empty feature batch".into()));
        }
        let mut planes = BatchPlanes::zeros(1, batch, side, side);
        for (b, feat) in features.iter().enumerate() {
            if feat.h() != side || feat.w() != side {
                return Err(Error::InvalidArgument(format!(
                    "feature {b} is {}x{}, expected {side}x{side}",
                    feat.h(),
                    feat.w()
                )));
            }
            planes.data[b * side * side..(b + 1) * side * side].copy_from_slice(feat.as_slice());
        }
        Ok(planes)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let stride = self.batch * self.h * self.w;
        &self.data[c * stride..(c + 1) * stride]
    }

    /// Reorders `[c][b][hw]` into rows `[b][c * hw]`.
    pub fn flatten(&self) -> Vec<f64> {
        let hw = self.h * self.w;
        let stride = self.batch * hw;
        let mut out = vec![0.0; self.channels * stride];
        for b in 0..self.batch {
            for c in 0..self.channels {
                let src = &self.data[c * stride + b * hw..c * stride + (b + 1) * hw];
                out[b * self.channels * hw + c * hw..b * self.channels * hw + (c + 1) * hw]
                    .copy_from_slice(src);
            }
        }
        out
    }

    pub fn unflatten(rows: &[f64], channels: usize, batch: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        let mut planes = BatchPlanes::zeros(channels, batch, h, w);
        let stride = batch * hw;
        for b in 0..batch {
            for c in 0..channels {
                planes.data[c * stride + b * hw..c * stride + (b + 1) * hw]
                    .copy_from_slice(&rows[b * channels * hw + c * hw..b * channels * hw + (c + 1) * hw]);
            }
        }
        planes
    }
}

pub(crate) struct ConvStageCache {
    /// im2col matrix of the stage input, `[c_in * 9][batch * h * w]`.
    col: Vec<f64>,
    /// Pre-activation planes (for the rectifier mask).
    pre: BatchPlanes,
}

pub(crate) struct ForwardCache {
    pub batch: usize,
    conv_caches: Vec<ConvStageCache>,
    /// Input rows of each affine layer (rectified outputs of the previous).
    fc_inputs: Vec<Vec<f64>>,
    #[allow(dead_code)]
    logits_shape: usize,
}

// ---------------------------------------------------------------------------
// matrix kernels
// ---------------------------------------------------------------------------

/// Output rows per task. Tasks own disjoint row blocks and keep the block
/// resident while the other operand streams through once, which bounds
/// memory traffic; results are bitwise independent of the thread count.
const PAR_ROW_CHUNK: usize = 8;

/// Dot product over eight independent accumulator lanes, so the reduction
/// is instruction-parallel instead of one serial FMA chain.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut a_it = a.chunks_exact(8);
    let mut b_it = b.chunks_exact(8);
    for (ac, bc) in (&mut a_it).zip(&mut b_it) {
        for u in 0..8 {
            lanes[u] += ac[u] * bc[u];
        }
    }
    let mut tail = 0.0;
    for (&av, &bv) in a_it.remainder().iter().zip(b_it.remainder()) {
        tail += av * bv;
    }
    lanes.iter().sum::<f64>() + tail
}

/// Column-tile width; one tile of PAR_ROW_CHUNK output rows stays cached
/// while the streamed operand passes through.
const COL_TILE: usize = 512;

/// C[m][n] = A[m][k] · B[k][n]
fn matmul_ab(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(PAR_ROW_CHUNK * n)
        .enumerate()
        .for_each(|(chunk, rows)| {
            let base = chunk * PAR_ROW_CHUNK;
            let rcount = rows.len() / n;
            let mut t0 = 0;
            while t0 < n {
                let t1 = (t0 + COL_TILE).min(n);
                for l in 0..k {
                    let b_tile = &b[l * n + t0..l * n + t1];
                    for r in 0..rcount {
                        let ail = a[(base + r) * k + l];
                        if ail == 0.0 {
                            continue;
                        }
                        let out_tile = &mut rows[r * n + t0..r * n + t1];
                        for (o, &bv) in out_tile.iter_mut().zip(b_tile) {
                            *o += ail * bv;
                        }
                    }
                }
                t0 = t1;
            }
        });
    out
}

/// C[m][n] = A[m][k] · B[n][k]^T
fn matmul_abt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(PAR_ROW_CHUNK * n)
        .enumerate()
        .for_each(|(chunk, rows)| {
            let base = chunk * PAR_ROW_CHUNK;
            let rcount = rows.len() / n;
            for j in 0..n {
                let b_row = &b[j * k..(j + 1) * k];
                for r in 0..rcount {
                    let a_row = &a[(base + r) * k..(base + r + 1) * k];
                    rows[r * n + j] = dot(a_row, b_row);
                }
            }
        });
    out
}

/// C[m][n] = A[k][m]^T · B[k][n]
fn matmul_atb(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(PAR_ROW_CHUNK * n)
        .enumerate()
        .for_each(|(chunk, rows)| {
            let base = chunk * PAR_ROW_CHUNK;
            let rcount = rows.len() / n;
            let mut t0 = 0;
            while t0 < n {
                let t1 = (t0 + COL_TILE).min(n);
                for l in 0..k {
                    let b_tile = &b[l * n + t0..l * n + t1];
                    for r in 0..rcount {
                        let ali = a[l * m + base + r];
                        if ali == 0.0 {
                            continue;
                        }
                        let out_tile = &mut rows[r * n + t0..r * n + t1];
                        for (o, &bv) in out_tile.iter_mut().zip(b_tile) {
                            *o += ali * bv;
                        }
                    }
                }
                t0 = t1;
            }
        });
    out
}

// ---------------------------------------------------------------------------
// layer primitives
// ---------------------------------------------------------------------------

/// 3×3 same-padding im2col: row `c * 9 + (dy + 1) * 3 + (dx + 1)` of the
/// output holds plane `c` shifted by `(dy, dx)` with zero fill.
fn im2col3x3(planes: &BatchPlanes) -> Vec<f64> {
    let (h, w, batch) = (planes.h, planes.w, planes.batch);
    let cols = batch * h * w;
    let mut out = vec![0.0; planes.channels * 9 * cols];
    out.par_chunks_mut(9 * cols)
        .enumerate()
        .for_each(|(c, chunk)| {
            let plane = planes.plane(c);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let row = ((dy + 1) * 3 + (dx + 1)) as usize;
                    let dst = &mut chunk[row * cols..(row + 1) * cols];
                    for b in 0..batch {
                        for y in 0..h as i64 {
                            let sy = y + dy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let (x0, x1) = (0.max(-dx) as usize, (w as i64).min(w as i64 - dx) as usize);
                            if x0 >= x1 {
                                continue;
                            }
                            let d = b * h * w + y as usize * w;
                            let s = b * h * w + sy as usize * w;
                            let (sx0, sx1) = ((x0 as i64 + dx) as usize, (x1 as i64 + dx) as usize);
                            dst[d + x0..d + x1].copy_from_slice(&plane[s + sx0..s + sx1]);
                        }
                    }
                }
            }
        });
    out
}

/// Adjoint of `im2col3x3`: scatter-adds column gradients back to planes.
fn col2im3x3(dcol: &[f64], channels: usize, batch: usize, h: usize, w: usize) -> BatchPlanes {
    let cols = batch * h * w;
    let mut planes = BatchPlanes::zeros(channels, batch, h, w);
    let stride = batch * h * w;
    planes
        .data
        .par_chunks_mut(stride)
        .enumerate()
        .for_each(|(c, plane)| {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let row = c * 9 + ((dy + 1) * 3 + (dx + 1)) as usize;
                    let src = &dcol[row * cols..(row + 1) * cols];
                    for b in 0..batch {
                        for y in 0..h as i64 {
                            let sy = y + dy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let (x0, x1) = (0.max(-dx) as usize, (w as i64).min(w as i64 - dx) as usize);
                            if x0 >= x1 {
                                continue;
                            }
                            let d = b * h * w + y as usize * w;
                            let s = b * h * w + sy as usize * w;
                            let (sx0, sx1) = ((x0 as i64 + dx) as usize, (x1 as i64 + dx) as usize);
                            for (pv, gv) in plane[s + sx0..s + sx1].iter_mut().zip(&src[d + x0..d + x1])
                            {
                                *pv += gv;
                            }
                        }
                    }
                }
            }
        });
    planes
}

fn conv_stage_forward(layer: &ConvLayer, input: &BatchPlanes) -> (ConvStageCache, BatchPlanes) {
    let (h, w, batch) = (input.h, input.w, input.batch);
    let cols = batch * h * w;
    let col = im2col3x3(input);
    let mut z = matmul_ab(&layer.weight, &col, layer.c_out, layer.c_in * 9, cols);
    for (c, chunk) in z.chunks_mut(cols).enumerate() {
        let bias = layer.bias[c];
        chunk.iter_mut().for_each(|v| *v += bias);
    }
    let pre = BatchPlanes {
        channels: layer.c_out,
        batch,
        h,
        w,
        data: z,
    };
    let pooled = meanpool2_relu(&pre);
    (ConvStageCache { col, pre }, pooled)
}

fn conv_stage_backward(
    layer: &ConvLayer,
    cache: &ConvStageCache,
    dpooled: &BatchPlanes,
) -> (ConvLayer, BatchPlanes) {
    let pre = &cache.pre;
    let mut dz = meanpool2_backward(dpooled, pre.h, pre.w);
    // rectifier mask
    for (g, &v) in dz.data.iter_mut().zip(pre.data.iter()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    let cols = pre.batch * pre.h * pre.w;
    let dbias: Vec<f64> = dz
        .data
        .chunks(cols)
        .map(|chunk| chunk.iter().sum())
        .collect();
    let dweight = matmul_abt(&dz.data, &cache.col, layer.c_out, cols, layer.c_in * 9);
    let dcol = matmul_atb(&layer.weight, &dz.data, layer.c_out, layer.c_in * 9, cols);
    let dinput = col2im3x3(&dcol, layer.c_in, pre.batch, pre.h, pre.w);
    (
        ConvLayer {
            c_in: layer.c_in,
            c_out: layer.c_out,
            weight: dweight,
            bias: dbias,
        },
        dinput,
    )
}

/// Rectify then 2×2 mean-pool in one pass.
fn meanpool2_relu(input: &BatchPlanes) -> BatchPlanes {
    let (h2, w2) = (input.h / 2, input.w / 2);
    let mut out = BatchPlanes::zeros(input.channels, input.batch, h2, w2);
    let in_stride = input.batch * input.h * input.w;
    let out_stride = input.batch * h2 * w2;
    out.data
        .par_chunks_mut(out_stride)
        .enumerate()
        .for_each(|(c, dst)| {
            let src = &input.data[c * in_stride..(c + 1) * in_stride];
            for b in 0..input.batch {
                for y in 0..h2 {
                    let r0 = b * input.h * input.w + 2 * y * input.w;
                    let r1 = r0 + input.w;
                    let d = b * h2 * w2 + y * w2;
                    for x in 0..w2 {
                        dst[d + x] = 0.25
                            * (src[r0 + 2 * x].max(0.0)
                                + src[r0 + 2 * x + 1].max(0.0)
                                + src[r1 + 2 * x].max(0.0)
                                + src[r1 + 2 * x + 1].max(0.0));
                    }
                }
            }
        });
    out
}

fn meanpool2_backward(dpooled: &BatchPlanes, h: usize, w: usize) -> BatchPlanes {
    let (h2, w2) = (dpooled.h, dpooled.w);
    let mut out = BatchPlanes::zeros(dpooled.channels, dpooled.batch, h, w);
    let in_stride = dpooled.batch * h2 * w2;
    let out_stride = dpooled.batch * h * w;
    out.data
        .par_chunks_mut(out_stride)
        .enumerate()
        .for_each(|(c, dst)| {
        let src = &dpooled.data[c * in_stride..(c + 1) * in_stride];
        for b in 0..dpooled.batch {
            for y in 0..h2 {
                let s = b * h2 * w2 + y * w2;
                let r0 = b * h * w + 2 * y * w;
                let r1 = r0 + w;
                for x in 0..w2 {
                    let g = 0.25 * src[s + x];
                    dst[r0 + 2 * x] = g;
                    dst[r0 + 2 * x + 1] = g;
                    dst[r1 + 2 * x] = g;
                    dst[r1 + 2 * x + 1] = g;
                }
            }
        }
    });
    out
}

fn relu_in_place(data: &mut [f64]) {
    for v in data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn affine_forward(layer: &FcLayer, x: &[f64], batch: usize) -> Vec<f64> {
    let mut z = matmul_abt(x, &layer.weight, batch, layer.dim_in, layer.dim_out);
    for row in z.chunks_mut(layer.dim_out) {
        for (v, &b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

fn affine_backward(
    layer: &FcLayer,
    x: &[f64],
    dz: &[f64],
    batch: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dweight = matmul_atb(dz, x, batch, layer.dim_out, layer.dim_in);
    let mut dbias = vec![0.0; layer.dim_out];
    for row in dz.chunks(layer.dim_out) {
        for (b, &v) in dbias.iter_mut().zip(row) {
            *b += v;
        }
    }
    let dx = matmul_ab(dz, &layer.weight, batch, layer.dim_out, layer.dim_in);
    (dweight, dbias, dx)
}

fn log_softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            input_side: 8,
            conv_channels: [2, 3, 3],
            fc_widths: [5, 4, 4, 3],
            classes: 3,
        }
    }

    fn random_features(cfg: &NetConfig, n: usize, seed: u64) -> Vec<Grid> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Grid::from_fn(cfg.input_side, cfg.input_side, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    /// Straightforward per-sample re-implementation of the same arithmetic:
    /// explicit loops, no im2col, no batching.
    fn naive_forward(params: &NetworkParams, feature: &Grid) -> Vec<f64> {
        let mut maps: Vec<Grid> = vec![feature.clone()];
        for layer in &params.conv {
            let h = maps[0].h();
            let w = maps[0].w();
            let mut outs = Vec::new();
            for co in 0..layer.c_out {
                let mut out = Grid::zeros(h, w);
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        let mut acc = layer.bias[co];
                        for (ci, map) in maps.iter().enumerate() {
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let (sy, sx) = (y + dy, x + dx);
                                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                                        continue;
                                    }
                                    let wv = layer.weight
                                        [co * layer.c_in * 9 + ci * 9 + ((dy + 1) * 3 + dx + 1) as usize];
                                    acc += wv * map[(sy as usize, sx as usize)];
                                }
                            }
                        }
                        out[(y as usize, x as usize)] = acc.max(0.0);
                    }
                }
                // 2x2 mean pool
                let pooled = Grid::from_fn(h / 2, w / 2, |py, px| {
                    0.25 * (out[(2 * py, 2 * px)]
                        + out[(2 * py, 2 * px + 1)]
                        + out[(2 * py + 1, 2 * px)]
                        + out[(2 * py + 1, 2 * px + 1)])
                });
                outs.push(pooled);
            }
            maps = outs;
        }
        let mut x: Vec<f64> = Vec::new();
        for map in &maps {
            x.extend_from_slice(map.as_slice());
        }
        for (i, layer) in params.fc.iter().enumerate() {
            let mut z = vec![0.0; layer.dim_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = layer.bias[o];
                for (iv, &xv) in x.iter().enumerate() {
                    acc += layer.weight[o * layer.dim_in + iv] * xv;
                }
                *zo = if i + 1 < params.fc.len() { acc.max(0.0) } else { acc };
            }
            x = z;
        }
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        x.iter().map(|v| v - lse).collect()
    }

    #[test]
    fn default_shapes_chain_together() {
        let cfg = NetConfig::with_classes(7);
        assert_eq!(cfg.flatten_dim(), 512);
        let params = NetworkParams::init(cfg, 0).unwrap();
        assert_eq!(params.fc[0].dim_in, 512);
        assert_eq!(params.fc[0].dim_out, 512);
        assert_eq!(params.fc[4].dim_out, 7);
        let features = random_features(&cfg, 2, 1);
        let logp = params.forward(&features).unwrap();
        assert_eq!(logp.len(), 2);
        assert_eq!(logp[0].len(), 7);
    }

    #[test]
    fn zeroed_final_layer_gives_uniform_distribution() {
        let cfg = tiny_cfg();
        let mut params = NetworkParams::init(cfg, 2).unwrap();
        let last = params.fc.len() - 1;
        params.fc[last].weight.iter_mut().for_each(|v| *v = 0.0);
        params.fc[last].bias.iter_mut().for_each(|v| *v = 0.0);
        let features = random_features(&cfg, 3, 3);
        let logp = params.forward(&features).unwrap();
        let expect = -(cfg.classes as f64).ln();
        for row in logp {
            for v in row {
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_log_probabilities() {
        let cfg = tiny_cfg();
        let params = NetworkParams::init(cfg, 4).unwrap();
        let features = random_features(&cfg, 5, 5);
        for row in params.forward(&features).unwrap() {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batched_forward_matches_naive_reimplementation() {
        for (cfg, seed) in [(tiny_cfg(), 10u64), (NetConfig::with_classes(7), 11)] {
            let params = NetworkParams::init(cfg, seed).unwrap();
            let features = random_features(&cfg, 3, seed + 1);
            let batched = params.forward(&features).unwrap();
            for (b, feat) in features.iter().enumerate() {
                let naive = naive_forward(&params, feat);
                for (a, e) in batched[b].iter().zip(&naive) {
                    assert!((a - e).abs() < 1e-10, "batch {b}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_exhaustively() {
        let cfg = NetConfig {
            input_side: 16,
            conv_channels: [3, 4, 4],
            fc_widths: [24, 16, 12, 8],
            classes: 3,
        };
        let params = NetworkParams::init(cfg, 7).unwrap();
        let feats = random_features(&cfg, 6, 1);
        let batch_n = 6usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeff: Vec<f64> = (0..batch_n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss = |p: &NetworkParams| -> f64 {
            let logp = p.forward(&feats).unwrap();
            logp.iter()
                .flatten()
                .zip(&coeff)
                .map(|(l, c)| l * c)
                .sum()
        };

        let input = BatchPlanes::from_features(&feats, cfg.input_side).unwrap();
        let (cache, logp) = params.forward_cached(&input);
        // d loss / d logits for loss = sum coeff_k logp_k:
        // dz_j = coeff_j - softmax_j * sum_k coeff_k (per row)
        let k = cfg.classes;
        let mut dlogits = vec![0.0; logp.len()];
        for b in 0..batch_n {
            let row = &logp[b * k..(b + 1) * k];
            let csum: f64 = coeff[b * k..(b + 1) * k].iter().sum();
            for j in 0..k {
                dlogits[b * k + j] = coeff[b * k + j] - row[j].exp() * csum;
            }
        }
        let (grads, dinput) = params.backward(&cache, &dlogits);

        let mut grad_tensors = Vec::new();
        grads.for_each_tensor(|t| grad_tensors.push(t.to_vec()));
        let mut sizes = Vec::new();
        params.for_each_tensor(|t| sizes.push(t.len()));
        let h = 1e-6;
        for tensor in 0..sizes.len() {
            for offset in 0..sizes[tensor] {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let mut idx = 0;
                plus.for_each_tensor_mut(|t| {
                    if idx == tensor {
                        t[offset] += h;
                    }
                    idx += 1;
                });
                idx = 0;
                minus.for_each_tensor_mut(|t| {
                    if idx == tensor {
                        t[offset] -= h;
                    }
                    idx += 1;
                });
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grad_tensors[tensor][offset];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-5);
                assert!(
                    rel < 1e-4,
                    "tensor {tensor} offset {offset}: a={analytic:.6e} fd={fd:.6e}"
                );
            }
        }

        // input gradient too
        let hw = cfg.input_side * cfg.input_side;
        for b in 0..batch_n {
            for pos in [0usize, 7, 19, 40, 63] {
                let mut plus = feats.clone();
                let mut minus = feats.clone();
                plus[b].as_mut_slice()[pos] += h;
                minus[b].as_mut_slice()[pos] -= h;
                let lp: f64 = params
                    .forward(&plus)
                    .unwrap()
                    .iter()
                    .flatten()
                    .zip(&coeff)
                    .map(|(l, c)| l * c)
                    .sum();
                let lm: f64 = params
                    .forward(&minus)
                    .unwrap()
                    .iter()
                    .flatten()
                    .zip(&coeff)
                    .map(|(l, c)| l * c)
                    .sum();
                let fd = (lp - lm) / (2.0 * h);
                let analytic = dinput.plane(0)[b * hw + pos];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
                assert!(rel < 1e-4, "input b={b} pos={pos}: a={analytic:.6e} fd={fd:.6e}");
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_cfg();
        let a = NetworkParams::init(cfg, 7).unwrap();
        let b = NetworkParams::init(cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = NetworkParams::init(cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(NetConfig {
            input_side: 12,
            ..NetConfig::with_classes(7)
        }
        .validate()
        .is_err());
        let cfg = tiny_cfg();
        let params = NetworkParams::init(cfg, 1).unwrap();
        let wrong = vec![Grid::zeros(4, 4)];
        assert!(params.forward(&wrong).is_err());
    }
}
