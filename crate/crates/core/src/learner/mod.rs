//! Joint optimization of the aperture code and the blur-size classifier.
//!
//! The real-valued code `W` passes through a steepening sigmoid, is
//! resampled to each label's kernel size, multiplied against the patch
//! spectrum (cyclic convolution in the frequency domain), turned into a
//! log-magnitude feature, and classified; the cross-entropy error
//! back-propagates through the entire chain to both the network weights and
//! `W` itself.

pub mod checkpoint;
mod net;

pub use checkpoint::Checkpoint;
pub use net::{NetConfig, NetworkParams};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft2;
use crate::fuse::fuse_patch_votes;
use crate::grid::Grid;
use crate::optics::{resample_linear, resample_weights, ApertureCode, CameraConfig};
use crate::sim::{extract_patches, spectral_feature, BlurSizeMap};

use self::net::BatchPlanes;

/// Unconstrained real-valued code, the object actually optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct RealCode {
    values: Grid,
}

impl RealCode {
    pub fn new(values: Grid) -> Result<Self> {
        if values.h() != values.w() || values.h() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "real code must be square with odd side, got {}x{}",
                values.h(),
                values.w()
            )));
        }
        if !values.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("real code has non-finite entries".into()));
        }
        Ok(RealCode { values })
    }

    /// Seeded i.i.d. uniform entries in [-0.5, 0.5].
    pub fn random(side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        RealCode {
            values: Grid::from_fn(side, side, |_, _| rng.random_range(-0.5..0.5)),
        }
    }

    pub fn side(&self) -> usize {
        self.values.h()
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }
}

/// Annealing slope for the code sigmoid: `alpha(t) = base + t / slope_inv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub base: f64,
    pub slope_inv: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            base: 2.5,
            slope_inv: 3000.0,
        }
    }
}

impl AnnealSchedule {
    pub fn alpha(&self, iteration: u64) -> f64 {
        self.base + iteration as f64 / self.slope_inv
    }
}

/// Elementwise `sigmoid(alpha * W)`: a continuous code in (0, 1).
pub fn soft_binarize(w: &RealCode, alpha: f64) -> Result<ApertureCode> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(ApertureCode::from_grid_unchecked(sigmoid_grid(w.values(), alpha)))
}

fn sigmoid_grid(w: &Grid, alpha: f64) -> Grid {
    w.map(|v| 1.0 / (1.0 + (-alpha * v).exp()))
}

/// Thresholds a continuous code to {0, 1}; all-zero results are refused.
pub fn hard_binarize(code: &ApertureCode, threshold: f64) -> Result<ApertureCode> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let values = code
        .values()
        .map(|v| if v >= threshold { 1.0 } else { 0.0 });
    if !values.as_slice().iter().any(|&v| v > 0.0) {
        return Err(Error::DegenerateCode(format!(
            "thresholding at {threshold} left no open cells"
        )));
    }
    ApertureCode::new(values)
}

/// Shape and smoothing knobs of the differentiable chain.
#[derive(Clone, Copy, Debug)]
pub struct ChainConfig {
    /// Patch side; must be even (the feature grid is fftshift-centered).
    pub patch: usize,
    /// Smoothing inside `sqrt(|z|^2 + delta)` so the magnitude is
    /// differentiable at spectral zeros.
    pub feature_delta: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            patch: 32,
            feature_delta: 1e-12,
        }
    }
}

/// Loss plus gradients for the code and every network tensor.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_w: Grid,
    pub grad_params: NetworkParams,
}

struct ScaleSlot {
    scale: usize,
    /// Total mass of the pre-normalization resampled code.
    mass: f64,
    kernel: Grid,
    transfer: Vec<Complex64>,
    power: Grid,
}

fn prepare_scales(
    code: &Grid,
    scales: impl Iterator<Item = usize>,
    p: usize,
    alpha: f64,
) -> Result<Vec<ScaleSlot>> {
    let mut out = Vec::new();
    for scale in scales {
        if scale == 0 || scale % 2 == 0 || scale > p {
            return Err(Error::InvalidArgument(format!(
                "label scale {scale} invalid for patch {p}"
            )));
        }
        let resampled = resample_linear(code, scale);
        let mass = resampled.sum();
        if !(mass > 1e-300) {
            return Err(Error::TrainingStep(format!(
                "degenerate kernel at scale {scale}: resampled mass {mass:.3e}, \
                 alpha {alpha}, code range [{:.3e}, {:.3e}]",
                code.min(),
                code.max()
            )));
        }
        let kernel = resampled.scale(1.0 / mass);
        let transfer = fft2::kernel_transfer(&kernel, p);
        let power = Grid::from_vec(p, p, transfer.iter().map(|z| z.norm_sqr()).collect());
        out.push(ScaleSlot {
            scale,
            mass,
            kernel,
            transfer,
            power,
        });
    }
    Ok(out)
}

/// Per-sample spectral chain: `ln(1 + sqrt(|X|^2 |C_s|^2 + delta))`,
/// fftshift-centered. Returns the patch power spectrum and the smoothed
/// magnitude alongside the feature (both needed by the backward pass).
fn chain_features(
    batch: &[(Grid, usize)],
    slots: &[ScaleSlot],
    p: usize,
    delta: f64,
) -> Vec<(Grid, Grid, Grid)> {
    batch
        .par_iter()
        .map(|(patch, scale)| {
            let power = &slots.iter().find(|s| s.scale == *scale).unwrap().power;
            let spec = fft2::dft2(patch);
            let x_power = Grid::from_vec(p, p, spec.iter().map(|z| z.norm_sqr()).collect());
            let mag = Grid::from_fn(p, p, |r, c| (x_power[(r, c)] * power[(r, c)] + delta).sqrt());
            let feature = fft2::fftshift(&mag.map(|m| (1.0 + m).ln()));
            (x_power, mag, feature)
        })
        .collect()
}

fn validate_batch(batch: &[(Grid, usize)], p: usize, classes: usize) -> Result<()> {
    for (i, (patch, scale)) in batch.iter().enumerate() {
        if patch.h() != p || patch.w() != p {
            return Err(Error::InvalidArgument(format!(
                "batch patch {i} is {}x{}, expected {p}x{p}",
                patch.h(),
                patch.w()
            )));
        }
        let class = (*scale - 1) / 2;
        if *scale % 2 == 0 || class >= classes {
            return Err(Error::InvalidArgument(format!(
                "label scale {scale} outside the {classes}-class set"
            )));
        }
    }
    Ok(())
}

fn distinct_scales(batch: &[(Grid, usize)]) -> Vec<usize> {
    let mut scales: Vec<usize> = batch.iter().map(|(_, s)| *s).collect();
    scales.sort_unstable();
    scales.dedup();
    scales
}

/// Mean cross-entropy only; the cheap path for finite-difference probes
/// and validation scoring.
pub fn batch_loss(
    batch: &[(Grid, usize)],
    w: &RealCode,
    alpha: f64,
    params: &NetworkParams,
    chain: &ChainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let p = chain.patch;
    let classes = params.cfg.classes;
    validate_batch(batch, p, classes)?;
    let soft = sigmoid_grid(w.values(), alpha);
    let slots = prepare_scales(&soft, distinct_scales(batch).into_iter(), p, alpha)?;
    let features: Vec<Grid> = chain_features(batch, &slots, p, chain.feature_delta)
        .into_iter()
        .map(|(_, _, f)| f)
        .collect();
    let logp = params.forward(&features)?;
    let loss = batch
        .iter()
        .zip(&logp)
        .map(|((_, scale), row)| -row[(scale - 1) / 2])
        .sum::<f64>()
        / batch.len() as f64;
    Ok(loss)
}

/// Mean cross-entropy of a batch pushed through the full chain, with
/// analytic gradients for `W` and all network parameters.
///
/// Training-time blur is cyclic, so only spectral magnitudes are needed:
/// the feature is `ln(1 + sqrt(|X|^2 |C_s|^2 + delta))`, fftshift-centered.
pub fn loss_and_gradients(
    batch: &[(Grid, usize)],
    w: &RealCode,
    alpha: f64,
    params: &NetworkParams,
    chain: &ChainConfig,
) -> Result<LossGrads> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let p = chain.patch;
    if p % 2 != 0 || p != params.cfg.input_side {
        return Err(Error::InvalidConfiguration(format!(
            "patch {p} must be even and match the network input side {}",
            params.cfg.input_side
        )));
    }
    let classes = params.cfg.classes;
    validate_batch(batch, p, classes)?;
    let soft = sigmoid_grid(w.values(), alpha);
    let slots = prepare_scales(&soft, distinct_scales(batch).into_iter(), p, alpha)?;
    let slot_of = |scale: usize| slots.iter().position(|s| s.scale == scale).unwrap();

    let per_sample = chain_features(batch, &slots, p, chain.feature_delta);

    let features: Vec<Grid> = per_sample.iter().map(|(_, _, f)| f.clone()).collect();
    let input = BatchPlanes::from_features(&features, p)?;
    let (cache, logp) = params.forward_cached(&input);

    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; batch.len() * classes];
    for (i, (_, scale)) in batch.iter().enumerate() {
        let class = (scale - 1) / 2;
        let row = &logp[i * classes..(i + 1) * classes];
        loss -= row[class] / b;
        for k in 0..classes {
            dlogits[i * classes + k] = (row[k].exp() - if k == class { 1.0 } else { 0.0 }) / b;
        }
    }

    let (grad_params, dinput) = params.backward(&cache, &dlogits);

    // feature gradient -> per-scale transfer-power gradient, in batch order
    let mut grad_power: Vec<Grid> = slots.iter().map(|_| Grid::zeros(p, p)).collect();
    let dplane = dinput.plane(0);
    for (i, (patch_scale, sample)) in batch.iter().zip(&per_sample).enumerate() {
        let (x_power, mag, _) = sample;
        let slot = slot_of(patch_scale.1);
        let dfeat_shifted = Grid::from_vec(p, p, dplane[i * p * p..(i + 1) * p * p].to_vec());
        let dfeat = fft2::fftshift(&dfeat_shifted);
        let gp = &mut grad_power[slot];
        for r in 0..p {
            for c in 0..p {
                let m = mag[(r, c)];
                // d/dq ln(1 + sqrt(q + delta)) = 1 / ((1 + m) 2 m)
                let dq = dfeat[(r, c)] / ((1.0 + m) * 2.0 * m);
                gp[(r, c)] += dq * x_power[(r, c)];
            }
        }
    }

    // transfer-power gradient -> kernel -> normalization -> resample -> W
    let n = w.side();
    let half = |s: usize| (s as isize - 1) / 2;
    let mut grad_code = Grid::zeros(n, n);
    for (slot, gpow) in slots.iter().zip(&grad_power) {
        let s = slot.scale;
        // dT/dK via one forward DFT of gT .* conj(transfer)
        let mut h: Vec<Complex64> = slot
            .transfer
            .iter()
            .zip(gpow.as_slice())
            .map(|(t, &g)| t.conj() * g)
            .collect();
        fft2::fft2_in_place(&mut h, p, p, rustfft::FftDirection::Forward);
        let mut grad_kernel = Grid::zeros(s, s);
        for a in 0..s {
            for bcol in 0..s {
                let r = (a as isize - half(s)).rem_euclid(p as isize) as usize;
                let c = (bcol as isize - half(s)).rem_euclid(p as isize) as usize;
                grad_kernel[(a, bcol)] = 2.0 * h[r * p + c].re;
            }
        }
        // normalization backward: K = R / mass
        let inner: f64 = grad_kernel
            .as_slice()
            .iter()
            .zip(slot.kernel.as_slice())
            .map(|(g, k)| g * k)
            .sum();
        let grad_resampled = Grid::from_vec(
            s,
            s,
            grad_kernel
                .as_slice()
                .iter()
                .map(|g| (g - inner) / slot.mass)
                .collect(),
        );
        // adjoint of the separable area resampling: A^T G A
        let weights = resample_weights(n, s);
        for u in 0..s {
            for v in 0..s {
                let g = grad_resampled[(u, v)];
                if g == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let wui = weights[(u, i)];
                    if wui == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        grad_code[(i, j)] += g * wui * weights[(v, j)];
                    }
                }
            }
        }
    }

    // sigmoid backward
    let grad_w = Grid::from_fn(n, n, |r, c| {
        let cval = soft[(r, c)];
        grad_code[(r, c)] * alpha * cval * (1.0 - cval)
    });

    Ok(LossGrads {
        loss,
        grad_w,
        grad_params,
    })
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Source of (all-focus patch, blur-size label) pairs.
pub trait PatchSource: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Grid, usize);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub binarize_threshold: f64,
    /// Multiplier on the code's learning rate relative to the network's.
    pub code_lr_scale: f64,
    pub code_side: usize,
    /// Optimize the code within the 180-degree point-symmetric subspace.
    /// A centrosymmetric mask has a real-valued transfer function whose
    /// sign changes are exact spectral nulls; asymmetric masks only reach
    /// shallow minima, which weakens the scale cue the classifier needs.
    pub symmetric_code: bool,
    /// Classifier-only steps on the thresholded binary code after the
    /// joint phase. The network trains against the annealed continuous
    /// code, whose scaled spectra differ from the binary mask's enough to
    /// misclassify some scales; this calibrates it to the deployed code.
    pub finetune_iterations: u64,
    pub log_every: u64,
    pub eval_every: u64,
    pub val_patches: usize,
    pub conv_channels: [usize; 3],
    pub fc_widths: [usize; 4],
    pub patch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            iterations: 10_000,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            binarize_threshold: 0.5,
            // the classifier saturates long before 10k iterations on clean
            // synthetic features; a faster code step lets the mask organize
            // while the loss still carries signal
            code_lr_scale: 3.0,
            code_side: 11,
            symmetric_code: true,
            finetune_iterations: 0,
            log_every: 100,
            eval_every: 500,
            val_patches: 512,
            conv_channels: [16, 32, 32],
            fc_widths: [512, 256, 128, 64],
            patch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfiguration("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.code_side % 2 == 0 {
            return Err(Error::InvalidConfiguration("code side must be odd".into()));
        }
        Ok(())
    }

    fn net_config(&self, classes: usize) -> NetConfig {
        NetConfig {
            input_side: self.patch,
            conv_channels: self.conv_channels,
            fc_widths: self.fc_widths,
            classes,
        }
    }
}

/// Adam/SGD state; `step` counts applied updates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m_w: Grid,
    pub v_w: Grid,
    pub m_p: NetworkParams,
    pub v_p: NetworkParams,
}

impl OptState {
    fn new(w: &Grid, params: &NetworkParams) -> Self {
        OptState {
            step: 0,
            m_w: Grid::zeros(w.h(), w.w()),
            v_w: Grid::zeros(w.h(), w.w()),
            m_p: params.zeros_like(),
            v_p: params.zeros_like(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn adam_slice(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..param.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

fn sgd_slice(param: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}

/// Mutable training state; checkpoints capture exactly this plus the seed.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Next iteration index to execute.
    pub iteration: u64,
    pub w: Grid,
    pub params: NetworkParams,
    pub opt: OptState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub alpha: f64,
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub header: Vec<String>,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str("iteration,alpha,loss,val_accuracy\n");
        out.push_str(&self.rows_csv());
        out
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let val = row
                .val_accuracy
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{:.12e},{val}\n",
                row.iteration, row.alpha, row.loss
            ));
        }
        out
    }
}

/// Everything a finished (or checkpointed) run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Thresholded binary code.
    pub code: ApertureCode,
    /// Continuous code at the final alpha, before thresholding.
    pub soft_code: ApertureCode,
    pub params: NetworkParams,
    pub w: RealCode,
    pub log: TrainLog,
    pub state: TrainState,
}

/// Projects a grid onto its 180-degree point-symmetric part.
fn symmetrize(grid: &Grid) -> Grid {
    let n = grid.h();
    Grid::from_fn(n, n, |r, c| 0.5 * (grid[(r, c)] + grid[(n - 1 - r, n - 1 - c)]))
}

fn draw_batch(
    source: &dyn PatchSource,
    count: usize,
    seed: u64,
    stream: u64,
) -> Vec<(Grid, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| source.draw(&mut rng)).collect()
}

fn batch_accuracy(
    batch: &[(Grid, usize)],
    w: &RealCode,
    alpha: f64,
    params: &NetworkParams,
    chain: &ChainConfig,
) -> Result<f64> {
    let p = chain.patch;
    let soft = sigmoid_grid(w.values(), alpha);
    let slots = prepare_scales(&soft, distinct_scales(batch).into_iter(), p, alpha)?;
    let features: Vec<Grid> = chain_features(batch, &slots, p, chain.feature_delta)
        .into_iter()
        .map(|(_, _, f)| f)
        .collect();
    let logp = params.forward(&features)?;
    let hits = batch
        .iter()
        .zip(&logp)
        .filter(|((_, scale), row)| {
            let mut best = 0usize;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best == (*scale - 1) / 2
        })
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

/// Runs `cfg.iterations` optimizer steps from scratch.
pub fn train(
    source: &dyn PatchSource,
    val_source: Option<&dyn PatchSource>,
    cam: &CameraConfig,
    cfg: &TrainConfig,
    schedule: &AnnealSchedule,
) -> Result<TrainOutcome> {
    train_from(None, source, val_source, cam, cfg, schedule)
}

/// Runs (or resumes) training and thresholds the final code. With
/// `Some(state)` the loop continues at `state.iteration`, reproducing
/// exactly what an uninterrupted run with the same seed would have done.
/// A final code that thresholds to all-zero is a training failure.
pub fn train_from(
    state: Option<TrainState>,
    source: &dyn PatchSource,
    val_source: Option<&dyn PatchSource>,
    cam: &CameraConfig,
    cfg: &TrainConfig,
    schedule: &AnnealSchedule,
) -> Result<TrainOutcome> {
    let (state, mut log) = run_iterations(state, source, val_source, cam, cfg, schedule)?;
    let final_alpha = schedule.alpha(state.iteration);
    let w = RealCode::new(state.w.clone())?;
    let soft_code = soft_binarize(&w, final_alpha)?;
    let code = hard_binarize(&soft_code, cfg.binarize_threshold)?;
    let params = if cfg.finetune_iterations > 0 {
        let (params, rows) = finetune_classifier(
            state.params.clone(),
            &code,
            source,
            val_source,
            cam,
            cfg,
            schedule,
        )?;
        log.rows.extend(rows);
        params
    } else {
        state.params.clone()
    };
    Ok(TrainOutcome {
        code,
        soft_code,
        params,
        w,
        log,
        state,
    })
}

/// Classifier-only calibration against a fixed binary code.
///
/// The binary mask is pushed through the ordinary chain as a saturated
/// code (`W = ±1000` makes the sigmoid exactly 0/1, and its gradient
/// exactly zero, so only the network moves). Rows are renumbered to
/// continue the joint-phase log.
pub fn finetune_classifier(
    params: NetworkParams,
    code: &ApertureCode,
    source: &dyn PatchSource,
    val_source: Option<&dyn PatchSource>,
    cam: &CameraConfig,
    cfg: &TrainConfig,
    schedule: &AnnealSchedule,
) -> Result<(NetworkParams, Vec<LogRow>)> {
    let n = code.side();
    let w_saturated = Grid::from_fn(n, n, |r, c| (code.values()[(r, c)] * 2.0 - 1.0) * 1000.0);
    let opt = OptState::new(&w_saturated, &params);
    let start = TrainState {
        iteration: 0,
        w: w_saturated,
        params,
        opt,
    };
    let ft_cfg = TrainConfig {
        iterations: cfg.finetune_iterations,
        // a fresh stream family so finetune batches never replay joint ones
        seed: cfg.seed ^ 0xf1e2_d3c4_b5a6_9788,
        symmetric_code: false,
        code_side: n,
        finetune_iterations: 0,
        ..cfg.clone()
    };
    let flat = AnnealSchedule {
        base: 1.0,
        slope_inv: f64::INFINITY,
    };
    let (state, log) = run_iterations(Some(start), source, val_source, cam, &ft_cfg, &flat)?;
    let final_alpha = schedule.alpha(cfg.iterations);
    let rows = log
        .rows
        .into_iter()
        .map(|row| LogRow {
            iteration: row.iteration + cfg.iterations,
            alpha: final_alpha,
            ..row
        })
        .collect();
    Ok((state.params, rows))
}

/// The optimizer loop alone: returns the final state and log without
/// thresholding, so callers can keep both even when the code degenerates.
pub fn run_iterations(
    state: Option<TrainState>,
    source: &dyn PatchSource,
    val_source: Option<&dyn PatchSource>,
    cam: &CameraConfig,
    cfg: &TrainConfig,
    schedule: &AnnealSchedule,
) -> Result<(TrainState, TrainLog)> {
    cfg.validate()?;
    cam.validate()?;
    let classes = cam.class_count();
    let chain = ChainConfig {
        patch: cfg.patch,
        feature_delta: 1e-12,
    };
    let mut state = match state {
        Some(s) => s,
        None => {
            let params = NetworkParams::init(cfg.net_config(classes), cfg.seed)?;
            let mut w = RealCode::random(cfg.code_side, cfg.seed).values().clone();
            if cfg.symmetric_code {
                w = symmetrize(&w);
            }
            let opt = OptState::new(&w, &params);
            TrainState {
                iteration: 0,
                w,
                params,
                opt,
            }
        }
    };

    // fixed validation batch, drawn from its own stream
    let val_batch: Option<Vec<(Grid, usize)>> = val_source
        .map(|vs| draw_batch(vs, cfg.val_patches, cfg.seed, u64::MAX - 1));

    let mut log = TrainLog {
        header: vec![
            format!(
                "camera f={} mm mu={} um F/{} focus={} m k={}",
                cam.focal_length_mm,
                cam.pixel_pitch_um,
                cam.f_number,
                cam.focus_distance_m,
                cam.max_kernel_size
            ),
            format!(
                "net conv={:?} fc={:?} classes={classes} patch={}",
                cfg.conv_channels, cfg.fc_widths, cfg.patch
            ),
            format!(
                "train batch={} iters={} lr={} code_lr_scale={} optimizer={:?} symmetric_code={} seed={}",
                cfg.batch_size,
                cfg.iterations,
                cfg.learning_rate,
                cfg.code_lr_scale,
                cfg.optimizer,
                cfg.symmetric_code,
                cfg.seed
            ),
            format!(
                "anneal alpha = {} + t/{}",
                schedule.base, schedule.slope_inv
            ),
        ],
        rows: Vec::new(),
    };

    let start_iteration = state.iteration;
    while state.iteration < cfg.iterations {
        let t = state.iteration;
        let alpha = schedule.alpha(t);
        let batch = draw_batch(source, cfg.batch_size, cfg.seed, 1 + t);
        let w_code = RealCode::new(state.w.clone())?;
        let mut grads = loss_and_gradients(&batch, &w_code, alpha, &state.params, &chain)?;
        if cfg.symmetric_code {
            grads.grad_w = symmetrize(&grads.grad_w);
        }

        state.opt.step += 1;
        let step = state.opt.step;
        let lr = cfg.learning_rate;
        match cfg.optimizer {
            OptimizerKind::Adam => {
                adam_slice(
                    state.w.as_mut_slice(),
                    grads.grad_w.as_slice(),
                    state.opt.m_w.as_mut_slice(),
                    state.opt.v_w.as_mut_slice(),
                    lr * cfg.code_lr_scale,
                    step,
                );
                let mut tensors: Vec<(&mut [f64], &[f64])> = Vec::new();
                collect_zip(&mut state.params, &grads.grad_params, &mut tensors);
                let mut m_iter = tensor_slices_mut(&mut state.opt.m_p);
                let mut v_iter = tensor_slices_mut(&mut state.opt.v_p);
                for ((param, grad), (m, v)) in
                    tensors.into_iter().zip(m_iter.iter_mut().zip(v_iter.iter_mut()))
                {
                    adam_slice(param, grad, m, v, lr, step);
                }
            }
            OptimizerKind::Sgd => {
                sgd_slice(
                    state.w.as_mut_slice(),
                    grads.grad_w.as_slice(),
                    lr * cfg.code_lr_scale,
                );
                let mut tensors: Vec<(&mut [f64], &[f64])> = Vec::new();
                collect_zip(&mut state.params, &grads.grad_params, &mut tensors);
                for (param, grad) in tensors {
                    sgd_slice(param, grad, lr);
                }
            }
        }
        state.iteration += 1;

        // the first iteration of a fresh or resumed run is always logged,
        // so resumed logs visibly continue at the interruption point
        let due_log =
            t % cfg.log_every == 0 || t == start_iteration || state.iteration == cfg.iterations;
        let due_eval = t % cfg.eval_every == 0 || state.iteration == cfg.iterations;
        if due_log {
            let val_accuracy = match (&val_batch, due_eval) {
                (Some(vb), true) => Some(batch_accuracy(
                    vb,
                    &RealCode::new(state.w.clone())?,
                    alpha,
                    &state.params,
                    &chain,
                )?),
                _ => None,
            };
            log.rows.push(LogRow {
                iteration: t,
                alpha,
                loss: grads.loss,
                val_accuracy,
            });
        }
    }

    Ok((state, log))
}

fn collect_zip<'a>(
    params: &'a mut NetworkParams,
    grads: &'a NetworkParams,
    out: &mut Vec<(&'a mut [f64], &'a [f64])>,
) {
    for (p, g) in params.conv.iter_mut().zip(&grads.conv) {
        out.push((&mut p.weight, &g.weight));
        out.push((&mut p.bias, &g.bias));
    }
    for (p, g) in params.fc.iter_mut().zip(&grads.fc) {
        out.push((&mut p.weight, &g.weight));
        out.push((&mut p.bias, &g.bias));
    }
}

fn tensor_slices_mut(params: &mut NetworkParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for layer in params.conv.iter_mut() {
        out.push(&mut layer.weight);
        out.push(&mut layer.bias);
    }
    for layer in params.fc.iter_mut() {
        out.push(&mut layer.weight);
        out.push(&mut layer.bias);
    }
    out
}

/// Worst relative error of central finite differences against the analytic
/// gradient, over every code coordinate plus `param_samples` sampled
/// network coordinates. Returns `(worst, coordinates_checked)`.
///
/// The rectifier makes the loss piecewise smooth, so a probe interval that
/// straddles a breakpoint reports the average of two one-sided slopes no
/// matter how small `h` is relative to the mismatch; callers pin seeds
/// whose sampled neighborhood is breakpoint-free.
pub fn finite_difference_check(
    batch: &[(Grid, usize)],
    w: &RealCode,
    alpha: f64,
    params: &NetworkParams,
    chain: &ChainConfig,
    param_samples: usize,
    sample_seed: u64,
    h: f64,
) -> Result<(f64, usize)> {
    let grads = loss_and_gradients(batch, w, alpha, params, chain)?;
    let mut worst = 0.0f64;
    let mut checked = 0usize;

    for i in 0..w.values().len() {
        let mut plus = w.values().clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = w.values().clone();
        minus.as_mut_slice()[i] -= h;
        let lp = batch_loss(batch, &RealCode::new(plus)?, alpha, params, chain)?;
        let lm = batch_loss(batch, &RealCode::new(minus)?, alpha, params, chain)?;
        let fd = (lp - lm) / (2.0 * h);
        let analytic = grads.grad_w.as_slice()[i];
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }

    let mut tensor_sizes = Vec::new();
    params.for_each_tensor(|t| tensor_sizes.push(t.len()));
    let mut grad_tensors = Vec::new();
    grads
        .grad_params
        .for_each_tensor(|t| grad_tensors.push(t.to_vec()));
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    for _ in 0..param_samples {
        let tensor = rng.random_range(0..tensor_sizes.len());
        let offset = rng.random_range(0..tensor_sizes[tensor]);
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
        let lp = batch_loss(batch, w, alpha, &plus, chain)?;
        let lm = batch_loss(batch, w, alpha, &minus, chain)?;
        let fd = (lp - lm) / (2.0 * h);
        let analytic = grad_tensors[tensor][offset];
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok((worst, checked))
}

/// Classifies every stride-offset patch of a coded image and fuses the
/// per-patch predictions into a per-pixel map by majority vote.
pub fn estimate_depth_map_cnn(
    image: &Grid,
    params: &NetworkParams,
    stride: usize,
    patch: usize,
) -> Result<BlurSizeMap> {
    if image.h() < patch || image.w() < patch {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than patch {patch}",
            image.h(),
            image.w()
        )));
    }
    let patches = extract_patches(image, patch, stride);
    let features: Vec<Grid> = patches
        .par_iter()
        .map(|(window, _, _)| spectral_feature(window))
        .collect();
    let mut votes = Vec::with_capacity(patches.len());
    for (chunk, feats) in patches.chunks(256).zip(features.chunks(256)) {
        let logp = params.forward(feats)?;
        for ((_, r, c), row) in chunk.iter().zip(&logp) {
            let mut best = 0usize;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            votes.push((*r, *c, 2 * best + 1));
        }
    }
    fuse_patch_votes(image.h(), image.w(), patch, &votes, 1)
}
