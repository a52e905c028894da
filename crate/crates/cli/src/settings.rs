//! Resolved run configuration: defaults, then `key = value` config file,
//! then command-line flags, in that order of precedence.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use defocus_core::optics::CameraConfig;
use defocus_core::sim::Boundary;

#[derive(Clone, Debug)]
pub struct Settings {
    pub camera: CameraConfig,
    pub patch: usize,
    pub stride: usize,
    pub boundary: Boundary,
    pub noise_sigma: f64,
    pub nsr: f64,
    pub texture_floor: f64,
    pub prior_amplitude: f64,
    pub prior_eps: f64,
    pub prior_noise_sigma: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub code_lr_scale: f64,
    pub code_side: usize,
    pub symmetric_code: bool,
    pub finetune_iterations: u64,
    pub anneal_base: f64,
    pub anneal_slope_inv: f64,
    pub log_every: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub val_patches: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            camera: CameraConfig::default(),
            patch: 32,
            stride: 8,
            boundary: Boundary::Reflect,
            noise_sigma: 0.0,
            nsr: 1e-3,
            texture_floor: 0.01,
            prior_amplitude: 1.0,
            prior_eps: 1e-6,
            prior_noise_sigma: 0.01,
            iterations: 10_000,
            batch_size: 128,
            learning_rate: 1e-3,
            code_lr_scale: 3.0,
            code_side: 11,
            symmetric_code: true,
            finetune_iterations: 500,
            anneal_base: 2.5,
            anneal_slope_inv: 3000.0,
            log_every: 100,
            eval_every: 500,
            checkpoint_every: 1000,
            val_patches: 512,
            split_train: 0.6,
            split_val: 0.2,
            split_test: 0.2,
            seed: 0,
        }
    }
}

fn parse_boundary(value: &str) -> Result<Boundary> {
    match value {
        "reflect" => Ok(Boundary::Reflect),
        "cyclic" => Ok(Boundary::Cyclic),
        other => bail!("boundary must be 'reflect' or 'cyclic', got '{other}'"),
    }
}

pub fn boundary_name(boundary: Boundary) -> &'static str {
    match boundary {
        Boundary::Reflect => "reflect",
        Boundary::Cyclic => "cyclic",
    }
}

impl Settings {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ctx = || format!("setting '{key}' to '{value}'");
        match key {
            "camera.focal_length_mm" => self.camera.focal_length_mm = value.parse().with_context(ctx)?,
            "camera.pixel_pitch_um" => self.camera.pixel_pitch_um = value.parse().with_context(ctx)?,
            "camera.f_number" => self.camera.f_number = value.parse().with_context(ctx)?,
            "camera.focus_distance_m" => self.camera.focus_distance_m = value.parse().with_context(ctx)?,
            "camera.max_kernel_size" => self.camera.max_kernel_size = value.parse().with_context(ctx)?,
            "sim.patch" => self.patch = value.parse().with_context(ctx)?,
            "sim.stride" => self.stride = value.parse().with_context(ctx)?,
            "sim.boundary" => self.boundary = parse_boundary(value)?,
            "sim.noise_sigma" => self.noise_sigma = value.parse().with_context(ctx)?,
            "wiener.nsr" => self.nsr = value.parse().with_context(ctx)?,
            "wiener.texture_floor" => self.texture_floor = value.parse().with_context(ctx)?,
            "prior.amplitude" => self.prior_amplitude = value.parse().with_context(ctx)?,
            "prior.eps" => self.prior_eps = value.parse().with_context(ctx)?,
            "prior.noise_sigma" => self.prior_noise_sigma = value.parse().with_context(ctx)?,
            "train.iterations" => self.iterations = value.parse().with_context(ctx)?,
            "train.batch_size" => self.batch_size = value.parse().with_context(ctx)?,
            "train.learning_rate" => self.learning_rate = value.parse().with_context(ctx)?,
            "train.code_lr_scale" => self.code_lr_scale = value.parse().with_context(ctx)?,
            "train.code_side" => self.code_side = value.parse().with_context(ctx)?,
            "train.symmetric_code" => self.symmetric_code = value.parse().with_context(ctx)?,
            "train.finetune_iterations" => self.finetune_iterations = value.parse().with_context(ctx)?,
            "train.anneal_base" => self.anneal_base = value.parse().with_context(ctx)?,
            "train.anneal_slope_inv" => self.anneal_slope_inv = value.parse().with_context(ctx)?,
            "train.log_every" => self.log_every = value.parse().with_context(ctx)?,
            "train.eval_every" => self.eval_every = value.parse().with_context(ctx)?,
            "train.checkpoint_every" => self.checkpoint_every = value.parse().with_context(ctx)?,
            "train.val_patches" => self.val_patches = value.parse().with_context(ctx)?,
            "split.train" => self.split_train = value.parse().with_context(ctx)?,
            "split.val" => self.split_val = value.parse().with_context(ctx)?,
            "split.test" => self.split_test = value.parse().with_context(ctx)?,
            "seed" => self.seed = value.parse().with_context(ctx)?,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    /// Loads `key = value` lines; '#' starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Canonical text form, reused for the reproducibility sidecar.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "camera.focal_length_mm = {}", self.camera.focal_length_mm);
        let _ = writeln!(out, "camera.pixel_pitch_um = {}", self.camera.pixel_pitch_um);
        let _ = writeln!(out, "camera.f_number = {}", self.camera.f_number);
        let _ = writeln!(out, "camera.focus_distance_m = {}", self.camera.focus_distance_m);
        let _ = writeln!(out, "camera.max_kernel_size = {}", self.camera.max_kernel_size);
        let _ = writeln!(out, "sim.patch = {}", self.patch);
        let _ = writeln!(out, "sim.stride = {}", self.stride);
        let _ = writeln!(out, "sim.boundary = {}", boundary_name(self.boundary));
        let _ = writeln!(out, "sim.noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(out, "wiener.nsr = {}", self.nsr);
        let _ = writeln!(out, "wiener.texture_floor = {}", self.texture_floor);
        let _ = writeln!(out, "prior.amplitude = {}", self.prior_amplitude);
        let _ = writeln!(out, "prior.eps = {}", self.prior_eps);
        let _ = writeln!(out, "prior.noise_sigma = {}", self.prior_noise_sigma);
        let _ = writeln!(out, "train.iterations = {}", self.iterations);
        let _ = writeln!(out, "train.batch_size = {}", self.batch_size);
        let _ = writeln!(out, "train.learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "train.code_lr_scale = {}", self.code_lr_scale);
        let _ = writeln!(out, "train.code_side = {}", self.code_side);
        let _ = writeln!(out, "train.symmetric_code = {}", self.symmetric_code);
        let _ = writeln!(out, "train.finetune_iterations = {}", self.finetune_iterations);
        let _ = writeln!(out, "train.anneal_base = {}", self.anneal_base);
        let _ = writeln!(out, "train.anneal_slope_inv = {}", self.anneal_slope_inv);
        let _ = writeln!(out, "train.log_every = {}", self.log_every);
        let _ = writeln!(out, "train.eval_every = {}", self.eval_every);
        let _ = writeln!(out, "train.checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(out, "train.val_patches = {}", self.val_patches);
        let _ = writeln!(out, "split.train = {}", self.split_train);
        let _ = writeln!(out, "split.val = {}", self.split_val);
        let _ = writeln!(out, "split.test = {}", self.split_test);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}
