//! Thin-lens camera model: metric depth to discrete blur-kernel size, and
//! rescaling of the base aperture code to any kernel size.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Thin-lens parameters mapping metric depth to blur-kernel size in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraConfig {
    /// Focal length in millimeters.
    pub focal_length_mm: f64,
    /// Sensor pixel pitch in micrometers.
    pub pixel_pitch_um: f64,
    /// F-stop number (dimensionless).
    pub f_number: f64,
    /// Distance of the in-focus plane in meters.
    pub focus_distance_m: f64,
    /// Largest supported odd kernel size in pixels.
    pub max_kernel_size: usize,
}

impl CameraConfig {
    pub fn new(
        focal_length_mm: f64,
        pixel_pitch_um: f64,
        f_number: f64,
        focus_distance_m: f64,
        max_kernel_size: usize,
    ) -> Result<Self> {
        let cfg = CameraConfig {
            focal_length_mm,
            pixel_pitch_um,
            f_number,
            focus_distance_m,
            max_kernel_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length_mm > 0.0) || !(self.pixel_pitch_um > 0.0) || !(self.f_number > 0.0)
        {
            return Err(Error::InvalidConfiguration(format!(
                "focal length, pixel pitch and f-number must be positive \
                 (got f={} mm, mu={} um, F/{})",
                self.focal_length_mm, self.pixel_pitch_um, self.f_number
            )));
        }
        if !(self.focus_distance_m > self.focal_length_m()) {
            return Err(Error::InvalidConfiguration(format!(
                "focus distance {} m must exceed focal length {} m",
                self.focus_distance_m,
                self.focal_length_m()
            )));
        }
        if self.max_kernel_size == 0 || self.max_kernel_size % 2 == 0 {
            return Err(Error::InvalidConfiguration(format!(
                "max kernel size must be odd and >= 1, got {}",
                self.max_kernel_size
            )));
        }
        Ok(())
    }

    pub fn focal_length_m(&self) -> f64 {
        self.focal_length_mm * 1e-3
    }

    pub fn pixel_pitch_m(&self) -> f64 {
        self.pixel_pitch_um * 1e-6
    }

    /// Aperture diameter in meters, `A = f / F#`.
    pub fn aperture_diameter_m(&self) -> f64 {
        self.focal_length_m() / self.f_number
    }

    /// Candidate kernel sizes `{1, 3, ..., max_kernel_size}`.
    pub fn scales(&self) -> Vec<usize> {
        (1..=self.max_kernel_size).step_by(2).collect()
    }

    /// Number of distinct kernel-size classes, `(k + 1) / 2`.
    pub fn class_count(&self) -> usize {
        (self.max_kernel_size + 1) / 2
    }
}

impl Default for CameraConfig {
    /// f = 25 mm, pixel pitch 8 um, F/1.4, focused at 1 m, kernels up to 13 px.
    fn default() -> Self {
        CameraConfig {
            focal_length_mm: 25.0,
            pixel_pitch_um: 8.0,
            f_number: 1.4,
            focus_distance_m: 1.0,
            max_kernel_size: 13,
        }
    }
}

/// Kernel size for a scene point at `depth_m` meters.
///
/// The image-side distances are `v = f d / (d - f)` for the point and
/// `v_f = f d_f / (d_f - f)` for the focal plane; the blur disc diameter on
/// the sensor is `A |v_f - v| / v`. Half of that, in pixel-pitch units and
/// rounded to the nearest integer (ties away from zero), gives the kernel
/// radius; the returned size `2 r + 1` is clamped to `[1, max_kernel_size]`.
pub fn depth_to_blur_size(depth_m: f64, cam: &CameraConfig) -> Result<usize> {
    cam.validate()?;
    let f = cam.focal_length_m();
    if !(depth_m > f) {
        return Err(Error::InvalidConfiguration(format!(
            "depth {depth_m} m must exceed focal length {f} m"
        )));
    }
    let aperture = cam.aperture_diameter_m();
    let v_focus = f * cam.focus_distance_m / (cam.focus_distance_m - f);
    let v = f * depth_m / (depth_m - f);
    let blur_diameter = aperture * (v_focus - v).abs() / v;
    let radius_px = (blur_diameter / 2.0) / cam.pixel_pitch_m();
    let size = 2 * radius_px.round() as usize + 1;
    Ok(size.min(cam.max_kernel_size))
}

/// N×N aperture transmission pattern with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ApertureCode {
    values: Grid,
}

impl ApertureCode {
    pub fn new(values: Grid) -> Result<Self> {
        let n = values.h();
        if n == 0 || n % 2 == 0 || values.w() != n {
            return Err(Error::InvalidArgument(format!(
                "aperture code must be square with odd side, got {}x{}",
                values.h(),
                values.w()
            )));
        }
        if values.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "aperture code values must lie in [0, 1]".into(),
            ));
        }
        if !values.as_slice().iter().any(|&v| v > 0.0) {
            return Err(Error::DegenerateCode(
                "aperture code is fully opaque".into(),
            ));
        }
        Ok(ApertureCode { values })
    }

    /// Bypasses validation; reserved for callers that construct transient
    /// grids already known to be in range.
    pub(crate) fn from_grid_unchecked(values: Grid) -> Self {
        ApertureCode { values }
    }

    /// Fully open (all-ones) aperture.
    pub fn open(side: usize) -> Self {
        assert!(side % 2 == 1, "side must be odd");
        ApertureCode {
            values: Grid::filled(side, side, 1.0),
        }
    }

    /// Seeded random binary code, symmetric under 180-degree rotation.
    pub fn random_symmetric(side: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        assert!(side % 2 == 1, "side must be odd");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Grid::zeros(side, side);
        for r in 0..side {
            for c in 0..side {
                let (mr, mc) = (side - 1 - r, side - 1 - c);
                if (r, c) <= (mr, mc) {
                    let bit = if rng.random_range(0..2u8) == 1 { 1.0 } else { 0.0 };
                    values[(r, c)] = bit;
                    values[(mr, mc)] = bit;
                }
            }
        }
        // a fully opaque draw is invalid; open the center
        if !values.as_slice().iter().any(|&v| v > 0.0) {
            values[(side / 2, side / 2)] = 1.0;
        }
        ApertureCode { values }
    }

    /// Parses rows of '0'/'1' characters, e.g. `"101\n010\n101"`.
    pub fn parse_pattern(pattern: &str) -> Result<Self> {
        let rows: Vec<&str> = pattern
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let n = rows.len();
        let mut values = Grid::zeros(n, n.max(1));
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "pattern row {r} has length {}, expected {n}",
                    row.len()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                values[(r, c)] = match ch {
                    '0' => 0.0,
                    '1' => 1.0,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "pattern contains '{ch}', expected only 0/1"
                        )))
                    }
                };
            }
        }
        ApertureCode::new(values)
    }

    pub fn side(&self) -> usize {
        self.values.h()
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn is_binary(&self) -> bool {
        self.values
            .as_slice()
            .iter()
            .all(|&v| v == 0.0 || v == 1.0)
    }

    /// Fraction of fully open cells (for binary codes, the open area).
    pub fn mean_transmission(&self) -> f64 {
        self.values.mean()
    }
}

/// Aperture code resampled to size `s` and normalized to unit sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledKernel {
    values: Grid,
}

impl ScaledKernel {
    pub fn size(&self) -> usize {
        self.values.h()
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    /// Wraps a grid that is already odd-sided, nonnegative and unit-sum.
    pub fn from_grid(values: Grid) -> Result<Self> {
        let s = values.h();
        if s == 0 || s % 2 == 0 || values.w() != s {
            return Err(Error::InvalidArgument(format!(
                "kernel must be square with odd side, got {}x{}",
                values.h(),
                values.w()
            )));
        }
        if values.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("kernel has negative entries".into()));
        }
        if (values.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "kernel sum {} is not 1",
                values.sum()
            )));
        }
        Ok(ScaledKernel { values })
    }

    /// The 1×1 identity kernel.
    pub fn delta() -> Self {
        ScaledKernel {
            values: Grid::from_vec(1, 1, vec![1.0]),
        }
    }
}

/// 1D area-overlap weights taking `n` source cells to `s` target cells.
///
/// Row `u` holds the fraction of target cell `u` covered by each source
/// cell; rows sum to 1. The induced 2D resampling is the separable product
/// and is linear in the source values.
pub(crate) fn resample_weights(n: usize, s: usize) -> Grid {
    let mut weights = Grid::zeros(s, n);
    for u in 0..s {
        let lo = u as f64 / s as f64;
        let hi = (u + 1) as f64 / s as f64;
        for i in 0..n {
            let src_lo = i as f64 / n as f64;
            let src_hi = (i + 1) as f64 / n as f64;
            let overlap = (hi.min(src_hi) - lo.max(src_lo)).max(0.0);
            weights[(u, i)] = overlap * s as f64;
        }
    }
    weights
}

/// Applies the separable area resampling `W · C · W^T` without normalizing.
pub(crate) fn resample_linear(code_values: &Grid, s: usize) -> Grid {
    let n = code_values.h();
    let weights = resample_weights(n, s);
    // tmp = W · C  (s×n)
    let mut tmp = Grid::zeros(s, n);
    for u in 0..s {
        for i in 0..n {
            let wui = weights[(u, i)];
            if wui == 0.0 {
                continue;
            }
            for j in 0..n {
                tmp[(u, j)] += wui * code_values[(i, j)];
            }
        }
    }
    // out = tmp · W^T  (s×s)
    let mut out = Grid::zeros(s, s);
    for u in 0..s {
        for v in 0..s {
            let mut acc = 0.0;
            for j in 0..n {
                acc += tmp[(u, j)] * weights[(v, j)];
            }
            out[(u, v)] = acc;
        }
    }
    out
}

/// Resamples the code to `s`×`s` by area-weighted overlap and normalizes to
/// unit sum. The pre-normalization step is linear in the code entries.
pub fn scale_code(code: &ApertureCode, s: usize) -> Result<ScaledKernel> {
    if s == 0 || s % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd and >= 1, got {s}"
        )));
    }
    let resampled = resample_linear(code.values(), s);
    let total = resampled.sum();
    if !(total > 1e-300) {
        return Err(Error::DegenerateKernel(
            "resampled code has zero total transmission".into(),
        ));
    }
    Ok(ScaledKernel {
        values: resampled.scale(1.0 / total),
    })
}
