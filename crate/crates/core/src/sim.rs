//! Coded-aperture image formation: patchwise blur, full-image simulation
//! from an all-focus image plus blur-size map, patch extraction, and
//! log-magnitude FFT features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fft2;
use crate::grid::Grid;
use crate::optics::{scale_code, ApertureCode, CameraConfig, ScaledKernel};

/// Boundary handling for same-size convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Mirror the image at its borders (edge pixels duplicated).
    Reflect,
    /// Wrap around, making the convolution exact in the DFT domain.
    Cyclic,
}

/// Per-pixel odd kernel size; the prediction target standing in for depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlurSizeMap {
    h: usize,
    w: usize,
    sizes: Vec<u8>,
}

impl BlurSizeMap {
    pub fn new(h: usize, w: usize, sizes: Vec<u8>) -> Result<Self> {
        if sizes.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "size map buffer length {} does not match {h}x{w}",
                sizes.len()
            )));
        }
        if let Some(bad) = sizes.iter().find(|&&s| s == 0 || s % 2 == 0) {
            return Err(Error::InvalidArgument(format!(
                "blur sizes must be odd and >= 1, found {bad}"
            )));
        }
        Ok(BlurSizeMap { h, w, sizes })
    }

    pub fn filled(h: usize, w: usize, size: u8) -> Result<Self> {
        Self::new(h, w, vec![size; h * w])
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.sizes[r * self.w + c] as usize
    }

    pub fn sizes(&self) -> &[u8] {
        &self.sizes
    }

    /// Checks every entry against a camera's size range.
    pub fn validate_against(&self, cam: &CameraConfig) -> Result<()> {
        if let Some(bad) = self
            .sizes
            .iter()
            .find(|&&s| s as usize > cam.max_kernel_size)
        {
            return Err(Error::InvalidArgument(format!(
                "blur size {bad} exceeds max kernel size {}",
                cam.max_kernel_size
            )));
        }
        Ok(())
    }

    /// Fraction of pixels equal between two maps of the same shape.
    pub fn pixel_accuracy(&self, truth: &BlurSizeMap) -> Result<f64> {
        if (self.h, self.w) != (truth.h, truth.w) {
            return Err(Error::InvalidArgument(
                "size maps have different dimensions".into(),
            ));
        }
        let hits = self
            .sizes
            .iter()
            .zip(&truth.sizes)
            .filter(|(a, b)| a == b)
            .count();
        Ok(hits as f64 / self.sizes.len() as f64)
    }
}

fn reflect_index(i: isize, n: isize) -> usize {
    // half-sample symmetric: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
    let mut i = i;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Same-size 2D convolution of a patch with a unit-sum kernel.
pub fn convolve_patch(patch: &Grid, kernel: &ScaledKernel, boundary: Boundary) -> Result<Grid> {
    let s = kernel.size();
    let (h, w) = (patch.h(), patch.w());
    if s > h || s > w {
        return Err(Error::InvalidArgument(format!(
            "kernel size {s} exceeds patch dimensions {h}x{w}"
        )));
    }
    let half = (s as isize - 1) / 2;
    let kv = kernel.values();
    let mut out = Grid::zeros(h, w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut acc = 0.0;
            for a in 0..s as isize {
                let rr = r - (a - half);
                let row = match boundary {
                    Boundary::Reflect => reflect_index(rr, h as isize),
                    Boundary::Cyclic => rr.rem_euclid(h as isize) as usize,
                };
                for b in 0..s as isize {
                    let cc = c - (b - half);
                    let col = match boundary {
                        Boundary::Reflect => reflect_index(cc, w as isize),
                        Boundary::Cyclic => cc.rem_euclid(w as isize) as usize,
                    };
                    acc += kv[(a as usize, b as usize)] * patch[(row, col)];
                }
            }
            out[(r as usize, c as usize)] = acc;
        }
    }
    Ok(out)
}

/// Knobs for full-image simulation.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Patch (tile) side in pixels.
    pub patch: usize,
    /// Boundary handling for the per-tile blur.
    pub boundary: Boundary,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    /// Seed for the per-tile noise streams.
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            patch: 32,
            boundary: Boundary::Reflect,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Tile anchors covering an `h`×`w` image with `p`×`p` tiles; interior tiles
/// are non-overlapping and the last row/column is anchored to the image edge.
fn tile_anchors(extent: usize, p: usize) -> Vec<usize> {
    let mut anchors: Vec<usize> = (0..extent / p).map(|i| i * p).collect();
    if extent % p != 0 {
        anchors.push(extent - p);
    }
    anchors
}

/// Forms the coded image from an all-focus image and its blur-size map.
///
/// The image is tiled into `patch`×`patch` tiles; each tile is blurred with
/// the code scaled to the blur size at the tile's center pixel, then optional
/// Gaussian noise is added and the result is clamped to [0, 1]. Each tile
/// draws from an independent noise stream derived from the seed and the
/// tile's row-major index, so output is reproducible bit-for-bit.
pub fn simulate_coded_image(
    image: &Grid,
    sizes: &BlurSizeMap,
    code: &ApertureCode,
    cam: &CameraConfig,
    opts: &SimOptions,
) -> Result<Grid> {
    if (image.h(), image.w()) != (sizes.h(), sizes.w()) {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} and size map {}x{} dimensions differ",
            image.h(),
            image.w(),
            sizes.h(),
            sizes.w()
        )));
    }
    let p = opts.patch;
    if image.h() < p || image.w() < p {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than patch size {p}",
            image.h(),
            image.w()
        )));
    }
    sizes.validate_against(cam)?;

    // kernels are shared across tiles; build one per size on demand
    let mut kernels: Vec<Option<ScaledKernel>> = vec![None; cam.max_kernel_size + 1];
    let mut out = Grid::zeros(image.h(), image.w());
    let row_anchors = tile_anchors(image.h(), p);
    let col_anchors = tile_anchors(image.w(), p);
    let mut tile_index = 0u64;
    for &r0 in &row_anchors {
        for &c0 in &col_anchors {
            let s = sizes.get(r0 + p / 2, c0 + p / 2);
            if kernels[s].is_none() {
                kernels[s] = Some(scale_code(code, s)?);
            }
            let tile = image.window(r0, c0, p, p);
            let mut blurred = convolve_patch(&tile, kernels[s].as_ref().unwrap(), opts.boundary)?;
            if opts.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(tile_index);
                let normal = Normal::new(0.0, opts.noise_sigma).expect("valid sigma");
                for v in blurred.as_mut_slice() {
                    *v += normal.sample(&mut rng);
                }
            }
            blurred.clamp01_in_place();
            out.blit(&blurred, r0, c0);
            tile_index += 1;
        }
    }
    Ok(out)
}

/// All `patch`×`patch` windows at anchors `{0, stride, 2 stride, ...}` that
/// fit inside the image, in row-major anchor order. Images smaller than the
/// patch yield an empty sequence.
pub fn extract_patches(image: &Grid, patch: usize, stride: usize) -> Vec<(Grid, usize, usize)> {
    assert!(stride >= 1, "stride must be >= 1");
    let mut out = Vec::new();
    if image.h() < patch || image.w() < patch {
        return out;
    }
    let mut r = 0;
    while r + patch <= image.h() {
        let mut c = 0;
        while c + patch <= image.w() {
            out.push((image.window(r, c, patch, patch), r, c));
            c += stride;
        }
        r += stride;
    }
    out
}

/// Centered `log(1 + |DFT|)` magnitude grid of a patch.
pub fn spectral_feature(patch: &Grid) -> Grid {
    let spec = fft2::dft2(patch);
    let mags = Grid::from_vec(
        patch.h(),
        patch.w(),
        spec.iter().map(|z| (1.0 + z.norm()).ln()).collect(),
    );
    fft2::fftshift(&mags)
}
