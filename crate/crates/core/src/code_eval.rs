//! Depth-discriminability metric for aperture codes: KL divergence between
//! Gaussian image distributions blurred at different kernel sizes.
//!
//! Images are modeled as zero-mean Gaussians that are diagonal in the DFT
//! basis. Blurring with the code scaled to size `s` multiplies each
//! frequency's signal variance by the kernel's power spectrum; sensor noise
//! adds a flat floor. Codes whose scaled kernels have scale-dependent
//! spectral zero crossings keep these distributions far apart, which is what
//! makes blur size (and hence depth) identifiable.

use crate::error::{Error, Result};
use crate::fft2;
use crate::grid::Grid;
use crate::optics::{scale_code, ApertureCode};

/// Per-frequency signal variances plus a flat noise floor.
#[derive(Clone, Debug)]
pub struct PriorSpectrum {
    signal: Grid,
    noise_floor: f64,
}

impl PriorSpectrum {
    pub fn new(signal: Grid, noise_floor: f64) -> Result<Self> {
        if signal.h() != signal.w() {
            return Err(Error::InvalidArgument(format!(
                "prior spectrum must be square, got {}x{}",
                signal.h(),
                signal.w()
            )));
        }
        if !signal.as_slice().iter().all(|&v| v > 0.0) {
            return Err(Error::InvalidArgument(
                "prior signal variances must be strictly positive".into(),
            ));
        }
        if !(noise_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise floor must be positive, got {noise_floor}"
            )));
        }
        Ok(PriorSpectrum {
            signal,
            noise_floor,
        })
    }

    /// Gaussian-gradient prior in its stationary frequency-domain form:
    /// `sigma_x(nu) = amplitude / (|gx(nu)|^2 + |gy(nu)|^2 + eps)` with
    /// first-difference derivative filters `gx`, `gy`.
    pub fn gradient_prior(p: usize, amplitude: f64, eps: f64, noise_sigma: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("prior grid size must be >= 1".into()));
        }
        let signal = Grid::from_fn(p, p, |u, v| {
            let su = (std::f64::consts::PI * u as f64 / p as f64).sin();
            let sv = (std::f64::consts::PI * v as f64 / p as f64).sin();
            // |1 - e^{-2 pi i u / p}|^2 = 4 sin^2(pi u / p)
            amplitude / (4.0 * su * su + 4.0 * sv * sv + eps)
        });
        PriorSpectrum::new(signal, noise_sigma * noise_sigma)
    }

    /// Defaults: 32×32 grid, amplitude 1, eps 1e-6, noise sigma 0.01.
    pub fn default_prior() -> Self {
        Self::gradient_prior(32, 1.0, 1e-6, 0.01).expect("valid defaults")
    }

    pub fn grid_size(&self) -> usize {
        self.signal.h()
    }

    pub fn signal(&self) -> &Grid {
        &self.signal
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    /// Same prior with signal and noise variances multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PriorSpectrum::new(self.signal.scale(factor), self.noise_floor * factor)
    }
}

/// Per-frequency variance of images blurred at scale `s`:
/// `sigma_s(nu) = |C_s(nu)|^2 sigma_x(nu) + eta^2`.
pub fn blurred_spectrum(code: &ApertureCode, s: usize, prior: &PriorSpectrum) -> Result<Grid> {
    let p = prior.grid_size();
    let kernel = scale_code(code, s)?;
    if kernel.size() > p {
        return Err(Error::InvalidArgument(format!(
            "kernel size {s} exceeds prior grid {p}"
        )));
    }
    let power = fft2::kernel_transfer_power(kernel.values(), p);
    Ok(Grid::from_fn(p, p, |r, c| {
        power[(r, c)] * prior.signal[(r, c)] + prior.noise_floor
    }))
}

/// KL divergence (nats) between the blurred-image distributions at scales
/// `s1` and `s2`, both zero-mean Gaussians diagonal in the DFT basis:
/// `KL = 1/2 sum(ratio - ln(ratio) - 1)` with `ratio = sigma_s1 / sigma_s2`.
pub fn kl_between_scales(
    code: &ApertureCode,
    s1: usize,
    s2: usize,
    prior: &PriorSpectrum,
) -> Result<f64> {
    let a = blurred_spectrum(code, s1, prior)?;
    let b = blurred_spectrum(code, s2, prior)?;
    Ok(kl_diagonal(&a, &b))
}

fn kl_diagonal(a: &Grid, b: &Grid) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&va, &vb)| {
            let ratio = va / vb;
            ratio - ratio.ln() - 1.0
        })
        .sum::<f64>()
        * 0.5
}

/// Pairwise KL matrix over a scale set plus min/mean aggregates.
#[derive(Clone, Debug)]
pub struct KLReport {
    pub scales: Vec<usize>,
    /// Row-major |scales|×|scales| matrix; entry (i, j) is KL(s_i || s_j).
    pub kl: Vec<f64>,
    /// Smallest off-diagonal divergence: the worst-discriminated scale pair.
    pub score_min: f64,
    /// Mean off-diagonal divergence.
    pub score_mean: f64,
}

impl KLReport {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.kl[i * self.scales.len() + j]
    }

    /// CSV form: header row of scales, one matrix row per line, then
    /// `score_min,<v>` and `score_mean,<v>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("scale");
        for s in &self.scales {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for (i, s) in self.scales.iter().enumerate() {
            out.push_str(&s.to_string());
            for j in 0..self.scales.len() {
                out.push_str(&format!(",{:.12e}", self.entry(i, j)));
            }
            out.push('\n');
        }
        out.push_str(&format!("score_min,{:.12e}\n", self.score_min));
        out.push_str(&format!("score_mean,{:.12e}\n", self.score_mean));
        out
    }
}

/// Full pairwise divergence report for a code over a scale set.
pub fn kl_report(code: &ApertureCode, scales: &[usize], prior: &PriorSpectrum) -> Result<KLReport> {
    if scales.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scales to compare, got {}",
            scales.len()
        )));
    }
    let spectra: Vec<Grid> = scales
        .iter()
        .map(|&s| blurred_spectrum(code, s, prior))
        .collect::<Result<_>>()?;
    let n = scales.len();
    let mut kl = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kl[i * n + j] = kl_diagonal(&spectra[i], &spectra[j]);
            }
        }
    }
    let off_diag: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| kl[i * n + j])
        .collect();
    let score_min = off_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let score_mean = off_diag.iter().sum::<f64>() / off_diag.len() as f64;
    Ok(KLReport {
        scales: scales.to_vec(),
        kl,
        score_min,
        score_mean,
    })
}
