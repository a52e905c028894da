//! Row-major `f64` matrix used for images, patches, kernels and spectra.

use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Grid {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    /// Wraps a row-major buffer. Panics if `data.len() != h * w`.
    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w, "grid buffer length mismatch");
        Grid { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Grid { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.w..(r + 1) * self.w]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Population standard deviation of the entries.
    pub fn stddev(&self) -> f64 {
        let mean = self.mean();
        let var = self
            .data
            .iter()
            .map(|v| {
                let d = v - mean;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Grid {
        self.map(|v| v * factor)
    }

    pub fn clamp01_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copies the `ph`×`pw` window anchored at (`r0`, `c0`).
    pub fn window(&self, r0: usize, c0: usize, ph: usize, pw: usize) -> Grid {
        debug_assert!(r0 + ph <= self.h && c0 + pw <= self.w);
        let mut data = Vec::with_capacity(ph * pw);
        for r in r0..r0 + ph {
            data.extend_from_slice(&self.data[r * self.w + c0..r * self.w + c0 + pw]);
        }
        Grid { h: ph, w: pw, data }
    }

    /// Writes `patch` into this grid at anchor (`r0`, `c0`).
    pub fn blit(&mut self, patch: &Grid, r0: usize, c0: usize) {
        debug_assert!(r0 + patch.h <= self.h && c0 + patch.w <= self.w);
        for r in 0..patch.h {
            let dst = (r0 + r) * self.w + c0;
            self.data[dst..dst + patch.w].copy_from_slice(patch.row(r));
        }
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        assert_eq!((self.h, self.w), (other.h, other.w));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.w + c]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.w + c]
    }
}
