//! 2D DFT helpers on row-major complex buffers, built on rustfft.
//!
//! Forward transforms are unnormalized; the inverse divides by `h * w`, so
//! `idft2(dft2(x)) == x` up to round-off.

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::grid::Grid;

/// In-place 2D FFT over a row-major `h`×`w` buffer.
pub fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    assert_eq!(buf.len(), h * w, "fft buffer length mismatch");
    let mut planner = rustfft::FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }

    let col_fft = planner.plan_fft(h, direction);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
}

/// Forward DFT of a real grid.
pub fn dft2(grid: &Grid) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = grid
        .as_slice()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft2_in_place(&mut buf, grid.h(), grid.w(), FftDirection::Forward);
    buf
}

/// Inverse DFT, normalized by `1 / (h * w)`.
pub fn idft2(spectrum: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    fft2_in_place(&mut buf, h, w, FftDirection::Inverse);
    let norm = 1.0 / (h * w) as f64;
    for v in &mut buf {
        *v *= norm;
    }
    buf
}

/// Real parts of an inverse DFT as a grid.
pub fn idft2_real(spectrum: &[Complex64], h: usize, w: usize) -> Grid {
    let buf = idft2(spectrum, h, w);
    Grid::from_vec(h, w, buf.iter().map(|z| z.re).collect())
}

/// Zero-pads an odd-sided kernel onto a `p`×`p` grid with its center at
/// index (0, 0), wrapping negative offsets. Convolving with the result in
/// the frequency domain then matches a centered same-size cyclic convolution
/// with no spatial shift.
pub fn pad_kernel_centered(kernel: &Grid, p: usize) -> Grid {
    let s = kernel.h();
    assert_eq!(kernel.w(), s, "kernel must be square");
    assert!(s <= p, "kernel larger than target grid");
    let half = (s as isize - 1) / 2;
    let mut out = Grid::zeros(p, p);
    for a in 0..s {
        for b in 0..s {
            let r = (a as isize - half).rem_euclid(p as isize) as usize;
            let c = (b as isize - half).rem_euclid(p as isize) as usize;
            out[(r, c)] = kernel[(a, b)];
        }
    }
    out
}

/// Transfer function of an odd-sided kernel on a `p`×`p` DFT grid.
pub fn kernel_transfer(kernel: &Grid, p: usize) -> Vec<Complex64> {
    dft2(&pad_kernel_centered(kernel, p))
}

/// `|transfer|^2` of a kernel on a `p`×`p` DFT grid.
pub fn kernel_transfer_power(kernel: &Grid, p: usize) -> Grid {
    let spec = kernel_transfer(kernel, p);
    Grid::from_vec(p, p, spec.iter().map(|z| z.norm_sqr()).collect())
}

/// Swaps quadrants so the zero-frequency bin lands at (h/2, w/2).
pub fn fftshift(grid: &Grid) -> Grid {
    let (h, w) = (grid.h(), grid.w());
    let mut out = Grid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            out[((r + h / 2) % h, (c + w / 2) % w)] = grid[(r, c)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let g = Grid::from_fn(13, 17, |r, c| ((r * 31 + c * 7) % 11) as f64 / 11.0);
        let spec = dft2(&g);
        let back = idft2_real(&spec, 13, 17);
        assert!(g.max_abs_diff(&back) < 1e-12);
    }

    #[test]
    fn delta_kernel_has_flat_unit_transfer() {
        let delta = Grid::from_vec(1, 1, vec![1.0]);
        let power = kernel_transfer_power(&delta, 8);
        for &v in power.as_slice() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_kernel_preserves_entries_and_dc() {
        let k = Grid::from_vec(3, 3, vec![0.0, 0.1, 0.0, 0.2, 0.3, 0.1, 0.0, 0.2, 0.1]);
        let padded = pad_kernel_centered(&k, 8);
        assert!((padded.sum() - k.sum()).abs() < 1e-15);
        // center entry lands at the origin
        assert_eq!(padded[(0, 0)], k[(1, 1)]);
        // top-left of the kernel wraps to (-1, -1)
        assert_eq!(padded[(7, 7)], k[(0, 0)]);
        let transfer = kernel_transfer(&k, 8);
        assert!((transfer[0].re - k.sum()).abs() < 1e-12);
        assert!(transfer[0].im.abs() < 1e-12);
    }

    #[test]
    fn fftshift_moves_dc_to_center() {
        let mut g = Grid::zeros(6, 6);
        g[(0, 0)] = 1.0;
        let shifted = fftshift(&g);
        assert_eq!(shifted[(3, 3)], 1.0);
        assert_eq!(shifted.sum(), 1.0);
    }
}
