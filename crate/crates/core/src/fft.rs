//! Centered, orthonormal 2-D DFT.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Image to k-space, DC at index `(h/2, w/2)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        assert_eq!(data.len(), h * w);
        // ifftshift before and fftshift after, in both directions.
        roll(data, h, w, h - h / 2, w - w / 2);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(data);
        let mut t = transpose(data, h, w);
        cols.process(&mut t);
        let back = transpose(&t, w, h);
        data.copy_from_slice(&back);
        roll(data, h, w, h / 2, w / 2);
        let s = 1.0 / ((h * w) as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= s);
    }
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); h * w];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = data[i * w + j];
        }
    }
    out
}

/// Circular shift: element `(i, j)` moves to `((i + dy) % h, (j + dx) % w)`.
fn roll(data: &mut [Complex64], h: usize, w: usize, dy: usize, dx: usize) {
    if dy % h == 0 && dx % w == 0 {
        return;
    }
    let src = data.to_vec();
    for i in 0..h {
        let ii = (i + dy) % h;
        for j in 0..w {
            data[ii * w + (j + dx) % w] = src[i * w + j];
        }
    }
}
