//! Square 2D FFTs on row-major buffers.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

/// Forward (`e^{-i}`) and unnormalised inverse (`e^{+i}`) transforms of an `n x n` grid.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.run(buf, true, None);
    }

    pub fn inverse(&self, buf: &mut [C64]) {
        self.run(buf, false, None);
    }

    /// Transform where only the listed rows are nonzero on input (forward) or
    /// needed on output (inverse). Saves the row passes for the rest.
    pub fn forward_rows(&self, buf: &mut [C64], rows: &[usize]) {
        self.run(buf, true, Some(rows));
    }

    pub fn inverse_rows(&self, buf: &mut [C64], rows: &[usize]) {
        self.run(buf, false, Some(rows));
    }

    fn run(&self, buf: &mut [C64], forward: bool, rows: Option<&[usize]>) {
        let n = self.n;
        assert_eq!(buf.len(), n * n);
        let fft = if forward { &self.fwd } else { &self.inv };
        let mut scratch = vec![C64::default(); fft.get_inplace_scratch_len()];
        let row_pass = |buf: &mut [C64], scratch: &mut [C64]| match rows {
            Some(rows) => {
                for &r in rows {
                    fft.process_with_scratch(&mut buf[r * n..(r + 1) * n], scratch);
                }
            }
            None => fft.process_with_scratch(buf, scratch),
        };
        if forward {
            row_pass(buf, &mut scratch);
        }
        let mut tmp = vec![C64::default(); n * n];
        transpose(buf, &mut tmp, n);
        fft.process_with_scratch(&mut tmp, &mut scratch);
        transpose(&tmp, buf, n);
        if !forward {
            row_pass(buf, &mut scratch);
        }
    }
}

pub fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 16;
    for r0 in (0..n).step_by(B) {
        for c0 in (0..n).step_by(B) {
            for r in r0..(r0 + B).min(n) {
                for c in c0..(c0 + B).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}

/// Signed DFT frequency index of bin `j` for length `n`.
pub fn freq_index(j: usize, n: usize) -> f64 {
    if j < n.div_ceil(2) {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Forward 2D FFT of a real field, returned as complex.
pub fn fft2_real(field: &[f64], n: usize) -> Vec<C64> {
    let mut buf: Vec<C64> = field.iter().map(|&x| C64::new(x, 0.0)).collect();
    Fft2::new(n).forward(&mut buf);
    buf
}
