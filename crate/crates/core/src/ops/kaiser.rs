//! Kaiser-Bessel gridding kernel and its Fourier transform.

use std::f64::consts::PI;

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Kaiser-Bessel kernel of a given width (in oversampled grid cells).
#[derive(Clone, Copy, Debug)]
pub struct KaiserBessel {
    pub width: usize,
    pub beta: f64,
}

impl KaiserBessel {
    /// Shape parameter from Beatty et al. for width `w` and oversampling `sigma`.
    pub fn new(width: usize, oversampling: f64) -> Self {
        let w = width as f64;
        let s = oversampling;
        let beta = PI * ((w / s).powi(2) * (s - 0.5).powi(2) - 0.8).sqrt();
        Self { width, beta }
    }

    /// Kernel value at offset `t` (grid cells).
    pub fn eval(&self, t: f64) -> f64 {
        let half = 0.5 * self.width as f64;
        if t.abs() > half {
            return 0.0;
        }
        let r = 1.0 - (t / half).powi(2);
        bessel_i0(self.beta * r.max(0.0).sqrt())
    }

    /// Continuous Fourier transform of the kernel at `f` cycles per grid cell.
    pub fn transform(&self, f: f64) -> f64 {
        let w = self.width as f64;
        let z = self.beta * self.beta - (PI * w * f).powi(2);
        if z > 1e-12 {
            let a = z.sqrt();
            w * a.sinh() / a
        } else if z < -1e-12 {
            let a = (-z).sqrt();
            w * a.sin() / a
        } else {
            w
        }
    }
}
