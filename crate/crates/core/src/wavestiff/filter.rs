//! Spatial filters on complex displacement maps.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::fft::{freq_index, Fft2};
use crate::C64;

/// Unit of the Butterworth cutoff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// Cycles per meter.
    #[default]
    CyclesPerM,
    /// Radians per meter.
    RadPerM,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Butterworth {
    pub cutoff_per_m: f64,
    pub order: u32,
    pub unit: FrequencyUnit,
}

impl Default for Butterworth {
    fn default() -> Self {
        Self { cutoff_per_m: 100.0, order: 4, unit: FrequencyUnit::CyclesPerM }
    }
}

impl Butterworth {
    /// Amplitude gain at spatial frequency `k` (same unit as the cutoff).
    pub fn gain(&self, k: f64) -> f64 {
        1.0 / (1.0 + (k / self.cutoff_per_m).powi(2 * self.order as i32)).sqrt()
    }
}

fn spectral_filter(field: &Array2<C64>, gain: impl Fn(f64, f64) -> f64) -> Array2<C64> {
    let n = field.nrows();
    let fft = Fft2::new(n);
    let mut buf: Vec<C64> = field.iter().copied().collect();
    fft.forward(&mut buf);
    for r in 0..n {
        for c in 0..n {
            buf[r * n + c] *= gain(freq_index(r, n), freq_index(c, n));
        }
    }
    fft.inverse(&mut buf);
    let scale = 1.0 / (n * n) as f64;
    Array2::from_shape_vec((n, n), buf.into_iter().map(|z| z * scale).collect()).expect("square grid")
}

/// Butterworth low-pass; `spacing_m` is the voxel size.
pub fn butterworth_lowpass(field: &Array2<C64>, filter: &Butterworth, spacing_m: f64) -> Array2<C64> {
    let n = field.nrows() as f64;
    let unit = match filter.unit {
        FrequencyUnit::CyclesPerM => 1.0,
        FrequencyUnit::RadPerM => std::f64::consts::TAU,
    };
    spectral_filter(field, |fy, fx| filter.gain(unit * fx.hypot(fy) / (n * spacing_m)))
}

/// Isotropic Gaussian smoothing with standard deviation `sigma_m` (meters),
/// applied as a spectral multiplier.
pub fn gaussian_smooth(field: &Array2<C64>, sigma_m: f64, spacing_m: f64) -> Array2<C64> {
    let n = field.nrows() as f64;
    let s = std::f64::consts::TAU * sigma_m / (n * spacing_m);
    spectral_filter(field, |fy, fx| (-0.5 * s * s * (fx * fx + fy * fy)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn gain_values() {
        let b = Butterworth::default();
        assert_eq!(b.gain(0.0), 1.0);
        assert!((b.gain(100.0) - 0.707_106_781_186_547_6).abs() < 1e-12);
        assert!((b.gain(200.0) - 1.0 / 257f64.sqrt()).abs() < 1e-12);
        assert!((1.0 / 257f64.sqrt() - 0.06238).abs() < 1e-5);
    }

    #[test]
    fn plane_wave_is_scaled_by_gain() {
        // 32 voxels of 2 mm: bin 8 is 125 cycles/m.
        let (n, dx) = (32, 2e-3);
        let wave = Array2::from_shape_fn((n, n), |(_, c)| C64::from_polar(1.0, TAU * 8.0 * c as f64 / n as f64));
        let b = Butterworth::default();
        let out = butterworth_lowpass(&wave, &b, dx);
        let g = 1.0 / (1.0 + 1.25f64.powi(8)).sqrt();
        assert!(out.iter().zip(wave.iter()).all(|(o, w)| (o - w * g).norm() < 1e-10));
        let rad = Butterworth { unit: FrequencyUnit::RadPerM, ..b };
        let out = butterworth_lowpass(&wave, &rad, dx);
        let g = 1.0 / (1.0 + (125.0 * TAU / 100.0f64).powi(8)).sqrt();
        assert!(out.iter().zip(wave.iter()).all(|(o, w)| (o - w * g).norm() < 1e-10));
    }

    #[test]
    fn real_input_stays_real_and_linear() {
        let n = 16;
        let a = Array2::from_shape_fn((n, n), |(r, c)| C64::new(((r * 7 + c * 3) % 5) as f64, 0.0));
        let b = Array2::from_shape_fn((n, n), |(r, c)| C64::new((r as f64 - c as f64).cos(), 0.0));
        let f = Butterworth { cutoff_per_m: 60.0, ..Default::default() };
        let fa = butterworth_lowpass(&a, &f, 2e-3);
        assert!(fa.iter().all(|z| z.im.abs() < 1e-12));
        let sum = butterworth_lowpass(&(&a * C64::new(2.0, 0.0) + &b), &f, 2e-3);
        let fb = butterworth_lowpass(&b, &f, 2e-3);
        assert!(sum.iter().zip(fa.iter().zip(fb.iter())).all(|(s, (x, y))| (s - (x * 2.0 + y)).norm() < 1e-10));
    }

    #[test]
    fn gaussian_keeps_constants() {
        let c = Array2::from_elem((8, 8), C64::new(1.5, -0.5));
        let out = gaussian_smooth(&c, 3e-3, 2e-3);
        assert!(out.iter().all(|z| (z - C64::new(1.5, -0.5)).norm() < 1e-12));
    }
}
