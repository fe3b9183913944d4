use std::f64::consts::PI;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::phantom::PhantomTruth;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSource {
    /// In-plane propagation direction `[x, y]`; normalised on use.
    pub direction: [f64; 2],
    /// Complex amplitude `[re, im]` in meters.
    pub amplitude: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VibrationSpec {
    pub frequency_hz: f64,
    pub n_offsets: usize,
    pub n_directions: usize,
    pub wave_sources: Vec<WaveSource>,
}

impl Default for VibrationSpec {
    fn default() -> Self {
        let amp = 20e-6;
        let src = |direction: [f64; 2], phase: f64| WaveSource {
            direction,
            amplitude: [amp * phase.cos(), amp * phase.sin()],
        };
        Self {
            frequency_hz: 60.0,
            n_offsets: 4,
            n_directions: 3,
            wave_sources: vec![src([1.0, 0.0], 0.0), src([0.0, 1.0], 0.7), src([-1.0, 0.0], 1.9)],
        }
    }
}

impl VibrationSpec {
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_offsets < 3 {
            return Err(Error::Invalid("at least 3 phase offsets are needed".into()));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::Invalid("frequency must be positive".into()));
        }
        if self.wave_sources.len() != self.n_directions {
            return Err(Error::Invalid(format!(
                "{} wave sources given for {} directions",
                self.wave_sources.len(),
                self.n_directions
            )));
        }
        for (i, a) in self.wave_sources.iter().enumerate() {
            if a.direction[0].hypot(a.direction[1]) == 0.0 {
                return Err(Error::Invalid(format!("wave source {i} has a zero direction")));
            }
            for b in &self.wave_sources[..i] {
                if a == b {
                    return Err(Error::Invalid("encoding directions must be distinct".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WaveField {
    /// `[direction, row, col]`, meters.
    pub displacement: Array3<C64>,
    /// Complex wavenumber (rad/m) per region label; index 0 is unused.
    pub wavenumbers: Vec<C64>,
}

/// Helmholtz wavenumber `omega sqrt(density / G*)` (principal root).
pub fn wavenumber(omega: f64, density: f64, modulus: C64) -> C64 {
    omega * (C64::new(density, 0.0) / modulus).sqrt()
}

/// Regionwise plane waves `u_d = A_d exp(i k_region n_d . r)`.
pub fn synth_wavefield(truth: &PhantomTruth, vib: &VibrationSpec) -> Result<WaveField> {
    vib.validate()?;
    let n = truth.grid.size;
    if truth.stiffness_map.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Invalid("stiffness must be positive everywhere".into()));
    }
    let omega = vib.omega();
    let regions = truth.region_count().max(1);
    let mut wavenumbers = vec![C64::default(); regions + 1];
    let mut field = Array3::<C64>::zeros((vib.n_directions, n, n));
    for r in 0..n {
        for c in 0..n {
            let label = truth.labels[[r, c]].max(1) as usize;
            let g = C64::new(truth.stiffness_map[[r, c]], truth.loss_map[[r, c]]);
            let k = wavenumber(omega, truth.density_kg_m3, g);
            wavenumbers[label] = k;
            let pos = truth.grid.position(r, c);
            for (d, src) in vib.wave_sources.iter().enumerate() {
                let len = src.direction[0].hypot(src.direction[1]);
                let proj = (src.direction[0] * pos[0] + src.direction[1] * pos[1]) / len;
                let a = C64::new(src.amplitude[0], src.amplitude[1]);
                field[[d, r, c]] = a * (C64::i() * k * proj).exp();
            }
        }
    }
    Ok(WaveField { displacement: field, wavenumbers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::phantom::{make_phantom, PhantomSpec};

    #[test]
    fn wavenumbers_match_dispersion_oracle() {
        // k = 2 pi f sqrt(rho/mu), evaluated by hand above the implementation.
        let w = 2.0 * PI * 60.0;
        assert!((w * (1000.0f64 / 3000.0).sqrt() - 217.655_923_708).abs() < 1e-6);
        let truth = make_phantom(&PhantomSpec::default()).unwrap();
        let wf = synth_wavefield(&truth, &VibrationSpec::default()).unwrap();
        assert!((wf.wavenumbers[1].re - 266.572_976_289).abs() < 1e-6);
        assert!((wf.wavenumbers[2].re - 217.655_923_708).abs() < 1e-6);
        for (label, mu) in [(1usize, 2000.0), (2, 3000.0)] {
            let k = wf.wavenumbers[label].re;
            let back = 1000.0 * w * w / (k * k);
            assert!((back - mu).abs() / mu < 1e-10);
        }
    }

    #[test]
    fn uniform_field_satisfies_helmholtz() {
        let truth = make_phantom(&PhantomSpec::homogeneous(3000.0)).unwrap();
        let vib = VibrationSpec::default();
        let wf = synth_wavefield(&truth, &vib).unwrap();
        let k = wf.wavenumbers[1];
        // Continuous Laplacian of A exp(i k n.r) is -k^2 times the field.
        for d in 0..3 {
            let u = wf.displacement[[d, 20, 30]];
            let lap = -(k * k) * u;
            let g = -1000.0 * vib.omega().powi(2) * u / lap;
            assert!((g.re - 3000.0).abs() < 1e-8 && g.im.abs() < 1e-8);
        }
    }

    #[test]
    fn nonpositive_stiffness_is_an_error() {
        let mut truth = make_phantom(&PhantomSpec::homogeneous(3000.0)).unwrap();
        truth.stiffness_map[[3, 3]] = 0.0;
        assert!(synth_wavefield(&truth, &VibrationSpec::default()).is_err());
    }
}
