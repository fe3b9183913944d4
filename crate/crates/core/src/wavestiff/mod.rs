//! From reconstructed images to displacement, shear modulus and stiffness.
//!
//! The chain is: conjugate product of each polarity pair, optional removal
//! of the lowest spatial frequencies on the unit phasor, Laplacian unwrapping
//! of the doubled phase, first-harmonic extraction over the offsets,
//! optional low-pass filtering, and algebraic Helmholtz inversion.

pub mod filter;
pub mod invert;
pub mod phase;

use ndarray::{s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::MegSpec;
use crate::ImageSeries;

pub use filter::{butterworth_lowpass, gaussian_smooth, Butterworth, FrequencyUnit};
pub use invert::{
    harmonic_extract, invert_aide, laplacian, median_filter, median_stiffness, stiffness, HarmonicField, ModulusMap,
    Stencil, StiffnessMap,
};
pub use phase::{
    pair_phasors, phase_difference, remove_bulk, remove_bulk_field, unwrap_laplacian, wrap, WrappedPhaseSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub bulk_removal: bool,
    pub unwrap: bool,
    pub butterworth: Option<Butterworth>,
    /// Gaussian smoothing of the displacement, meters; off when `None`.
    pub smoothing_sigma_m: Option<f64>,
    pub stencil: Stencil,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            bulk_removal: true,
            unwrap: true,
            butterworth: Some(Butterworth::default()),
            smoothing_sigma_m: None,
            stencil: Stencil::FivePoint,
        }
    }
}

impl WaveConfig {
    /// Everything but the core chain switched off.
    pub fn bare() -> Self {
        Self { bulk_removal: false, butterworth: None, smoothing_sigma_m: None, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Displacement {
    pub wrapped: WrappedPhaseSet,
    /// Unwrapped (or merely wrapped, if unwrapping is off) phase per pair.
    pub phases: Array4<f64>,
    pub harmonic: HarmonicField,
}

#[derive(Clone, Debug)]
pub struct WaveResult {
    pub displacement: Displacement,
    pub modulus: ModulusMap,
    pub stiffness: StiffnessMap,
}

/// Mechanical constants needed by the inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physics {
    pub frequency_hz: f64,
    pub density_kg_m3: f64,
}

impl Physics {
    pub fn omega(&self) -> f64 {
        std::f64::consts::TAU * self.frequency_hz
    }
}

/// Phase processing up to the filtered first-harmonic displacement; `mask`
/// is the tissue support.
pub fn extract_displacement(
    series: &ImageSeries,
    meg: &MegSpec,
    mask: &Array2<bool>,
    cfg: &WaveConfig,
) -> Result<Displacement> {
    let n = series.grid.size;
    if mask.dim() != (n, n) {
        return Err(Error::Invalid(format!("mask shape {:?} does not match grid {n}", mask.dim())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let q = pair_phasors(series, meg)?;
    let wrapped = WrappedPhaseSet { phases: q.mapv(|z| 0.5 * z.arg()) };
    let mut phases = Array4::zeros(q.dim());
    for d in 0..meg.n_directions {
        for p in 0..meg.n_offsets {
            let mut field = q.slice(s![d, p, .., ..]).to_owned();
            field.zip_mut_with(mask, |z, &m| {
                if !m {
                    *z = crate::C64::default();
                }
            });
            if cfg.bulk_removal {
                field = remove_bulk_field(&field);
            }
            let doubled = field.mapv(|z| if z.norm() < 1e-9 { 0.0 } else { z.arg() });
            let doubled = if cfg.unwrap { unwrap_laplacian(&doubled) } else { doubled };
            phases.slice_mut(s![d, p, .., ..]).assign(&(doubled * 0.5));
        }
    }
    let spacing = series.grid.voxel_size();
    let mut harmonic = harmonic_extract(&phases, meg.encoding_rad_per_m, spacing, mask)?;
    for mut u in harmonic.u.axis_iter_mut(Axis(0)) {
        let mut f = u.to_owned();
        if let Some(b) = &cfg.butterworth {
            f = butterworth_lowpass(&f, b, spacing);
        }
        if let Some(sigma) = cfg.smoothing_sigma_m {
            f = gaussian_smooth(&f, sigma, spacing);
        }
        f.zip_mut_with(mask, |z, &m| {
            if !m {
                *z = crate::C64::default();
            }
        });
        u.assign(&f);
    }
    Ok(Displacement { wrapped, phases, harmonic })
}

/// Inversion and stiffness of an extracted displacement.
pub fn invert(displacement: Displacement, physics: Physics, stencil: Stencil) -> Result<WaveResult> {
    let modulus = invert_aide(&displacement.harmonic, physics.omega(), physics.density_kg_m3, stencil)?;
    let stiffness = stiffness(&modulus);
    Ok(WaveResult { displacement, modulus, stiffness })
}

/// The whole chain from images to stiffness.
pub fn process(
    series: &ImageSeries,
    meg: &MegSpec,
    mask: &Array2<bool>,
    cfg: &WaveConfig,
    physics: Physics,
) -> Result<WaveResult> {
    invert(extract_displacement(series, meg, mask, cfg)?, physics, cfg.stencil)
}
