//! One-call simulation of a complete acquisition: phantom, waves, encoded
//! repetitions and fully sampled spiral k-space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::{
    encode_repetitions, make_phantom, make_spiral, simulate_kspace, synth_wavefield, MegSpec, PhantomSpec,
    PhantomTruth, Trajectory, VibrationSpec, WaveField,
};
use crate::{ImageSeries, KSpaceSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub phantom: PhantomSpec,
    pub vibration: VibrationSpec,
    pub meg: MegSpec,
    pub arm_count: usize,
    pub samples_per_arm: usize,
    /// k-space SNR `20 log10(rms|d| / sigma)`; overrides `phantom.noise_sigma`.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            vibration: VibrationSpec::default(),
            meg: MegSpec::default(),
            arm_count: 5,
            samples_per_arm: 1536,
            snr_db: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub truth: PhantomTruth,
    pub wave: WaveField,
    pub meg: MegSpec,
    pub traj: Trajectory,
    /// All arms for every repetition.
    pub kspace: KSpaceSet,
    /// Noise level actually used, relative to the peak image magnitude.
    pub noise_sigma: f64,
}

impl Simulation {
    pub fn series(&self) -> &ImageSeries {
        self.truth.images.as_ref().expect("filled by simulate")
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    cfg.vibration.validate()?;
    if cfg.meg.n_directions != cfg.vibration.n_directions || cfg.meg.n_offsets != cfg.vibration.n_offsets {
        return Err(Error::Invalid("MEG and vibration disagree on directions/offsets".into()));
    }
    let mut truth = make_phantom(&cfg.phantom)?;
    let wave = synth_wavefield(&truth, &cfg.vibration)?;
    let series = encode_repetitions(&truth, &wave.displacement, &cfg.meg)?;
    let traj = make_spiral(cfg.arm_count, cfg.samples_per_arm, cfg.phantom.fov_m, cfg.phantom.grid_size)?;
    for w in &traj.warnings {
        log::warn!("{w}");
    }
    let noise_sigma = match cfg.snr_db {
        Some(snr) => {
            let clean = simulate_kspace(&series, &truth.coil_maps, &traj, 0.0, cfg.seed)?;
            let rms = (clean.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / clean.data.len() as f64).sqrt();
            let peak = series.frames.iter().map(|z| z.norm()).fold(0.0, f64::max);
            rms / (10f64.powf(snr / 20.0) * peak)
        }
        None => cfg.phantom.noise_sigma,
    };
    let kspace = simulate_kspace(&series, &truth.coil_maps, &traj, noise_sigma, cfg.seed)?;
    truth.displacement = Some(wave.displacement.clone());
    truth.images = Some(series);
    Ok(Simulation { truth, wave, meg: cfg.meg.clone(), traj, kspace, noise_sigma })
}
