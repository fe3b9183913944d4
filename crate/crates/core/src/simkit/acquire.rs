use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::nufft::NufftPlan;
use crate::ops::sense::sense_forward;
use crate::simkit::spiral::Trajectory;
use crate::{ImageSeries, KSpaceSet, C64};

/// Fully sampled multi-coil k-space `d_{t,i} = F S_i rho_t + noise`.
///
/// Noise is circular complex Gaussian with standard deviation
/// `noise_sigma * max|rho|` per sample.
pub fn simulate_kspace(
    series: &ImageSeries,
    coils: &Array3<C64>,
    traj: &Trajectory,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceSet> {
    let n = series.grid.size;
    if coils.dim().1 != n || coils.dim().2 != n || traj.grid.size != n {
        return Err(Error::Invalid("series, coils and trajectory grids differ".into()));
    }
    let reps = series.reps();
    let nc = coils.dim().0;
    let arms = traj.arm_count;
    let s = traj.samples_per_arm;
    let plan = NufftPlan::new(traj.grid, &traj.arm_coords(&traj.all_arms()))?;

    let mut data = Array4::<C64>::zeros((reps, nc, arms, s));
    for t in 0..reps {
        let per_coil = sense_forward(series.frame_slice(t), coils, &plan);
        for (i, y) in per_coil.iter().enumerate() {
            for a in 0..arms {
                for k in 0..s {
                    data[[t, i, a, k]] = y[a * s + k];
                }
            }
        }
    }

    let arm_table = Array2::from_shape_fn((reps, arms), |(_, j)| j);
    if noise_sigma == 0.0 {
        return Ok(KSpaceSet { clean: Some(data.clone()), data, arms: arm_table, arm_count: arms });
    }
    let peak = series.frames.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let std = noise_sigma * peak / std::f64::consts::SQRT_2;
    let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for z in data.iter_mut() {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *z += C64::new(re, im);
    }
    Ok(KSpaceSet { data, arms: arm_table, arm_count: arms, clean: None })
}

/// Keep `arms_per_rep` arms per repetition, interleaved so that repetition `t`
/// keeps arms `(t * arms_per_rep + j) mod arm_count`.
pub fn undersample(kspace: &KSpaceSet, arms_per_rep: usize) -> Result<KSpaceSet> {
    let a = kspace.arm_count;
    if arms_per_rep == 0 || arms_per_rep > a {
        return Err(Error::Invalid(format!("arms_per_rep must lie in 1..={a}")));
    }
    let (reps, nc, _, s) = kspace.data.dim();
    let arms = Array2::from_shape_fn((reps, arms_per_rep), |(t, j)| (t * arms_per_rep + j) % a);
    let mut slots = Array2::<usize>::zeros((reps, arms_per_rep));
    for t in 0..reps {
        for j in 0..arms_per_rep {
            let want = arms[[t, j]];
            slots[[t, j]] = kspace
                .arms
                .row(t)
                .iter()
                .position(|&x| x == want)
                .ok_or_else(|| Error::Invalid(format!("repetition {t} does not hold arm {want}")))?;
        }
    }
    let pick = |src: &Array4<C64>| {
        Array4::from_shape_fn((reps, nc, arms_per_rep, s), |(t, i, j, k)| src[[t, i, slots[[t, j]], k]])
    };
    Ok(KSpaceSet { data: pick(&kspace.data), clean: kspace.clean.as_ref().map(pick), arms, arm_count: a })
}
