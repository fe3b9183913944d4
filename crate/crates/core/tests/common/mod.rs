#![allow(dead_code)]

use elastorec::deeprec::decoder::random_latents;
use elastorec::deeprec::{
    objective_from_plan, train, Activation, Decoder, DecoderConfig, DecoderParams, Objective, TrainConfig, Weights,
};
use elastorec::linrec::subspace::synthesize;
use elastorec::ops::levels::normalize_sos;
use elastorec::ops::{build_level_plan, LevelPlan, SegmentMode};
use elastorec::simkit::encode::PolarityOrder;
use elastorec::simkit::{make_spiral, simulate_kspace, undersample, MegSpec, Trajectory};
use elastorec::{nrmse, ImageSeries, KSpaceSet, C64};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn crand(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Smooth coil maps with unit sum of squares, as the simulator produces.
pub fn smooth_coils(nc: usize, n: usize) -> Array3<C64> {
    let s = n as f64;
    let mut coils = Array3::from_shape_fn((nc, n, n), |(i, r, c)| {
        let (y, x) = (r as f64 / s - 0.5, c as f64 / s - 0.5);
        C64::new(1.0 + 0.4 * (i as f64 + 1.0) * x, 0.3 * y - 0.2 * i as f64 * x)
    });
    normalize_sos(&mut coils);
    coils
}

/// One direction, three offsets: six repetitions.
pub fn small_meg() -> MegSpec {
    MegSpec { encoding_rad_per_m: 1.0, polarity_order: PolarityOrder::default(), n_directions: 1, n_offsets: 3 }
}

/// Smooth band-limited spatial components `U` (voxels x rank).
pub fn smooth_components(n: usize, rank: usize) -> Array2<C64> {
    let h = (n / 2) as f64;
    Array2::from_shape_fn((n * n, rank), |(i, l)| {
        let (r, c) = ((i / n) as f64 - h, (i % n) as f64 - h);
        let g = (-(r * r + c * c) / (n as f64 * (0.8 + 0.5 * l as f64))).exp();
        g * C64::from_polar(1.0, 0.15 * (l as f64 + 1.0) * r - 0.1 * c * l as f64)
    })
}

pub struct Toy {
    pub traj: Trajectory,
    pub coils: Array3<C64>,
    pub truth: ImageSeries,
    /// All arms for every repetition.
    pub kspace: KSpaceSet,
    pub meg: MegSpec,
}

/// Exactly rank-`rank` series on an `n x n` grid, noiselessly sampled with
/// every arm of a 4-arm spiral.
pub fn low_rank_toy(n: usize, rank: usize, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov = 0.002 * n as f64;
    let traj = make_spiral(4, 12 * n, fov, n).unwrap();
    let coils = smooth_coils(2, n);
    let meg = small_meg();
    let v = Array2::from_shape_fn((meg.reps(), rank), |_| crand(&mut rng));
    let truth = synthesize(&smooth_components(n, rank), &v, traj.grid);
    let kspace = simulate_kspace(&truth, &coils, &traj, 0.0, seed).unwrap();
    Toy { traj, coils, truth, kspace, meg }
}

/// The decoder stripped to `rho_t = U v_t^H`: one level, no hidden layers,
/// one channel, identity activation, no residual blocks, no noise. It
/// starts from the zero image, as CG does.
pub fn linear_decoder(latent: usize) -> DecoderConfig {
    DecoderConfig {
        levels: 1,
        latent,
        mlp_hidden: vec![],
        base_channels: 1,
        min_channels: 1,
        kernel: 1,
        noise_sigma: 0.0,
        activation: Activation::Identity,
        residual_blocks: false,
        zero_init_last: true,
    }
}

/// Fits the linear decoder to a rank-3 toy with the data term alone and
/// returns the image NRMSE.
pub fn subsumption_nrmse() -> f64 {
    let toy = low_rank_toy(16, 3, 11);
    let tcfg = TrainConfig {
        lambda_magn: 0.0,
        lambda_wave: 0.0,
        lambda_latent: 0.0,
        iterations: 3000,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let out = train(&toy.kspace, &toy.coils, &toy.traj, &toy.meg, &linear_decoder(3), &tcfg)
        .map_err(elastorec::Error::from)
        .unwrap();
    nrmse(toy.truth.frames.iter(), out.series.frames.iter())
}

/// A 32x32 experiment: the default phantom scaled down, short training.
pub fn small_experiment() -> elastorec::cli::ExperimentConfig {
    let mut cfg = elastorec::cli::ExperimentConfig::default();
    let sim = &mut cfg.simulation;
    sim.phantom.grid_size = 32;
    sim.phantom.fov_m = 0.064;
    sim.phantom.inclusions[0].center = [16.0, 16.0];
    sim.phantom.inclusions[0].radius = 6.0;
    sim.samples_per_arm = 768;
    sim.snr_db = Some(30.0);
    cfg.recon.train.iterations = 20;
    cfg
}

pub struct Setup {
    pub plan: LevelPlan,
    pub kspace: KSpaceSet,
}

/// 8x8 grid, two coils, six repetitions, two arms of four per repetition.
pub fn setup(levels: usize) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let traj = make_spiral(4, 96, 0.016, 8).unwrap();
    let coils = smooth_coils(2, 8);
    let mut s = ImageSeries::zeros(traj.grid, 6);
    s.frames.mapv_inplace(|_| crand(&mut rng));
    let full = simulate_kspace(&s, &coils, &traj, 0.0, 1).unwrap();
    let kspace = undersample(&full, 2).unwrap();
    let plan = build_level_plan(&traj, &kspace.arms, &coils, levels, SegmentMode::Nested).unwrap();
    Setup { plan, kspace }
}

pub fn random_levels(plan: &LevelPlan, reps: usize, seed: u64) -> Vec<Array3<elastorec::C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.levels.iter().map(|l| Array3::from_shape_fn((reps, l.grid.size, l.grid.size), |_| crand(&mut rng))).collect()
}

/// Central differences of `f` along the real and imaginary part of random
/// entries, compared with the analytic `g = dL/dRe + i dL/dIm`.
pub fn fd_error(
    images: &[Array3<elastorec::C64>],
    grads: &[Array3<elastorec::C64>],
    f: impl Fn(&[Array3<elastorec::C64>]) -> f64,
    h: f64,
    probes: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let peak = grads.iter().flat_map(|g| g.iter()).map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let k = rng.random_range(0..images.len());
        let (t, r, c) = images[k].dim();
        let ix = [rng.random_range(0..t), rng.random_range(0..r), rng.random_range(0..c)];
        for imag in [false, true] {
            let step = if imag { elastorec::C64::new(0.0, h) } else { elastorec::C64::new(h, 0.0) };
            let mut x = images.to_vec();
            x[k][ix] += step;
            let lp = f(&x);
            x[k][ix] -= step * 2.0;
            let lm = f(&x);
            let fd = (lp - lm) / (2.0 * h);
            let g = if imag { grads[k][ix].im } else { grads[k][ix].re };
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6 * peak));
        }
    }
    worst
}

/// Small decoder objective on the 8x8 setup, with its initial parameters.
pub fn toy_objective(weights: Weights) -> (Objective, DecoderParams) {
    let s = setup(2);
    let cfg = DecoderConfig {
        levels: 2,
        latent: 3,
        mlp_hidden: vec![6],
        base_channels: 4,
        min_channels: 2,
        ..DecoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = random_latents(6, 3, &mut rng);
    let params = DecoderParams::init(&cfg, 8, v, &mut rng).unwrap();
    let decoder = Decoder::new(cfg, 8).unwrap();
    (objective_from_plan(decoder, s.plan, &s.kspace, small_meg().pairs(), weights, false), params)
}
