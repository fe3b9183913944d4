//! Self-supervised training of the decoder and latents from undersampled
//! k-space: multi-level data consistency plus magnitude, wave-TV and latent
//! regularisers, optimised with Adam on the full repetition batch.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deeprec::decoder::{Decoder, DecoderConfig, DecoderParams, LevelImages};
use crate::deeprec::losses::{loss_dc, loss_latent, loss_magnitude, loss_wave_tv, LevelData, Pairs};
use crate::error::{Error, Result};
use crate::linrec::{temporal_basis, BasisOptions};
use crate::ops::{build_level_plan, Encoding, LevelPlan, SegmentMode};
use crate::simkit::{MegSpec, Trajectory};
use crate::{ImageSeries, KSpaceSet, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Magnitude-similarity weight, relative to the initial DC loss.
    pub lambda_magn: f64,
    /// Wave-TV weight, relative to the initial DC loss.
    pub lambda_wave: f64,
    /// Latent-energy weight, relative to the initial DC loss.
    pub lambda_latent: f64,
    /// Scale each weight by `DC(0) / R(0)` so it is a fraction of the data term.
    pub normalize_weights: bool,
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Magnitude-loss pairs per iteration; `None` uses all pairs.
    pub pair_budget: Option<usize>,
    pub isotropic_tv: bool,
    pub segment_mode: SegmentMode,
    pub basis: BasisOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_magn: 1e-3,
            lambda_wave: 1e-3,
            lambda_latent: 1e-6,
            normalize_weights: true,
            iterations: 500,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            pair_budget: None,
            isotropic_tv: false,
            segment_mode: SegmentMode::Nested,
            basis: BasisOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_magn, self.lambda_wave, self.lambda_latent];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Invalid("regulariser weights must be non-negative".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Invalid("invalid Adam settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub dc: f64,
    pub magn: f64,
    pub wave: f64,
    pub latent: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.dc, self.magn, self.wave, self.latent, self.total].iter().all(|x| x.is_finite())
    }
}

/// Effective weights of the three regularisers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub magn: f64,
    pub wave: f64,
    pub latent: f64,
}

/// The training objective bound to one dataset.
pub struct Objective {
    pub decoder: Decoder,
    pub plan: LevelPlan,
    pub data: LevelData,
    pub pairs: Vec<(usize, usize)>,
    pub weights: Weights,
    pub magn_pairs: Pairs,
    pub isotropic_tv: bool,
}

impl Objective {
    fn losses(
        &self,
        p: &DecoderParams,
        images: &LevelImages,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossTerms, LevelImages)> {
        let (dc, mut grads) = loss_dc(&self.plan, &self.data, images);
        let (magn, gm) = loss_magnitude(images, self.magn_pairs, rng);
        let finest = images.len() - 1;
        let (wave, gw) = if self.pairs.is_empty() {
            (0.0, Array3::zeros(images[finest].dim()))
        } else {
            loss_wave_tv(&images[finest], &self.pairs, self.isotropic_tv)?
        };
        let (latent, _) = loss_latent(&p.v);
        let w = self.weights;
        for (g, m) in grads.iter_mut().zip(&gm) {
            g.zip_mut_with(m, |a, b| *a += b * w.magn);
        }
        grads[finest].zip_mut_with(&gw, |a, b| *a += b * w.wave);
        let total = dc + w.magn * magn + w.wave * wave + w.latent * latent;
        Ok((LossTerms { dc, magn, wave, latent, total }, grads))
    }

    /// Loss terms at `p`; `noise` switches on the training-time noise layers.
    pub fn value(&self, p: &DecoderParams, noise: Option<&mut ChaCha8Rng>) -> Result<LossTerms> {
        let mut noise = noise;
        let (images, _) = self.decoder.forward(p, noise.as_deref_mut());
        Ok(self.losses(p, &images, noise)?.0)
    }

    pub fn value_and_grad(
        &self,
        p: &DecoderParams,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossTerms, DecoderParams)> {
        let mut noise = noise;
        let (images, cache) = self.decoder.forward(p, noise.as_deref_mut());
        let (terms, grads) = self.losses(p, &images, noise)?;
        let mut g = self.decoder.backward(p, &cache, &grads);
        g.v.zip_mut_with(&p.v, |a, b| *a += b * (2.0 * self.weights.latent));
        Ok((terms, g))
    }
}

/// Adam on a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((x, &g), m), v) in x.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(flatten)]
    pub terms: LossTerms,
}

/// Per-iteration loss terms. Rows `0..iterations` are the training-mode
/// losses before each step; the last row is the noise-free evaluation of
/// the final parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,dc,magn,wave,latent,total\n");
        for r in &self.rows {
            let t = r.terms;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                r.iteration, t.dc, t.magn, t.wave, t.latent, t.total
            ));
        }
        out
    }

    pub fn first(&self) -> Option<&TraceRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: DecoderParams,
    /// Finest-level decode with noise off, in the units of the input data.
    pub series: ImageSeries,
    pub trace: LossTrace,
    pub weights: Weights,
    /// Data were divided by this factor for training.
    pub scale: f64,
}

/// Training stopped on a non-finite loss.
#[derive(Clone, Debug)]
pub struct TrainAbort {
    pub iteration: usize,
    /// Last parameters with a finite loss.
    pub checkpoint: DecoderParams,
    pub trace: LossTrace,
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        Error::NonFinite { iteration: a.iteration }
    }
}

/// Robust image scale of the data: 99th percentile of the density-compensated
/// adjoint magnitude, corrected for the fraction of arms per repetition.
pub fn data_scale(kspace: &KSpaceSet, coils: &Array3<C64>, traj: &Trajectory) -> Result<f64> {
    let enc = Encoding::new(traj, &kspace.arms, coils)?;
    let mut mags = Vec::new();
    for t in 0..kspace.reps() {
        let samples: Vec<Vec<C64>> = (0..kspace.coils()).map(|i| kspace.samples(t, i)).collect();
        mags.extend(enc.adjoint(t, &samples, true).iter().map(|z| z.norm()));
    }
    mags.sort_by(f64::total_cmp);
    let p99 = mags[((mags.len() - 1) as f64 * 0.99).round() as usize];
    let s = p99 * traj.arm_count as f64 / kspace.arms_per_rep() as f64;
    Ok(if s > 0.0 && s.is_finite() { s } else { 1.0 })
}

/// Everything needed to start training: objective, initial parameters and
/// the data scale.
pub fn prepare(
    kspace: &KSpaceSet,
    coils: &Array3<C64>,
    traj: &Trajectory,
    meg: &MegSpec,
    dcfg: &DecoderConfig,
    tcfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Objective, DecoderParams, f64)> {
    tcfg.validate()?;
    meg.check_pairs(kspace.reps())?;
    let decoder = Decoder::new(dcfg.clone(), traj.grid.size)?;
    let basis = temporal_basis(kspace, traj, coils, dcfg.latent, tcfg.basis)?;
    let s1 = basis.singular_values.first().copied().unwrap_or(1.0);
    let v0 = if s1 > 0.0 { basis.v.mapv(|z| z / s1) } else { basis.v.clone() };
    let params = DecoderParams::init(dcfg, traj.grid.size, v0, rng)?;
    log::info!("decoder has {} network parameters", params.theta_len());

    let plan = build_level_plan(traj, &kspace.arms, coils, dcfg.levels, tcfg.segment_mode)?;
    let scale = data_scale(kspace, coils, traj)?;
    let data = LevelData::new(&plan, kspace, 1.0 / scale);
    let mut obj = Objective {
        decoder,
        plan,
        data,
        pairs: meg.pairs(),
        weights: Weights::default(),
        magn_pairs: tcfg.pair_budget.map_or(Pairs::All, Pairs::Sampled),
        isotropic_tv: tcfg.isotropic_tv,
    };
    let raw = Weights { magn: tcfg.lambda_magn, wave: tcfg.lambda_wave, latent: tcfg.lambda_latent };
    obj.weights = if tcfg.normalize_weights {
        let t0 = obj.value(&params, None)?;
        let norm = |l: f64, r: f64| if r > 0.0 { l * t0.dc / r } else { l };
        Weights { magn: norm(raw.magn, t0.magn), wave: norm(raw.wave, t0.wave), latent: norm(raw.latent, t0.latent) }
    } else {
        raw
    };
    Ok((obj, params, scale))
}

/// Runs exactly `iterations` Adam steps from `params`.
pub fn optimize(
    obj: &Objective,
    params: DecoderParams,
    tcfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(DecoderParams, LossTrace), TrainAbort> {
    let mut p = params;
    let mut flat = p.flatten();
    let mut adam = Adam::new(flat.len(), tcfg);
    let mut trace = LossTrace::default();
    // Parameters of the most recent finite loss evaluation.
    let mut last_good = p.clone();
    for it in 0..tcfg.iterations {
        let step = obj.value_and_grad(&p, Some(rng)).ok().and_then(|(terms, g)| {
            let g = g.flatten();
            (terms.is_finite() && g.iter().all(|x| x.is_finite())).then_some((terms, g))
        });
        let Some((terms, g)) = step else {
            log::error!("non-finite loss at iteration {it}");
            return Err(TrainAbort { iteration: it, checkpoint: last_good, trace });
        };
        last_good.clone_from(&p);
        trace.rows.push(TraceRow { iteration: it, terms });
        if it % 50 == 0 {
            log::debug!("iter {it}: total {:.4e} dc {:.4e}", terms.total, terms.dc);
        }
        adam.step(&mut flat, &g);
        p.load(&flat);
    }
    match obj.value(&p, None) {
        Ok(terms) if terms.is_finite() => {
            trace.rows.push(TraceRow { iteration: tcfg.iterations, terms });
            Ok((p, trace))
        }
        _ => Err(TrainAbort { iteration: tcfg.iterations, checkpoint: last_good, trace }),
    }
}

/// Trains the decoder on one acquisition and returns the noise-free decode.
pub fn train(
    kspace: &KSpaceSet,
    coils: &Array3<C64>,
    traj: &Trajectory,
    meg: &MegSpec,
    dcfg: &DecoderConfig,
    tcfg: &TrainConfig,
) -> std::result::Result<TrainOutput, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let (obj, params, scale) = prepare(kspace, coils, traj, meg, dcfg, tcfg, &mut rng)?;
    let (params, trace) = optimize(&obj, params, tcfg, &mut rng)?;
    let finest = obj.decoder.decode(&params);
    let mut series = ImageSeries::zeros(traj.grid, kspace.reps());
    series.frames.assign(&finest.mapv(|z| z * scale));
    Ok(TrainOutput { params, series, trace, weights: obj.weights, scale })
}

/// Setup failure or numerical abort.
#[derive(Debug)]
pub enum TrainError {
    Setup(Error),
    Abort(Box<TrainAbort>),
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Setup(e)
    }
}

impl From<TrainAbort> for TrainError {
    fn from(a: TrainAbort) -> Self {
        TrainError::Abort(Box::new(a))
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Setup(e) => e,
            TrainError::Abort(a) => (*a).into(),
        }
    }
}

/// Largest relative error between analytic and central-difference partial
/// derivatives of the (noise-free) objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: Vec<(usize, f64, f64)>,
}

/// Probes `probe_count` random real parameter components with step `h`.
///
/// The relative error is `|a - fd| / max(|a|, |fd|, floor)`, where the floor
/// is `1e-6` of the largest analytic partial so that components with a
/// vanishing derivative do not dominate.
pub fn grad_check(
    obj: &Objective,
    p: &DecoderParams,
    probe_count: usize,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let (_, g) = obj.value_and_grad(p, None)?;
    let g = g.flatten();
    let floor = 1e-6 * g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let base = p.flatten();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = p.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, probes: Vec::with_capacity(probe_count) };
    for _ in 0..probe_count {
        let i = rng.random_range(0..base.len());
        let mut x = base.clone();
        x[i] = base[i] + h;
        q.load(&x);
        let lp = obj.value(&q, None)?.total;
        x[i] = base[i] - h;
        q.load(&x);
        let lm = obj.value(&q, None)?.total;
        let fd = (lp - lm) / (2.0 * h);
        let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(floor).max(f64::MIN_POSITIVE);
        report.max_rel_err = report.max_rel_err.max(err);
        report.probes.push((i, g[i], fd));
    }
    Ok(report)
}

/// Builds an objective directly from a level plan, for tests and tooling.
pub fn objective_from_plan(
    decoder: Decoder,
    plan: LevelPlan,
    kspace: &KSpaceSet,
    pairs: Vec<(usize, usize)>,
    weights: Weights,
    isotropic_tv: bool,
) -> Objective {
    let data = LevelData::new(&plan, kspace, 1.0);
    Objective { decoder, plan, data, pairs, weights, magn_pairs: Pairs::All, isotropic_tv }
}
