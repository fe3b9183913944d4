//! The pipeline stages behind each subcommand. Every stage reads one
//! container and writes another; upstream arrays needed later (images,
//! labels, support) are carried forward so each container is self-contained.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ndarray::{Array2, Ix2, Ix3, Ix4};
use serde::{Deserialize, Serialize};

use crate::cli::config::ExperimentConfig;
use crate::cli::container::{Container, Manifest, Provenance, Undersampling, Writer, CONFIG, SCHEMA_VERSION};
use crate::deeprec::{train, DecoderConfig, TrainError};
use crate::error::{Error, Result};
use crate::linrec::{cg_sense, subspace_recon, temporal_basis};
use crate::simkit::phantom::erode;
use crate::simkit::{make_spiral, simulate, undersample, Trajectory};
use crate::wavestiff::{self, median_filter, HarmonicField, Physics};
use crate::{nrmse, Grid, ImageSeries, KSpaceSet, C64};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const STATS: &str = "stats.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sense,
    Subspace,
    Deep,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sense => "sense",
            Method::Subspace => "subspace",
            Method::Deep => "deep",
        }
    }
}

fn manifest(
    kind: &str,
    method: Option<String>,
    grid: Grid,
    cfg: &ExperimentConfig,
    seed: u64,
    us: Undersampling,
) -> Manifest {
    Manifest {
        schema_version: SCHEMA_VERSION,
        kind: kind.into(),
        method,
        grid: grid.into(),
        arrays: Vec::new(),
        provenance: Provenance { seed, config_hash: cfg.hash(), tool_version: env!("CARGO_PKG_VERSION").into() },
        undersampling: us,
    }
}

fn undersampling(ks: &KSpaceSet) -> Undersampling {
    Undersampling {
        arm_count: ks.arm_count,
        arms_per_rep: ks.arms_per_rep(),
        arms: ks.arms.rows().into_iter().map(|r| r.to_vec()).collect(),
    }
}

fn load_config(c: &Container) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&c.text(CONFIG)?)
}

/// The container's configuration with the processing sections replaced by
/// `over`; the simulation section always describes the data on disk.
fn effective_config(c: &Container, over: Option<&ExperimentConfig>) -> Result<ExperimentConfig> {
    let base = load_config(c)?;
    Ok(match over {
        Some(o) => ExperimentConfig { simulation: base.simulation, ..o.clone() },
        None => base,
    })
}

fn expect_kind(c: &Container, kinds: &[&str]) -> Result<()> {
    if kinds.contains(&c.manifest.kind.as_str()) {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} holds a '{}' container; expected {}",
            c.dir.display(),
            c.manifest.kind,
            kinds.join(" or ")
        )))
    }
}

fn carry(src: &Container, w: &mut Writer, names: &[&str]) -> Result<()> {
    for name in names {
        if src.has(name) {
            w.stored(name, &src.read(name)?)?;
        }
    }
    for file in [LOSS_TRACE] {
        if let Ok(text) = src.text(file) {
            w.text(file, &text)?;
        }
    }
    Ok(())
}

fn support(c: &Container) -> Result<Array2<bool>> {
    Ok(c.real::<Ix2>("support")?.mapv(|v| v > 0.5))
}

fn series(c: &Container) -> Result<ImageSeries> {
    Ok(ImageSeries { grid: c.manifest.grid.grid(), frames: c.complex::<Ix3>("images")? })
}

fn bool_map(m: &Array2<bool>) -> Array2<f64> {
    m.mapv(|b| if b { 1.0 } else { 0.0 })
}

/// Simulates a phantom acquisition with every arm for every repetition.
pub fn cmd_phantom(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    let sim = simulate(&cfg.simulation)?;
    let t = &sim.truth;
    let m = manifest("phantom", None, t.grid, &cfg, cfg.simulation.seed, undersampling(&sim.kspace));
    let mut w = Writer::create(out, m)?;
    w.text(CONFIG, &cfg.to_json())?;
    w.complex("images", &sim.series().frames)?;
    w.complex("kspace", &sim.kspace.data)?;
    w.complex("coil_maps", &t.coil_maps)?;
    w.complex("displacement", &sim.wave.displacement)?;
    w.real("stiffness", &t.stiffness_map)?;
    w.real("loss_modulus", &t.loss_map)?;
    w.real("magnitude", &t.magnitude_map)?;
    w.real("labels", &t.labels.mapv(f64::from))?;
    w.real("support", &bool_map(&t.support()))?;
    w.commit()
}

fn trajectory(cfg: &ExperimentConfig) -> Result<Trajectory> {
    let s = &cfg.simulation;
    make_spiral(s.arm_count, s.samples_per_arm, s.phantom.fov_m, s.phantom.grid_size)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    decoder: DecoderConfig,
    grid_size: usize,
    scale: f64,
    /// Flattened decoder weights followed by the latents.
    params: Vec<f64>,
}

/// Retrospectively undersamples a phantom container and reconstructs it.
pub fn cmd_recon(
    method: Method,
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    arms: Option<usize>,
    over: Option<&ExperimentConfig>,
) -> Result<PathBuf> {
    let src = Container::open(data)?;
    expect_kind(&src, &["phantom"])?;
    let mut cfg = effective_config(&src, over)?;
    if let Some(s) = seed {
        cfg.recon.train.seed = s;
    }
    let arms = arms.unwrap_or(cfg.recon.arms_per_rep);
    cfg.recon.arms_per_rep = arms;
    let traj = trajectory(&cfg)?;
    let us = &src.manifest.undersampling;
    let full = KSpaceSet {
        data: src.complex::<Ix4>("kspace")?,
        arms: Array2::from_shape_fn((us.arms.len(), us.arms_per_rep), |(t, j)| us.arms[t][j]),
        arm_count: us.arm_count,
        clean: None,
    };
    let ks = undersample(&full, arms)?;
    let coils = src.complex::<Ix3>("coil_maps")?;
    let rc = &cfg.recon;
    let m = manifest("recon", Some(method.name().into()), traj.grid, &cfg, rc.train.seed, undersampling(&ks));
    let mut w = Writer::create(out, m)?;
    w.text(CONFIG, &cfg.to_json())?;
    let images = match method {
        Method::Sense => cg_sense(&ks, &coils, &traj, rc.cg)?.0,
        Method::Subspace => {
            let basis = temporal_basis(&ks, &traj, &coils, rc.rank, rc.basis)?;
            subspace_recon(&ks, &coils, &traj, &basis, rc.subspace)?.series
        }
        Method::Deep => match train(&ks, &coils, &traj, &cfg.simulation.meg, &rc.decoder, &rc.train) {
            Ok(o) => {
                let ckpt = Checkpoint {
                    config_hash: cfg.hash(),
                    decoder: rc.decoder.clone(),
                    grid_size: traj.grid.size,
                    scale: o.scale,
                    params: o.params.flatten(),
                };
                w.text(CHECKPOINT, &serde_json::to_string(&ckpt)?)?;
                w.text(LOSS_TRACE, &o.trace.to_csv())?;
                o.series
            }
            Err(TrainError::Setup(e)) => return Err(e),
            Err(TrainError::Abort(a)) => {
                let ckpt = Checkpoint {
                    config_hash: cfg.hash(),
                    decoder: rc.decoder.clone(),
                    grid_size: traj.grid.size,
                    scale: f64::NAN,
                    params: a.checkpoint.flatten(),
                };
                w.text(CHECKPOINT, &serde_json::to_string(&ckpt)?)?;
                w.text(LOSS_TRACE, &a.trace.to_csv())?;
                let failed = out.with_file_name(format!(
                    "{}.failed",
                    out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
                ));
                w.salvage(&failed)?;
                log::error!("training diverged; last good checkpoint kept in {}", failed.display());
                return Err((*a).into());
            }
        },
    };
    w.complex("images", &images.frames)?;
    carry(&src, &mut w, &["labels", "support"])?;
    w.commit()
}

/// Phase processing of a reconstruction into first-harmonic displacement.
pub fn cmd_wave(input: &Path, out: &Path, over: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let src = Container::open(input)?;
    expect_kind(&src, &["phantom", "recon"])?;
    let cfg = effective_config(&src, over)?;
    let s = series(&src)?;
    let mask = support(&src)?;
    let d = wavestiff::extract_displacement(&s, &cfg.simulation.meg, &mask, &cfg.wave)?;
    let m = Manifest { kind: "wave".into(), arrays: Vec::new(), ..src.manifest.clone() };
    let mut w = Writer::create(
        out,
        Manifest { provenance: Provenance { config_hash: cfg.hash(), ..m.provenance.clone() }, ..m },
    )?;
    w.text(CONFIG, &cfg.to_json())?;
    w.complex("displacement", &d.harmonic.u)?;
    w.real("phase", &d.phases)?;
    w.real("phase_wrapped", &d.wrapped.phases)?;
    carry(&src, &mut w, &["images", "labels", "support"])?;
    w.commit()
}

#[derive(Debug, Serialize)]
struct RegionStat {
    label: u8,
    voxels: usize,
    median_pa: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Stats {
    valid_fraction: f64,
    regions: Vec<RegionStat>,
}

fn labels(c: &Container) -> Result<Array2<u8>> {
    Ok(c.real::<Ix2>("labels")?.mapv(|v| v.round() as u8))
}

/// Algebraic inversion of a displacement container.
pub fn cmd_invert(input: &Path, out: &Path, over: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let src = Container::open(input)?;
    expect_kind(&src, &["wave"])?;
    let cfg = effective_config(&src, over)?;
    let mask = support(&src)?;
    let field = HarmonicField {
        u: src.complex::<Ix3>("displacement")?,
        spacing_m: src.manifest.grid.voxel_m,
        mask: mask.clone(),
    };
    let physics = Physics {
        frequency_hz: cfg.simulation.vibration.frequency_hz,
        density_kg_m3: cfg.simulation.phantom.density_kg_m3,
    };
    let modulus = wavestiff::invert_aide(&field, physics.omega(), physics.density_kg_m3, cfg.wave.stencil)?;
    let stiff = wavestiff::stiffness(&modulus);
    let lab = labels(&src)?;
    let regions = (1..=lab.iter().copied().max().unwrap_or(0))
        .map(|l| {
            let m = Array2::from_shape_fn(lab.dim(), |ix| lab[ix] == l && stiff.valid[ix]);
            RegionStat {
                label: l,
                voxels: m.iter().filter(|&&b| b).count(),
                median_pa: wavestiff::median_stiffness(&stiff.mu, &m).ok(),
            }
        })
        .collect();
    let in_support = mask.iter().filter(|&&b| b).count().max(1);
    let valid = stiff.valid.iter().filter(|&&b| b).count();
    let stats = Stats { valid_fraction: valid as f64 / in_support as f64, regions };
    let m = Manifest { kind: "invert".into(), arrays: Vec::new(), ..src.manifest.clone() };
    let mut w = Writer::create(
        out,
        Manifest { provenance: Provenance { config_hash: cfg.hash(), ..m.provenance.clone() }, ..m },
    )?;
    w.text(CONFIG, &cfg.to_json())?;
    w.text(STATS, &serde_json::to_string_pretty(&stats)?)?;
    w.complex("modulus", &modulus.g)?;
    w.real("stiffness", &stiff.mu)?;
    w.real("stiffness_filtered", &median_filter(&stiff.mu, 3))?;
    w.real("valid", &bool_map(&stiff.valid))?;
    carry(&src, &mut w, &["images", "labels", "support"])?;
    w.commit()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NrmseReport {
    pub aggregate: f64,
    pub per_repetition: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub label: u8,
    pub erosion_voxels: usize,
    pub voxels: usize,
    pub truth_pa: f64,
    pub median_pa: Option<f64>,
    pub delta_pa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rows: usize,
    pub first_total: f64,
    pub last_total: f64,
    pub last_dc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: Option<String>,
    pub nrmse: Option<NrmseReport>,
    pub stiffness: Vec<RegionReport>,
    pub valid_fraction: Option<f64>,
    pub loss_trace: Option<TraceSummary>,
}

fn trace_summary(csv: &str) -> Option<TraceSummary> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (dc, total) = (col("dc")?, col("total")?);
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').filter_map(|x| x.parse().ok()).collect()).collect();
    let (first, last) = (rows.first()?, rows.last()?);
    Some(TraceSummary { rows: rows.len(), first_total: first[total], last_total: last[total], last_dc: last[dc] })
}

fn lower_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Compares any container holding images and/or stiffness to the phantom truth.
pub fn evaluate(truth_dir: &Path, input: &Path) -> Result<Report> {
    let truth = Container::open(truth_dir)?;
    expect_kind(&truth, &["phantom"])?;
    let est = Container::open(input)?;
    let cfg = load_config(&truth)?;
    let eval_cfg = load_config(&est).map(|c| c.eval).unwrap_or(cfg.eval.clone());

    let nrmse_report = if est.has("images") {
        let (a, b) = (truth.complex::<Ix3>("images")?, est.complex::<Ix3>("images")?);
        if a.dim() != b.dim() {
            return Err(Error::Data(format!("image shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
        }
        let per = a.outer_iter().zip(b.outer_iter()).map(|(x, y)| nrmse(x.iter(), y.iter())).collect();
        Some(NrmseReport { aggregate: nrmse(a.iter(), b.iter()), per_repetition: per })
    } else {
        None
    };

    let mut stiffness = Vec::new();
    let mut valid_fraction = None;
    if est.has("stiffness") {
        let lab = labels(&truth)?;
        let mu_true = truth.real::<Ix2>("stiffness")?;
        let loss_true = truth.real::<Ix2>("loss_modulus")?;
        let mu = est.real::<Ix2>("stiffness")?;
        let valid = if est.has("valid") { est.real::<Ix2>("valid")?.mapv(|v| v > 0.5) } else { lab.mapv(|l| l > 0) };
        let inside = lab.iter().filter(|&&l| l > 0).count().max(1);
        valid_fraction =
            Some(valid.iter().zip(lab.iter()).filter(|(&v, &l)| v && l > 0).count() as f64 / inside as f64);
        let physics = Physics {
            frequency_hz: cfg.simulation.vibration.frequency_hz,
            density_kg_m3: cfg.simulation.phantom.density_kg_m3,
        };
        for l in 1..=lab.iter().copied().max().unwrap_or(0) {
            let region = lab.mapv(|x| x == l);
            let pick = |m: &Array2<f64>, mask: &Array2<bool>| {
                m.iter().zip(mask.iter()).filter(|(_, &b)| b).map(|(&v, _)| v).collect::<Vec<_>>()
            };
            let truth_mu = lower_median(pick(&mu_true, &region)).ok_or(Error::EmptyMask)?;
            let erosion = match eval_cfg.erosion_voxels {
                Some(e) => e,
                None => {
                    let g = C64::new(truth_mu, lower_median(pick(&loss_true, &region)).unwrap_or(0.0));
                    let k = crate::simkit::wave::wavenumber(physics.omega(), physics.density_kg_m3, g).re;
                    (std::f64::consts::TAU / k / truth.manifest.grid.voxel_m).ceil() as usize
                }
            };
            let core = erode(&region, erosion);
            let truth_pa = lower_median(pick(&mu_true, &core)).unwrap_or(truth_mu);
            let scored = Array2::from_shape_fn(core.dim(), |ix| core[ix] && valid[ix]);
            let median_pa = lower_median(pick(&mu, &scored));
            stiffness.push(RegionReport {
                label: l,
                erosion_voxels: erosion,
                voxels: scored.iter().filter(|&&b| b).count(),
                truth_pa,
                median_pa,
                delta_pa: median_pa.map(|m| m - truth_pa),
            });
        }
    }
    Ok(Report {
        method: est.manifest.method.clone(),
        nrmse: nrmse_report,
        stiffness,
        valid_fraction,
        loss_trace: est.text(crate::cli::commands::LOSS_TRACE).ok().and_then(|t| trace_summary(&t)),
    })
}

pub fn report_json(r: &Report) -> String {
    serde_json::to_string_pretty(r).expect("report serializes") + "\n"
}

/// Writes the evaluation report (via a temporary file and rename).
pub fn cmd_eval(truth_dir: &Path, input: &Path, report: &Path) -> Result<Report> {
    let r = evaluate(truth_dir, input)?;
    let tmp = report.with_extension("json.partial");
    std::fs::write(&tmp, report_json(&r))?;
    std::fs::rename(&tmp, report)?;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// 1st to 99th percentile.
    Auto,
    Range(f64, f64),
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Window::Auto);
        }
        let parts: Vec<&str> = s.split(',').collect();
        match parts.as_slice() {
            [lo, hi] => {
                let lo: f64 = lo.trim().parse().map_err(|e| format!("bad window: {e}"))?;
                let hi: f64 = hi.trim().parse().map_err(|e| format!("bad window: {e}"))?;
                if hi < lo {
                    return Err("window upper bound below lower bound".into());
                }
                Ok(Window::Range(lo, hi))
            }
            _ => Err("window must be 'auto' or 'lo,hi'".into()),
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let i = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[i.min(sorted.len() - 1)]
}

/// Linear window/level mapping to 8 bits; a degenerate window maps to mid gray.
pub fn to_gray(values: &Array2<f64>, window: Window) -> Vec<u8> {
    let (lo, hi) = match window {
        Window::Range(lo, hi) => (lo, hi),
        Window::Auto => {
            let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
            if v.is_empty() {
                (0.0, 0.0)
            } else {
                v.sort_by(f64::total_cmp);
                (percentile(&v, 1.0), percentile(&v, 99.0))
            }
        }
    };
    values
        .iter()
        .map(|&x| if !(hi > lo) { 128 } else { (((x - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8 })
        .collect()
}

/// Renders one 2-D slice of a stored array; `array` is `<container>/<name>`
/// and complex arrays are shown as magnitude. `frame` indexes the flattened
/// leading dimensions.
pub fn cmd_plot(array: &Path, png: &Path, window: Window, frame: usize) -> Result<()> {
    let dir = array.parent().unwrap_or(Path::new("."));
    let name = array
        .file_stem()
        .ok_or_else(|| Error::Invalid(format!("bad array path {}", array.display())))?
        .to_string_lossy();
    let c = Container::open(dir)?;
    let values: ndarray::ArrayD<f64> = match c.read(&name)? {
        crate::cli::container::Stored::Complex(a) => a.mapv(|z| z.norm()),
        crate::cli::container::Stored::Real(a) => a.mapv(f64::from),
    };
    let shape = values.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::Data(format!("array {name} is not an image")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let frames = values.len() / (h * w).max(1);
    if frame >= frames {
        return Err(Error::Invalid(format!("frame {frame} out of range (array holds {frames})")));
    }
    let flat: Vec<f64> = values.iter().copied().skip(frame * h * w).take(h * w).collect();
    let img = Array2::from_shape_vec((h, w), flat).expect("slice size");
    let gray = image::GrayImage::from_raw(w as u32, h as u32, to_gray(&img, window)).expect("buffer size");
    let tmp = png.with_extension("png.partial");
    gray.save_with_format(&tmp, image::ImageFormat::Png).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::rename(&tmp, png)?;
    Ok(())
}
