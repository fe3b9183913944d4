//! Multi-resolution encoding for the per-level data-consistency loss.
//!
//! Level `k` (1-based, coarsest first) of `K` reconstructs on a grid of side
//! `n / 2^(K-k)` and is compared against the samples inside that grid's
//! Nyquist disc, `|k| <= k_max 2^(k-K)`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::nufft::NufftPlan;
use crate::ops::sense::group_arms;
use crate::simkit::spiral::Trajectory;
use crate::{Grid, C64};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    /// Every level keeps all samples inside its disc.
    #[default]
    Nested,
    /// Each level keeps only the annulus beyond the next coarser level.
    Disjoint,
}

#[derive(Clone, Debug)]
pub struct Level {
    pub grid: Grid,
    pub radius: f64,
    pub coils: Array3<C64>,
    /// Per arm group: sample indices into the repetition's concatenated samples.
    pub indices: Vec<Vec<usize>>,
    pub plans: Vec<NufftPlan>,
}

impl Level {
    pub fn coil(&self, i: usize) -> &[C64] {
        let n = self.grid.voxels();
        &self.coils.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug)]
pub struct LevelPlan {
    pub levels: Vec<Level>,
    pub rep_group: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    pub mode: SegmentMode,
}

impl LevelPlan {
    pub fn count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sides(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.grid.size).collect()
    }
}

/// Mean over `f x f` blocks of a square map.
pub fn block_average(map: &[C64], n: usize, f: usize) -> Vec<C64> {
    let m = n / f;
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![C64::default(); m * m];
    for r in 0..n {
        for c in 0..n {
            out[(r / f) * m + c / f] += map[r * n + c] * norm;
        }
    }
    out
}

/// Rescale coil maps so that the sum of squares is one wherever it is nonzero.
pub fn normalize_sos(coils: &mut Array3<C64>) {
    let (nc, h, w) = coils.dim();
    for r in 0..h {
        for c in 0..w {
            let sos: f64 = (0..nc).map(|i| coils[[i, r, c]].norm_sqr()).sum();
            if sos > 1e-300 {
                let s = 1.0 / sos.sqrt();
                for i in 0..nc {
                    coils[[i, r, c]] *= s;
                }
            }
        }
    }
}

pub fn build_level_plan(
    traj: &Trajectory,
    arms: &Array2<usize>,
    coils: &Array3<C64>,
    levels: usize,
    mode: SegmentMode,
) -> Result<LevelPlan> {
    let n = traj.grid.size;
    if levels == 0 || n % (1 << (levels - 1)) != 0 {
        return Err(Error::Invalid(format!("grid size {n} is not divisible by 2^{}", levels.saturating_sub(1))));
    }
    let (groups, rep_group) = group_arms(arms);
    let k_max = traj.k_max();
    let nc = coils.dim().0;
    let mut out = Vec::with_capacity(levels);
    for k in 1..=levels {
        let factor = 1usize << (levels - k);
        let side = n / factor;
        let grid = Grid::new(side, traj.grid.fov_m);
        let radius = k_max / factor as f64;
        let inner = if mode == SegmentMode::Disjoint && k > 1 { radius / 2.0 } else { -1.0 };

        let mut level_coils = Array3::zeros((nc, side, side));
        for i in 0..nc {
            let src: Vec<C64> = coils.index_axis(ndarray::Axis(0), i).iter().copied().collect();
            let avg = block_average(&src, n, factor);
            for (dst, v) in level_coils.index_axis_mut(ndarray::Axis(0), i).iter_mut().zip(avg) {
                *dst = v;
            }
        }
        normalize_sos(&mut level_coils);

        let scale = (factor * factor) as f64 / n as f64;
        let mut indices = Vec::with_capacity(groups.len());
        let mut plans = Vec::with_capacity(groups.len());
        for g in &groups {
            let coords = traj.arm_coords(g);
            let idx: Vec<usize> = coords
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                    r <= radius * (1.0 + 1e-12) && r > inner * (1.0 + 1e-12)
                })
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::EmptySegment { level: k });
            }
            let sub: Vec<[f64; 2]> = idx.iter().map(|&i| coords[i]).collect();
            plans.push(NufftPlan::with_scale(grid, &sub, scale)?);
            indices.push(idx);
        }
        out.push(Level { grid, radius, coils: level_coils, indices, plans });
    }
    Ok(LevelPlan { levels: out, rep_group, groups, mode })
}
