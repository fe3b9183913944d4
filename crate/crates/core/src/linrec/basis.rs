use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linrec::cg::{conjugate_gradient, CgOptions};
use crate::ops::levels::{block_average, normalize_sos};
use crate::ops::{sense_adjoint, sense_normal, NufftPlan};
use crate::simkit::Trajectory;
use crate::{Grid, ImageSeries, KSpaceSet, C64};

/// Temporal basis of the subspace model; row `t` is `v_t` and the model is
/// `rho_t = U v_t^H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMatrix {
    pub v: Array2<C64>,
    pub singular_values: Vec<f64>,
}

impl LatentMatrix {
    pub fn order(&self) -> usize {
        self.v.ncols()
    }

    pub fn reps(&self) -> usize {
        self.v.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisOptions {
    /// Navigator grid side.
    pub navigator_size: usize,
    /// Centre radius as a fraction of `k_max`.
    pub center_fraction: f64,
    /// Scale right singular vectors by their singular values.
    pub energy_weighted: bool,
    pub method: NavigatorMethod,
    /// CG iterations of the SENSE navigator.
    pub cg_iterations: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavigatorMethod {
    /// Coil-combined least-squares SENSE image on the navigator grid.
    #[default]
    Sense,
    /// Per-coil density-compensated gridding, coils stacked as rows.
    Gridding,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            navigator_size: 16,
            center_fraction: 0.125,
            energy_weighted: true,
            method: NavigatorMethod::Sense,
            cg_iterations: 10,
        }
    }
}

pub(crate) fn to_dmatrix(m: &Array2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub fn singular_values(m: &Array2<C64>) -> Vec<f64> {
    to_dmatrix(m).singular_values().iter().copied().collect()
}

/// Singular values of the series' Casorati matrix, largest first.
pub fn casorati_singular_values(series: &ImageSeries) -> Vec<f64> {
    let mut s = singular_values(&series.casorati());
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Estimates the temporal basis from the k-space centre.
///
/// Each repetition's samples inside `center_fraction * k_max` form a
/// low-resolution navigator image on a small grid; the navigators of all
/// repetitions form a Casorati matrix whose leading right singular vectors
/// give `V`. With [`NavigatorMethod::Sense`] the navigator is a short CG-SENSE
/// solve with block-averaged coil maps, which keeps the arm-dependent
/// aliasing of rotating spiral arms out of the basis; with
/// [`NavigatorMethod::Gridding`] it is the per-coil density-compensated
/// adjoint.
pub fn temporal_basis(
    kspace: &KSpaceSet,
    traj: &Trajectory,
    coils: &Array3<C64>,
    order: usize,
    opts: BasisOptions,
) -> Result<LatentMatrix> {
    let reps = kspace.reps();
    let nc = kspace.coils();
    // Small grids use their own resolution as the navigator.
    let nav_size = opts.navigator_size.min(traj.grid.size);
    let nav_grid = Grid::new(nav_size, traj.grid.fov_m);
    let radius = (opts.center_fraction * traj.k_max()).min(nav_grid.k_max());
    let nav_vox = nav_grid.voxels();
    let n = traj.grid.size;
    let nav_coils = match opts.method {
        NavigatorMethod::Sense => {
            if n % nav_size != 0 {
                return Err(Error::Invalid(format!("navigator size {nav_size} does not divide grid {n}")));
            }
            let f = n / nav_size;
            let mut out = Array3::zeros((nc, nav_size, nav_size));
            for i in 0..nc {
                let src: Vec<C64> = coils.index_axis(Axis(0), i).iter().copied().collect();
                for (d, v) in out.index_axis_mut(Axis(0), i).iter_mut().zip(block_average(&src, n, f)) {
                    *d = v;
                }
            }
            normalize_sos(&mut out);
            Some(out)
        }
        NavigatorMethod::Gridding => None,
    };
    let rows = if nav_coils.is_some() { nav_vox } else { nav_vox * nc };

    let mut casorati = Array2::<C64>::zeros((rows, reps));
    for t in 0..reps {
        let arms = kspace.arm_list(t);
        let coords = traj.arm_coords(&arms);
        let dcf = traj.arm_dcf(&arms);
        let keep: Vec<usize> = (0..coords.len()).filter(|&i| coords[i][0].hypot(coords[i][1]) <= radius).collect();
        if keep.len() < order {
            return Err(Error::Invalid(format!(
                "repetition {t} has {} centre samples, fewer than the model order {order}",
                keep.len()
            )));
        }
        let sub: Vec<[f64; 2]> = keep.iter().map(|&i| coords[i]).collect();
        let plan = NufftPlan::new(nav_grid, &sub)?;
        let ys: Vec<Vec<C64>> = (0..nc)
            .map(|coil| {
                let all = kspace.samples(t, coil);
                keep.iter().map(|&i| all[i]).collect()
            })
            .collect();
        match &nav_coils {
            Some(c) => {
                let rhs = sense_adjoint(&ys, c, &plan, None);
                let cg = CgOptions { max_iter: opts.cg_iterations, tol: 1e-6 };
                let (img, _) = conjugate_gradient(|x| sense_normal(x, c, &plan), &rhs, cg);
                for (v, z) in img.into_iter().enumerate() {
                    casorati[[v, t]] = z;
                }
            }
            None => {
                let w: Vec<f64> = keep.iter().map(|&i| dcf[i]).collect();
                for (coil, y) in ys.iter().enumerate() {
                    let img = plan.adjoint(y, Some(&w));
                    for (v, z) in img.into_iter().enumerate() {
                        casorati[[coil * nav_vox + v, t]] = z;
                    }
                }
            }
        }
    }
    basis_from_casorati(&casorati, order, opts.energy_weighted)
}

/// Leading right singular vectors of a Casorati matrix, as rows `v_t`.
pub fn basis_from_casorati(casorati: &Array2<C64>, order: usize, energy_weighted: bool) -> Result<LatentMatrix> {
    let reps = casorati.ncols();
    let svd = to_dmatrix(casorati).svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > s1 * 1e-13 && s > 0.0).count();
    if order > rank {
        return Err(Error::RankUnavailable { requested: order, available: rank });
    }
    // casorati = U S W^H with W = v_t^H; column t is sum_l U_l s_l conj(W[t,l]),
    // so v_t[l] = s_l W[t,l] gives rho_t = U v_t^H.
    let v = Array2::from_shape_fn((reps, order), |(t, l)| {
        let w = v_t[(idx[l], t)].conj();
        if energy_weighted {
            w * sv[l]
        } else {
            w
        }
    });
    Ok(LatentMatrix { v, singular_values: sv })
}
