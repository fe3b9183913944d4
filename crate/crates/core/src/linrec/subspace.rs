use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linrec::basis::LatentMatrix;
use crate::linrec::cg::{conjugate_gradient, CgOptions, CgReport};
use crate::ops::Encoding;
use crate::simkit::Trajectory;
use crate::{ImageSeries, KSpaceSet, C64};

/// Spatial coefficients `U` (voxels x L).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialCoeffs {
    pub u: Array2<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceOptions {
    /// Tikhonov weight; `None` selects `1e-6` times the largest eigenvalue of
    /// the normal operator.
    pub lambda: Option<f64>,
    pub cg: CgOptions,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        Self { lambda: None, cg: CgOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SubspaceResult {
    pub coeffs: SpatialCoeffs,
    pub series: ImageSeries,
    pub lambda: f64,
    pub report: CgReport,
}

/// `rho_t = U conj(v_t)` for every repetition.
pub fn synthesize(u: &Array2<C64>, v: &Array2<C64>, grid: crate::Grid) -> ImageSeries {
    let reps = v.nrows();
    let mut out = ImageSeries::zeros(grid, reps);
    for t in 0..reps {
        let frame = out.frame_slice_mut(t);
        for (l, vl) in v.row(t).iter().enumerate() {
            let w = vl.conj();
            for (f, x) in frame.iter_mut().zip(u.column(l).iter()) {
                *f += x * w;
            }
        }
    }
    out
}

struct Normal<'a> {
    enc: &'a Encoding,
    v: &'a Array2<C64>,
    voxels: usize,
}

impl Normal<'_> {
    /// `N(U)[:, l] = sum_t G_t(U conj(v_t)) v_t[l]` with `G_t` the SENSE normal operator.
    fn apply(&self, u: &[C64], lambda: f64) -> Vec<C64> {
        let order = self.v.ncols();
        let n = self.voxels;
        let mut out: Vec<C64> = u.iter().map(|x| x * lambda).collect();
        let mut rho = vec![C64::default(); n];
        for t in 0..self.v.nrows() {
            rho.iter_mut().for_each(|x| *x = C64::default());
            for l in 0..order {
                let w = self.v[[t, l]].conj();
                for (r, x) in rho.iter_mut().zip(&u[l * n..(l + 1) * n]) {
                    *r += x * w;
                }
            }
            let g = self.enc.normal(t, &rho);
            for l in 0..order {
                let w = self.v[[t, l]];
                for (o, x) in out[l * n..(l + 1) * n].iter_mut().zip(&g) {
                    *o += x * w;
                }
            }
        }
        out
    }
}

/// Largest eigenvalue of the subspace normal operator by power iteration.
fn normal_norm(op: &Normal<'_>, len: usize, iters: usize) -> f64 {
    let mut x: Vec<C64> = (0..len)
        .map(|i| C64::new(((i * 7919) % 101) as f64 / 101.0 + 0.5, ((i * 104_729) % 97) as f64 / 97.0 - 0.5))
        .collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let nrm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        x.iter_mut().for_each(|z| *z /= nrm);
        let y = op.apply(&x, 0.0);
        lambda = x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum();
        x = y;
    }
    lambda
}

/// Fits `U` with `V` fixed:
/// `min_U sum_t sum_i ||d_{t,i} - F S_i U v_t^H||^2 + lambda ||U||^2`.
pub fn subspace_recon(
    kspace: &KSpaceSet,
    coils: &Array3<C64>,
    traj: &Trajectory,
    basis: &LatentMatrix,
    opts: SubspaceOptions,
) -> Result<SubspaceResult> {
    let enc = Encoding::new(traj, &kspace.arms, coils)?;
    let n = traj.grid.voxels();
    let order = basis.order();
    let v = &basis.v;
    let op = Normal { enc: &enc, v, voxels: n };

    let mut rhs = vec![C64::default(); n * order];
    for t in 0..kspace.reps() {
        let samples: Vec<Vec<C64>> = (0..kspace.coils()).map(|i| kspace.samples(t, i)).collect();
        let back = enc.adjoint(t, &samples, false);
        for l in 0..order {
            let w = v[[t, l]];
            for (o, x) in rhs[l * n..(l + 1) * n].iter_mut().zip(&back) {
                *o += x * w;
            }
        }
    }
    let lambda = match opts.lambda {
        Some(l) => l,
        None => 1e-6 * normal_norm(&op, n * order, 10),
    };
    let (flat, report) = conjugate_gradient(|x| op.apply(x, lambda), &rhs, opts.cg);
    let u = Array2::from_shape_fn((n, order), |(i, l)| flat[l * n + i]);
    let series = synthesize(&u, v, traj.grid);
    Ok(SubspaceResult { coeffs: SpatialCoeffs { u }, series, lambda, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::make_spiral;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn crand(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fits_noiseless_low_rank_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj = make_spiral(8, 200, 0.1, 16).unwrap();
        let grid = traj.grid;
        let n = grid.voxels();
        let coils = Array3::from_shape_fn((2, 16, 16), |(i, r, c)| {
            C64::new(1.0 + 0.02 * (i as f64) * r as f64, 0.01 * c as f64)
        });
        let reps = 6;
        // Smooth, band-limited spatial components.
        let u = Array2::from_shape_fn((n, 2), |(i, l)| {
            let (r, c) = ((i / 16) as f64 - 8.0, (i % 16) as f64 - 8.0);
            let g = (-(r * r + c * c) / (12.0 + 8.0 * l as f64)).exp();
            g * C64::from_polar(1.0, 0.2 * r - 0.1 * c * l as f64)
        });
        let v = Array2::from_shape_fn((reps, 2), |_| crand(&mut rng));
        let truth = synthesize(&u, &v, grid);
        let arms = Array2::from_shape_fn((reps, 4), |(t, j)| (t * 4 + j) % 8);
        let enc = Encoding::new(&traj, &arms, &coils).unwrap();
        let mut data = Array4::zeros((reps, 2, 4, 200));
        for t in 0..reps {
            let y = enc.forward(t, truth.frame_slice(t));
            for (i, yi) in y.iter().enumerate() {
                for (s, z) in yi.iter().enumerate() {
                    data[[t, i, s / 200, s % 200]] = *z;
                }
            }
        }
        let kspace = KSpaceSet { data, arms, arm_count: 8, clean: None };
        let basis = LatentMatrix { v, singular_values: vec![1.0, 1.0] };
        let opts = SubspaceOptions { lambda: Some(0.0), cg: CgOptions { max_iter: 200, tol: 1e-10 } };
        let res = subspace_recon(&kspace, &coils, &traj, &basis, opts).unwrap();
        let err = crate::nrmse(truth.frames.iter(), res.series.frames.iter());
        assert!(err < 1e-3, "nrmse {err}");
    }
}
