//! Loss terms of the self-supervised objective with closed-form gradients
//! (`dL/dRe + i dL/dIm`).

use ndarray::{Array2, Array3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::LevelPlan;
use crate::{KSpaceSet, C64};

/// Smoothing constant of every modulus in the regularisers.
pub const EPS: f64 = 1e-12;

/// Measured samples split per level: `segments[k][t][coil]`.
#[derive(Clone, Debug)]
pub struct LevelData {
    pub segments: Vec<Vec<Vec<Vec<C64>>>>,
    /// Sample count per level over all repetitions and coils.
    pub counts: Vec<usize>,
}

impl LevelData {
    pub fn new(plan: &LevelPlan, kspace: &KSpaceSet, scale: f64) -> Self {
        let mut segments = Vec::with_capacity(plan.count());
        let mut counts = Vec::with_capacity(plan.count());
        for level in &plan.levels {
            let mut per_rep = Vec::with_capacity(kspace.reps());
            let mut count = 0;
            for t in 0..kspace.reps() {
                let idx = &level.indices[plan.rep_group[t]];
                let coils: Vec<Vec<C64>> = (0..kspace.coils())
                    .map(|i| {
                        let all = kspace.samples(t, i);
                        idx.iter().map(|&j| all[j] * scale).collect()
                    })
                    .collect();
                count += idx.len() * kspace.coils();
                per_rep.push(coils);
            }
            segments.push(per_rep);
            counts.push(count);
        }
        Self { segments, counts }
    }
}

/// `sum_k (1/M_k) sum_{t,i} ||F_k S_{i,k} rho_{t,k} - d_{t,i,k}||^2`.
pub fn loss_dc(plan: &LevelPlan, data: &LevelData, images: &[Array3<C64>]) -> (f64, Vec<Array3<C64>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(images.len());
    for (k, (level, img)) in plan.levels.iter().zip(images).enumerate() {
        let reps = img.dim().0;
        let n = level.grid.voxels();
        let norm = 1.0 / data.counts[k] as f64;
        let img = img.as_slice().expect("standard layout");
        // Repetitions are independent; results are reduced in index order.
        let per_rep: Vec<(f64, Vec<C64>)> = (0..reps)
            .into_par_iter()
            .map(|t| {
                let plan_t = &level.plans[plan.rep_group[t]];
                let rho = &img[t * n..(t + 1) * n];
                let mut value = 0.0;
                let mut grad = vec![C64::default(); n];
                let mut weighted = vec![C64::default(); n];
                let mut res = vec![C64::default(); plan_t.len()];
                let mut back = vec![C64::default(); n];
                for (i, d) in data.segments[k][t].iter().enumerate() {
                    let s = level.coil(i);
                    for ((w, &x), &c) in weighted.iter_mut().zip(rho).zip(s) {
                        *w = x * c;
                    }
                    plan_t.forward_into(&weighted, &mut res);
                    for (r, &y) in res.iter_mut().zip(d) {
                        *r -= y;
                        value += r.norm_sqr();
                    }
                    plan_t.adjoint_into(&res, None, &mut back);
                    for ((g, b), c) in grad.iter_mut().zip(&back).zip(s) {
                        *g += c.conj() * b * (2.0 * norm);
                    }
                }
                (value * norm, grad)
            })
            .collect();
        let mut g = Array3::zeros(img_dim(reps, level.grid.size));
        for (t, (v, gt)) in per_rep.into_iter().enumerate() {
            total += v;
            g.as_slice_mut().expect("standard layout")[t * n..(t + 1) * n].copy_from_slice(&gt);
        }
        grads.push(g);
    }
    (total, grads)
}

fn img_dim(reps: usize, side: usize) -> (usize, usize, usize) {
    (reps, side, side)
}

/// Which repetition pairs enter the magnitude loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pairs {
    All,
    /// A fresh random subset of this many unordered pairs.
    Sampled(usize),
}

/// `sum_k sum_{i<j} || |rho_{i,k}| - |rho_{j,k}| ||_1`.
pub fn loss_magnitude<R: Rng>(images: &[Array3<C64>], pairs: Pairs, rng: Option<&mut R>) -> (f64, Vec<Array3<C64>>) {
    let reps = images.first().map_or(0, |i| i.dim().0);
    let all = reps * reps.saturating_sub(1) / 2;
    match (pairs, rng) {
        (Pairs::Sampled(m), Some(rng)) if m < all => {
            let mut list = Vec::with_capacity(m);
            for _ in 0..m {
                let i = rng.random_range(0..reps);
                let mut j = rng.random_range(0..reps - 1);
                if j >= i {
                    j += 1;
                }
                list.push((i.min(j), i.max(j)));
            }
            magnitude_pairs(images, &list)
        }
        _ => magnitude_all(images),
    }
}

/// All pairs in `O(T log T)` per voxel: each magnitude's subgradient is the
/// number of smaller minus the number of larger magnitudes (ties count 0).
fn magnitude_all(images: &[Array3<C64>]) -> (f64, Vec<Array3<C64>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(images.len());
    for img in images {
        let (reps, h, w) = img.dim();
        let mut g = Array3::zeros((reps, h, w));
        let mut mags: Vec<(f64, usize)> = Vec::with_capacity(reps);
        for r in 0..h {
            for c in 0..w {
                mags.clear();
                mags.extend((0..reps).map(|t| (img[[t, r, c]].norm(), t)));
                mags.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut start = 0;
                while start < reps {
                    let mut end = start + 1;
                    while end < reps && mags[end].0 == mags[start].0 {
                        end += 1;
                    }
                    let coef = start as f64 - (reps - end) as f64;
                    for &(m, t) in &mags[start..end] {
                        total += coef * m;
                        let z = img[[t, r, c]];
                        g[[t, r, c]] = z * (coef / (m + EPS));
                    }
                    start = end;
                }
            }
        }
        grads.push(g);
    }
    (total, grads)
}

fn magnitude_pairs(images: &[Array3<C64>], pairs: &[(usize, usize)]) -> (f64, Vec<Array3<C64>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(images.len());
    for img in images {
        let (reps, h, w) = img.dim();
        let mut g = Array3::zeros((reps, h, w));
        for &(i, j) in pairs {
            for r in 0..h {
                for c in 0..w {
                    let (a, b) = (img[[i, r, c]], img[[j, r, c]]);
                    let (ma, mb) = (a.norm(), b.norm());
                    total += (ma - mb).abs();
                    let s = if ma > mb {
                        1.0
                    } else if ma < mb {
                        -1.0
                    } else {
                        0.0
                    };
                    g[[i, r, c]] += a * (s / (ma + EPS));
                    g[[j, r, c]] -= b * (s / (mb + EPS));
                }
            }
        }
        grads.push(g);
    }
    (total, grads)
}

/// Total variation of the wave phase field of every polarity pair.
///
/// For a pair `(plus, minus)` the field is `u = q / |q|` with
/// `q = rho_plus conj(rho_minus)`: the unit phasor of the polarity phase
/// difference, in which any common static phase cancels. `u` has no branch
/// cut, unlike its half-angle square root. The TV is the L1 norm (or, when
/// `isotropic`, the pointwise 2-norm) of the complex moduli of the forward
/// differences.
pub fn loss_wave_tv(images: &Array3<C64>, pairs: &[(usize, usize)], isotropic: bool) -> Result<(f64, Array3<C64>)> {
    let (reps, h, w) = images.dim();
    let mut total = 0.0;
    let mut grad = Array3::zeros((reps, h, w));
    for &(p, m) in pairs {
        if p >= reps || m >= reps {
            return Err(Error::MissingPartner { rep: p.min(m) });
        }
        let q = Array2::from_shape_fn((h, w), |(r, c)| images[[p, r, c]] * images[[m, r, c]].conj());
        let s = q.mapv(|z| 1.0 / (z.norm() + EPS));
        let u = Array2::from_shape_fn((h, w), |ix| q[ix] * s[ix]);
        let mut gu = Array2::<C64>::zeros((h, w));
        for r in 0..h {
            for c in 0..w {
                let dx = (c + 1 < w).then(|| u[[r, c + 1]] - u[[r, c]]);
                let dy = (r + 1 < h).then(|| u[[r + 1, c]] - u[[r, c]]);
                if isotropic {
                    let e = dx.map_or(0.0, |d| d.norm_sqr()) + dy.map_or(0.0, |d| d.norm_sqr());
                    let n = e.sqrt();
                    total += n;
                    let k = 1.0 / (n + EPS);
                    if let Some(d) = dx {
                        gu[[r, c + 1]] += d * k;
                        gu[[r, c]] -= d * k;
                    }
                    if let Some(d) = dy {
                        gu[[r + 1, c]] += d * k;
                        gu[[r, c]] -= d * k;
                    }
                } else {
                    if let Some(d) = dx {
                        let n = d.norm();
                        total += n;
                        gu[[r, c + 1]] += d / (n + EPS);
                        gu[[r, c]] -= d / (n + EPS);
                    }
                    if let Some(d) = dy {
                        let n = d.norm();
                        total += n;
                        gu[[r + 1, c]] += d / (n + EPS);
                        gu[[r, c]] -= d / (n + EPS);
                    }
                }
            }
        }
        // u = q s with s = 1 / (|q| + eps): g_q = s g_u - s^2 Re(conj(g_u) q) q / |q|.
        for r in 0..h {
            for c in 0..w {
                let (qz, sz, g) = (q[[r, c]], s[[r, c]], gu[[r, c]]);
                let nq = qz.norm();
                let gq = if nq > 0.0 { g * sz - qz * (sz * sz * (g.conj() * qz).re / nq) } else { g * sz };
                let (a, b) = (images[[p, r, c]], images[[m, r, c]]);
                grad[[p, r, c]] += gq * b;
                grad[[m, r, c]] += gq.conj() * a;
            }
        }
    }
    Ok((total, grad))
}

/// `||v||_F^2` and its gradient `2v`.
pub fn loss_latent(v: &Array2<C64>) -> (f64, Array2<C64>) {
    (v.iter().map(|z| z.norm_sqr()).sum(), v.mapv(|z| z * 2.0))
}
