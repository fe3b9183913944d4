use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ops::Encoding;
use crate::simkit::Trajectory;
use crate::{ImageSeries, KSpaceSet, C64};
use ndarray::Array3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative normal-equation residual `||h - N x|| / ||h||` per iterate.
    pub residuals: Vec<f64>,
    /// Least-squares objective `x^H N x - 2 Re(h^H x)` per iterate
    /// (equal to `||A x - b||^2 - ||b||^2` for a normal-equation solve).
    pub objective: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Conjugate gradient for a Hermitian positive semi-definite operator.
///
/// Stops after `max_iter` iterations or once the relative residual drops
/// below `tol`. If the residual grows for five consecutive iterations the
/// best iterate seen so far is returned with `diverged` set.
pub fn conjugate_gradient<F>(apply: F, rhs: &[C64], opts: CgOptions) -> (Vec<C64>, CgReport)
where
    F: Fn(&[C64]) -> Vec<C64>,
{
    let n = rhs.len();
    let mut x = vec![C64::default(); n];
    let mut report = CgReport::default();
    let b_norm = norm2(rhs).sqrt();
    if b_norm == 0.0 {
        report.converged = true;
        report.residuals.push(0.0);
        report.objective.push(0.0);
        return (x, report);
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = norm2(&r);
    report.residuals.push(1.0);
    report.objective.push(0.0);

    let mut best = (1.0, x.clone());
    let mut prev = 1.0;
    let mut rising = 0;
    for _ in 0..opts.max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_new = norm2(&r);
        report.iterations += 1;
        let rel = rr_new.sqrt() / b_norm;
        report.residuals.push(rel);
        report.objective.push(-dot(rhs, &x).re);
        if !rel.is_finite() {
            report.diverged = true;
            log::warn!("CG produced non-finite values; returning best iterate");
            return (best.1, report);
        }
        if rel < best.0 {
            best = (rel, x.clone());
        }
        rising = if rel > prev { rising + 1 } else { 0 };
        prev = rel;
        if rising >= 5 {
            report.diverged = true;
            log::warn!("CG residual rose for 5 consecutive iterations; returning best iterate");
            return (best.1, report);
        }
        if rel < opts.tol {
            report.converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    (x, report)
}

/// Independent least-squares SENSE reconstruction of every repetition.
pub fn cg_sense(
    kspace: &KSpaceSet,
    coils: &Array3<C64>,
    traj: &Trajectory,
    opts: CgOptions,
) -> Result<(ImageSeries, Vec<CgReport>)> {
    let enc = Encoding::new(traj, &kspace.arms, coils)?;
    let reps = kspace.reps();
    let mut out = ImageSeries::zeros(traj.grid, reps);
    let mut reports = Vec::with_capacity(reps);
    for t in 0..reps {
        let samples: Vec<Vec<C64>> = (0..kspace.coils()).map(|i| kspace.samples(t, i)).collect();
        let rhs = enc.adjoint(t, &samples, false);
        let (x, rep) = conjugate_gradient(|v| enc.normal(t, v), &rhs, opts);
        out.frame_slice_mut(t).copy_from_slice(&x);
        reports.push(rep);
    }
    Ok((out, reports))
}
