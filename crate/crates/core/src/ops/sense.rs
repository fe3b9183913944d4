use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::ops::nufft::NufftPlan;
use crate::simkit::spiral::Trajectory;
use crate::{Grid, C64};

fn coil_slice(coils: &Array3<C64>, i: usize) -> &[C64] {
    let n = coils.dim().1 * coils.dim().2;
    &coils.as_slice().expect("standard layout")[i * n..(i + 1) * n]
}

/// Per-coil samples `F (S_i x)`.
pub fn sense_forward(image: &[C64], coils: &Array3<C64>, plan: &NufftPlan) -> Vec<Vec<C64>> {
    let mut weighted = vec![C64::default(); image.len()];
    (0..coils.dim().0)
        .map(|i| {
            for ((w, &x), &s) in weighted.iter_mut().zip(image).zip(coil_slice(coils, i)) {
                *w = x * s;
            }
            plan.forward(&weighted)
        })
        .collect()
}

/// `sum_i conj(S_i) F^H(D y_i)`, with coils reduced in index order.
pub fn sense_adjoint(samples: &[Vec<C64>], coils: &Array3<C64>, plan: &NufftPlan, dcf: Option<&[f64]>) -> Vec<C64> {
    let n = plan.grid().voxels();
    let mut out = vec![C64::default(); n];
    for (i, y) in samples.iter().enumerate() {
        let back = plan.adjoint(y, dcf);
        for ((o, b), s) in out.iter_mut().zip(&back).zip(coil_slice(coils, i)) {
            *o += s.conj() * b;
        }
    }
    out
}

/// Normal operator `sum_i S_i^H F^H F S_i x`.
pub fn sense_normal(image: &[C64], coils: &Array3<C64>, plan: &NufftPlan) -> Vec<C64> {
    let n = image.len();
    let mut out = vec![C64::default(); n];
    let mut weighted = vec![C64::default(); n];
    let mut back = vec![C64::default(); n];
    let mut samples = vec![C64::default(); plan.len()];
    for i in 0..coils.dim().0 {
        let s = coil_slice(coils, i);
        for ((w, &x), &c) in weighted.iter_mut().zip(image).zip(s) {
            *w = x * c;
        }
        plan.forward_into(&weighted, &mut samples);
        plan.adjoint_into(&samples, None, &mut back);
        for ((o, b), c) in out.iter_mut().zip(&back).zip(s) {
            *o += c.conj() * b;
        }
    }
    out
}

/// Full-resolution encoding operators for every repetition of an acquisition.
///
/// Repetitions that share the same arm list share one NUFFT plan.
#[derive(Clone, Debug)]
pub struct Encoding {
    pub grid: Grid,
    pub coils: Array3<C64>,
    pub plans: Vec<NufftPlan>,
    pub dcfs: Vec<Vec<f64>>,
    pub rep_group: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

/// Distinct arm lists in first-appearance order and the group of each repetition.
pub fn group_arms(arms: &Array2<usize>) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut rep_group = Vec::with_capacity(arms.nrows());
    for row in arms.rows() {
        let list = row.to_vec();
        let g = match groups.iter().position(|x| *x == list) {
            Some(g) => g,
            None => {
                groups.push(list);
                groups.len() - 1
            }
        };
        rep_group.push(g);
    }
    (groups, rep_group)
}

impl Encoding {
    pub fn new(traj: &Trajectory, arms: &Array2<usize>, coils: &Array3<C64>) -> Result<Self> {
        let (groups, rep_group) = group_arms(arms);
        let plans =
            groups.iter().map(|g| NufftPlan::new(traj.grid, &traj.arm_coords(g))).collect::<Result<Vec<_>>>()?;
        let dcfs = groups.iter().map(|g| traj.arm_dcf(g)).collect();
        Ok(Self { grid: traj.grid, coils: coils.clone(), plans, dcfs, rep_group, groups })
    }

    pub fn plan(&self, t: usize) -> &NufftPlan {
        &self.plans[self.rep_group[t]]
    }

    pub fn dcf(&self, t: usize) -> &[f64] {
        &self.dcfs[self.rep_group[t]]
    }

    pub fn forward(&self, t: usize, image: &[C64]) -> Vec<Vec<C64>> {
        sense_forward(image, &self.coils, self.plan(t))
    }

    pub fn adjoint(&self, t: usize, samples: &[Vec<C64>], use_dcf: bool) -> Vec<C64> {
        let dcf = use_dcf.then(|| self.dcf(t));
        sense_adjoint(samples, &self.coils, self.plan(t), dcf)
    }

    pub fn normal(&self, t: usize, image: &[C64]) -> Vec<C64> {
        sense_normal(image, &self.coils, self.plan(t))
    }
}
