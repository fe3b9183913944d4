use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

/// Square imaging grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub size: usize,
    pub fov_m: f64,
}

impl Grid {
    pub fn new(size: usize, fov_m: f64) -> Self {
        Self { size, fov_m }
    }

    pub fn voxel_size(&self) -> f64 {
        self.fov_m / self.size as f64
    }

    /// Nyquist radius in cycles/m.
    pub fn k_max(&self) -> f64 {
        0.5 / self.voxel_size()
    }

    pub fn voxels(&self) -> usize {
        self.size * self.size
    }

    /// Physical position (x, y) in meters of voxel (row, col); the grid centre
    /// voxel `size/2` sits at the origin.
    pub fn position(&self, row: usize, col: usize) -> [f64; 2] {
        let d = self.voxel_size();
        let c = (self.size / 2) as f64;
        [(col as f64 - c) * d, (row as f64 - c) * d]
    }
}

/// Complex image stack indexed `[repetition, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSeries {
    pub grid: Grid,
    pub frames: Array3<C64>,
}

impl ImageSeries {
    pub fn zeros(grid: Grid, reps: usize) -> Self {
        Self { grid, frames: Array3::zeros((reps, grid.size, grid.size)) }
    }

    pub fn reps(&self) -> usize {
        self.frames.dim().0
    }

    pub fn frame(&self, t: usize) -> ndarray::ArrayView2<'_, C64> {
        self.frames.index_axis(ndarray::Axis(0), t)
    }

    pub fn frame_slice(&self, t: usize) -> &[C64] {
        let n = self.grid.voxels();
        &self.frames.as_slice().expect("standard layout")[t * n..(t + 1) * n]
    }

    pub fn frame_slice_mut(&mut self, t: usize) -> &mut [C64] {
        let n = self.grid.voxels();
        &mut self.frames.as_slice_mut().expect("standard layout")[t * n..(t + 1) * n]
    }

    /// Casorati matrix (voxels x repetitions).
    pub fn casorati(&self) -> Array2<C64> {
        let (t, _, _) = self.frames.dim();
        let n = self.grid.voxels();
        let mut m = Array2::zeros((n, t));
        for rep in 0..t {
            for (v, &x) in self.frame_slice(rep).iter().enumerate() {
                m[[v, rep]] = x;
            }
        }
        m
    }
}

/// Non-Cartesian multi-coil samples stored as `[repetition, coil, arm slot, sample]`.
///
/// `arms[[t, j]]` names the trajectory arm held in slot `j` of repetition `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceSet {
    pub data: Array4<C64>,
    pub arms: Array2<usize>,
    pub arm_count: usize,
    /// Noiseless copy, kept only when the simulation added no noise.
    pub clean: Option<Array4<C64>>,
}

impl KSpaceSet {
    pub fn reps(&self) -> usize {
        self.data.dim().0
    }

    pub fn coils(&self) -> usize {
        self.data.dim().1
    }

    pub fn arms_per_rep(&self) -> usize {
        self.data.dim().2
    }

    pub fn samples_per_arm(&self) -> usize {
        self.data.dim().3
    }

    /// Samples of one repetition and coil, concatenated over arm slots.
    pub fn samples(&self, t: usize, coil: usize) -> Vec<C64> {
        let (_, _, a, s) = self.data.dim();
        let mut out = Vec::with_capacity(a * s);
        for j in 0..a {
            for k in 0..s {
                out.push(self.data[[t, coil, j, k]]);
            }
        }
        out
    }

    pub fn arm_list(&self, t: usize) -> Vec<usize> {
        self.arms.row(t).to_vec()
    }

    pub fn total_samples(&self) -> usize {
        self.data.len()
    }
}

/// Normalised root-mean-square error `||x - x_hat|| / ||x||`.
pub fn nrmse<'a, I>(truth: I, estimate: I) -> f64
where
    I: IntoIterator<Item = &'a C64>,
{
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in truth.into_iter().zip(estimate) {
        num += (a - b).norm_sqr();
        den += a.norm_sqr();
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}
