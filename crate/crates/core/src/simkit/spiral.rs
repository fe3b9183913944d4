use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Grid;

/// Interleaved Archimedean spiral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub arm_count: usize,
    pub samples_per_arm: usize,
    pub turns: f64,
    /// `coords[arm][sample] = [kx, ky]` in cycles/m.
    pub coords: Vec<Vec<[f64; 2]>>,
    /// Density compensation per sample index; identical for every arm.
    pub dcf: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn k_max(&self) -> f64 {
        self.grid.k_max()
    }

    /// Coordinates of the listed arms, concatenated in order.
    pub fn arm_coords(&self, arms: &[usize]) -> Vec<[f64; 2]> {
        arms.iter().flat_map(|&a| self.coords[a].iter().copied()).collect()
    }

    pub fn arm_dcf(&self, arms: &[usize]) -> Vec<f64> {
        arms.iter().flat_map(|_| self.dcf.iter().copied()).collect()
    }

    pub fn all_arms(&self) -> Vec<usize> {
        (0..self.arm_count).collect()
    }
}

/// Base arm `k(tau) = k_max tau (cos(2 pi n tau + phi), sin(2 pi n tau + phi))`
/// with `n = grid/(2 arm_count)` turns, rotated by `2 pi a / arm_count` for arm `a`.
pub fn make_spiral(arm_count: usize, samples_per_arm: usize, fov_m: f64, grid_size: usize) -> Result<Trajectory> {
    if arm_count == 0 {
        return Err(Error::Invalid("arm_count must be at least 1".into()));
    }
    if samples_per_arm < 2 {
        return Err(Error::Invalid("samples_per_arm must be at least 2".into()));
    }
    let grid = Grid::new(grid_size, fov_m);
    let k_max = grid.k_max();
    let turns = grid_size as f64 / (2.0 * arm_count as f64);
    let last = (samples_per_arm - 1) as f64;
    let coords: Vec<Vec<[f64; 2]>> = (0..arm_count)
        .map(|a| {
            let phi = 2.0 * PI * a as f64 / arm_count as f64;
            (0..samples_per_arm)
                .map(|s| {
                    let tau = s as f64 / last;
                    let ang = 2.0 * PI * turns * tau + phi;
                    [k_max * tau * ang.cos(), k_max * tau * ang.sin()]
                })
                .collect()
        })
        .collect();

    let mut warnings = Vec::new();
    let spacing = coords[0]
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if spacing > 1.0 / fov_m {
        warnings.push(format!(
            "samples_per_arm={samples_per_arm} gives a readout spacing of {spacing:.2} cycles/m, above the Nyquist spacing {:.2}",
            1.0 / fov_m
        ));
    }
    let mut traj = Trajectory { grid, arm_count, samples_per_arm, turns, coords, dcf: Vec::new(), warnings };
    traj.dcf = crate::ops::make_dcf(&traj)?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_arm_geometry() {
        let t = make_spiral(5, 1536, 0.128, 64).unwrap();
        assert!((t.turns - 6.4).abs() < 1e-12);
        assert!((t.k_max() - 250.0).abs() < 1e-9);
        let r_max = t.coords.iter().flatten().map(|k| (k[0] * k[0] + k[1] * k[1]).sqrt()).fold(0.0, f64::max);
        assert!((r_max - 250.0).abs() < 1e-9);
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn arms_are_rotations_of_arm_zero() {
        let t = make_spiral(5, 300, 0.128, 64).unwrap();
        for a in 0..5 {
            let th = 2.0 * PI * a as f64 / 5.0;
            let (s, c) = th.sin_cos();
            for (p, q) in t.coords[0].iter().zip(&t.coords[a]) {
                let rx = c * p[0] - s * p[1];
                let ry = s * p[0] + c * p[1];
                assert!((rx - q[0]).abs() < 1e-12 && (ry - q[1]).abs() < 1e-12);
            }
            assert_eq!(t.coords[a][0], [0.0, 0.0]);
        }
    }

    #[test]
    fn sparse_readout_is_flagged() {
        let t = make_spiral(5, 200, 0.128, 64).unwrap();
        assert_eq!(t.warnings.len(), 1);
    }
}
