use std::f64::consts::PI;

use crate::error::Result;
use crate::ops::nufft::NufftPlan;
use crate::simkit::spiral::Trajectory;
use crate::C64;

/// Analytic ramp density compensation for an interleaved spiral.
///
/// Away from the centre each sample of an `A`-arm Archimedean spiral covers an
/// area of about `2 pi |k| k_max dtau / A`; weights are that area in units of
/// `(1/fov)^2`. The DC sample takes the weight of the first annulus. A final
/// scalar makes `F^H D F` of a smooth disc reproduce the disc at its centre.
pub fn make_dcf(traj: &Trajectory) -> Result<Vec<f64>> {
    let fov = traj.grid.fov_m;
    let k_max = traj.k_max();
    let s = traj.samples_per_arm;
    let dtau = 1.0 / (s - 1) as f64;
    let arm = &traj.coords[0];
    let mut w: Vec<f64> = arm
        .iter()
        .map(|k| {
            let r = (k[0] * k[0] + k[1] * k[1]).sqrt();
            fov * fov * 2.0 * PI * r * k_max * dtau / traj.arm_count as f64
        })
        .collect();
    if s > 1 {
        w[0] = w[1];
    }

    // Normalise the low-frequency gain on a tapered disc.
    let grid = traj.grid;
    let n = grid.size;
    let radius = 0.3 * n as f64;
    let disc: Vec<C64> = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64 - (n / 2) as f64, (i % n) as f64 - (n / 2) as f64);
            let d = (r * r + c * c).sqrt();
            let v = if d <= radius - 2.0 {
                1.0
            } else if d >= radius + 2.0 {
                0.0
            } else {
                0.5 * (1.0 + (PI * (d - radius + 2.0) / 4.0).cos())
            };
            C64::new(v, 0.0)
        })
        .collect();
    let plan = NufftPlan::new(grid, &traj.arm_coords(&traj.all_arms()))?;
    let full: Vec<f64> = (0..traj.arm_count).flat_map(|_| w.iter().copied()).collect();
    let back = plan.adjoint(&plan.forward(&disc), Some(&full));
    let centre = (n / 2) * n + n / 2;
    let gain = back[centre].re;
    if gain > 0.0 {
        for x in &mut w {
            *x /= gain;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use crate::simkit::spiral::make_spiral;

    #[test]
    fn dc_weight_positive_and_ramp_monotone() {
        let t = make_spiral(5, 1536, 0.128, 64).unwrap();
        assert!(t.dcf[0] > 0.0);
        for w in t.dcf.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }
}
