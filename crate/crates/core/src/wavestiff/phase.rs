//! Phase differencing, bulk-motion removal and Laplacian unwrapping.

use std::f64::consts::{PI, TAU};

use ndarray::{Array2, Array4};

use crate::error::Result;
use crate::fft::{freq_index, Fft2};
use crate::simkit::{MegSpec, Polarity, RepIndex};
use crate::{ImageSeries, C64};

/// Wrapped phase maps `phi[d, p, row, col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WrappedPhaseSet {
    pub phases: Array4<f64>,
}

/// Unit phasors `q / |q|` of `q = rho_plus conj(rho_minus)` per (direction,
/// offset); zero where `q` vanishes. Their angle is twice the wave phase.
pub fn pair_phasors(series: &ImageSeries, meg: &MegSpec) -> Result<Array4<C64>> {
    meg.check_pairs(series.reps())?;
    let n = series.grid.size;
    let mut out = Array4::zeros((meg.n_directions, meg.n_offsets, n, n));
    for d in 0..meg.n_directions {
        for p in 0..meg.n_offsets {
            let plus = meg.rep(RepIndex { direction: d, polarity: Polarity::Positive, offset: p });
            let minus = meg.rep(RepIndex { direction: d, polarity: Polarity::Negative, offset: p });
            let (a, b) = (series.frame(plus), series.frame(minus));
            for r in 0..n {
                for c in 0..n {
                    let q = a[[r, c]] * b[[r, c]].conj();
                    let m = q.norm();
                    out[[d, p, r, c]] = if m > 0.0 { q / m } else { C64::default() };
                }
            }
        }
    }
    Ok(out)
}

/// `phi = angle(rho_plus conj(rho_minus)) / 2`; any static phase common to
/// the pair cancels in the product.
pub fn phase_difference(series: &ImageSeries, meg: &MegSpec) -> Result<WrappedPhaseSet> {
    let q = pair_phasors(series, meg)?;
    Ok(WrappedPhaseSet { phases: q.mapv(|z| 0.5 * z.arg()) })
}

fn angle(z: C64) -> f64 {
    if z.norm() < 1e-9 {
        0.0
    } else {
        z.arg()
    }
}

/// Inverse transform of the centred 3x3 block of the field's DFT.
fn low_block(field: &Array2<C64>) -> Array2<C64> {
    let n = field.nrows();
    let fft = Fft2::new(n);
    let mut buf: Vec<C64> = field.iter().copied().collect();
    fft.forward(&mut buf);
    for r in 0..n {
        for c in 0..n {
            if freq_index(r, n).abs() > 1.0 || freq_index(c, n).abs() > 1.0 {
                buf[r * n + c] = C64::default();
            }
        }
    }
    fft.inverse(&mut buf);
    let scale = 1.0 / (n * n) as f64;
    Array2::from_shape_vec((n, n), buf.into_iter().map(|z| z * scale).collect()).expect("square grid")
}

/// Removes the centred 3x3 DFT block from a complex field (a projection).
pub fn remove_bulk_field(field: &Array2<C64>) -> Array2<C64> {
    field - &low_block(field)
}

/// Bulk-motion removal on a phase map, done on the unit phasor `e^{i phi}`
/// and re-extracted as phase (0 where the remainder vanishes).
pub fn remove_bulk(phi: &Array2<f64>) -> Array2<f64> {
    let z = phi.mapv(|p| C64::from_polar(1.0, p));
    remove_bulk_field(&z).mapv(angle)
}

/// Spectral Laplacian (unit spacing) of a real map on its even extension.
struct MirrorLaplacian {
    n: usize,
    fft: Fft2,
    /// `-(2 pi)^2 |f|^2` on the `2n x 2n` extended grid.
    symbol: Vec<f64>,
}

impl MirrorLaplacian {
    fn new(n: usize) -> Self {
        let m = 2 * n;
        let mut symbol = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                let (fy, fx) = (freq_index(r, m) / m as f64, freq_index(c, m) / m as f64);
                symbol[r * m + c] = -(TAU * TAU) * (fx * fx + fy * fy);
            }
        }
        Self { n, fft: Fft2::new(m), symbol }
    }

    fn extend(&self, x: &Array2<f64>) -> Vec<C64> {
        let (n, m) = (self.n, 2 * self.n);
        let mut buf = vec![C64::default(); m * m];
        for r in 0..m {
            let rr = if r < n { r } else { m - 1 - r };
            for c in 0..m {
                let cc = if c < n { c } else { m - 1 - c };
                buf[r * m + c] = C64::new(x[[rr, cc]], 0.0);
            }
        }
        buf
    }

    fn apply(&self, x: &Array2<f64>, inverse: bool) -> Array2<f64> {
        let (n, m) = (self.n, 2 * self.n);
        let mut buf = self.extend(x);
        self.fft.forward(&mut buf);
        for (z, &s) in buf.iter_mut().zip(&self.symbol) {
            *z = if !inverse {
                *z * s
            } else if s != 0.0 {
                *z / s
            } else {
                C64::default()
            };
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / (m * m) as f64;
        Array2::from_shape_fn((n, n), |(r, c)| buf[r * m + c].re * scale)
    }
}

/// Laplacian phase unwrapping:
/// `phi_u = L^-1[cos(phi) L(sin(phi)) - sin(phi) L(cos(phi))]`, evaluated
/// spectrally on a mirror-extended grid. The estimate is shifted by the
/// circular mean of its difference to the input and then snapped per voxel
/// to the nearest value congruent to the input modulo `2 pi`.
pub fn unwrap_laplacian(phi: &Array2<f64>) -> Array2<f64> {
    let n = phi.nrows();
    let lap = MirrorLaplacian::new(n);
    let (s, c) = (phi.mapv(f64::sin), phi.mapv(f64::cos));
    let ls = lap.apply(&s, false);
    let lc = lap.apply(&c, false);
    let rhs = Array2::from_shape_fn((n, n), |ix| c[ix] * ls[ix] - s[ix] * lc[ix]);
    let est = lap.apply(&rhs, true);
    let mean: C64 = phi.iter().zip(est.iter()).map(|(&w, &e)| C64::from_polar(1.0, w - e)).sum();
    let offset = angle(mean);
    Array2::from_shape_fn((n, n), |ix| {
        let e = est[ix] + offset;
        phi[ix] + TAU * ((e - phi[ix]) / TAU).round()
    })
}

/// Wraps to `(-pi, pi]`.
pub fn wrap(x: f64) -> f64 {
    let y = x - TAU * ((x + PI) / TAU).floor();
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}
