//! Harmonic extraction, algebraic Helmholtz inversion and stiffness statistics.

use std::f64::consts::TAU;

use ndarray::{Array2, Array3, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// First-harmonic displacement `u[d, row, col]` in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicField {
    pub u: Array3<C64>,
    pub spacing_m: f64,
    pub mask: Array2<bool>,
}

/// Complex shear modulus (Pa) and the voxels where it is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusMap {
    pub g: Array2<C64>,
    pub valid: Array2<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessMap {
    pub mu: Array2<f64>,
    pub valid: Array2<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Second-order 5-point Laplacian.
    #[default]
    FivePoint,
    /// Fourth-order 9-point cross.
    FourthOrder,
}

impl Stencil {
    fn radius(self) -> usize {
        match self {
            Stencil::FivePoint => 1,
            Stencil::FourthOrder => 2,
        }
    }

    /// 1-D second-difference weights at offsets `-r..=r`, unit spacing.
    fn weights(self) -> &'static [f64] {
        match self {
            Stencil::FivePoint => &[1.0, -2.0, 1.0],
            Stencil::FourthOrder => &[-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0],
        }
    }
}

/// `u_d = (2/P) sum_p phi_{d,p} e^{+i 2 pi p / P} / gamma`, so that
/// `Re(u_d e^{-i 2 pi p / P})` reproduces `phi_{d,p} / gamma`. Zero outside
/// `mask`.
pub fn harmonic_extract(
    phases: &Array4<f64>,
    gamma: f64,
    spacing_m: f64,
    mask: &Array2<bool>,
) -> Result<HarmonicField> {
    let (dirs, p_count, n, _) = phases.dim();
    if p_count < 3 {
        return Err(Error::Invalid(format!("need >= 3 offsets, got {p_count}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Invalid("encoding constant must be positive".into()));
    }
    let basis: Vec<C64> = (0..p_count)
        .map(|p| C64::from_polar(2.0 / (p_count as f64 * gamma), TAU * p as f64 / p_count as f64))
        .collect();
    let mut u = Array3::zeros((dirs, n, n));
    for d in 0..dirs {
        for r in 0..n {
            for c in 0..n {
                if mask[[r, c]] {
                    u[[d, r, c]] = (0..p_count).map(|p| basis[p] * phases[[d, p, r, c]]).sum();
                }
            }
        }
    }
    Ok(HarmonicField { u, spacing_m, mask: mask.clone() })
}

/// Discrete Laplacian where the whole stencil lies inside `mask`.
pub fn laplacian(u: ArrayView2<C64>, spacing_m: f64, mask: &Array2<bool>, stencil: Stencil) -> Array2<Option<C64>> {
    let n = u.nrows() as isize;
    let rad = stencil.radius() as isize;
    let w = stencil.weights();
    let h2 = spacing_m * spacing_m;
    Array2::from_shape_fn(u.dim(), |(r, c)| {
        let (r, c) = (r as isize, c as isize);
        let inside = |y: isize, x: isize| y >= 0 && x >= 0 && y < n && x < n && mask[[y as usize, x as usize]];
        if !(-rad..=rad).all(|o| inside(r + o, c) && inside(r, c + o)) {
            return None;
        }
        let mut acc = C64::default();
        for (i, &wi) in w.iter().enumerate() {
            let o = i as isize - rad;
            acc += (u[[(r + o) as usize, c as usize]] + u[[r as usize, (c + o) as usize]]) * wi;
        }
        Some(acc / h2)
    })
}

/// Lower median of a slice (sorts in place).
fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Algebraic Helmholtz inversion `G* lap(u) = -rho omega^2 u`, solved per
/// voxel in the least-squares sense across directions. Voxels whose
/// Laplacian energy falls below `1e-6` of its median, whose stencil leaves
/// the mask, or whose storage modulus comes out negative are invalid.
pub fn invert_aide(field: &HarmonicField, omega: f64, density: f64, stencil: Stencil) -> Result<ModulusMap> {
    let (dirs, n, _) = field.u.dim();
    if dirs == 0 {
        return Err(Error::Invalid("need at least one direction".into()));
    }
    let laps: Vec<_> = (0..dirs)
        .map(|d| laplacian(field.u.index_axis(ndarray::Axis(0), d), field.spacing_m, &field.mask, stencil))
        .collect();
    let mut num = Array2::<C64>::zeros((n, n));
    let mut den = Array2::<f64>::zeros((n, n));
    let mut defined = Array2::from_elem((n, n), false);
    for r in 0..n {
        for c in 0..n {
            if laps[0][[r, c]].is_some() {
                for d in 0..dirs {
                    let l = laps[d][[r, c]].expect("same stencil support for all directions");
                    num[[r, c]] += l.conj() * field.u[[d, r, c]];
                    den[[r, c]] += l.norm_sqr();
                }
                defined[[r, c]] = true;
            }
        }
    }
    let mut energies: Vec<f64> = den.iter().zip(defined.iter()).filter(|(_, &ok)| ok).map(|(&e, _)| e).collect();
    let floor = 1e-6 * lower_median(&mut energies).ok_or(Error::NoValidVoxels)?;
    let scale = -density * omega * omega;
    let mut g = Array2::zeros((n, n));
    let mut valid = Array2::from_elem((n, n), false);
    for r in 0..n {
        for c in 0..n {
            let e = den[[r, c]];
            if !defined[[r, c]] || !(e > floor) {
                continue;
            }
            let v = num[[r, c]] * (scale / e);
            if v.re >= 0.0 && v.re.is_finite() && v.im.is_finite() {
                g[[r, c]] = v;
                valid[[r, c]] = true;
            }
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::NoValidVoxels);
    }
    Ok(ModulusMap { g, valid })
}

/// `mu = 2 |G*|^2 / (G' + |G*|)`; zero and invalid where undefined.
pub fn stiffness(map: &ModulusMap) -> StiffnessMap {
    let mut valid = map.valid.clone();
    let mu = Array2::from_shape_fn(map.g.dim(), |ix| {
        let g = map.g[ix];
        let den = g.re + g.norm();
        if !valid[ix] || !(den > 0.0) {
            valid[ix] = false;
            return 0.0;
        }
        2.0 * g.norm_sqr() / den
    });
    StiffnessMap { mu, valid }
}

/// Median over `mask`; the lower median for even counts.
pub fn median_stiffness(mu: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    let mut values: Vec<f64> = mu.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    lower_median(&mut values).ok_or(Error::EmptyMask)
}

/// Square median filter with edge replication (lower median for even windows).
pub fn median_filter(mu: &Array2<f64>, window: usize) -> Array2<f64> {
    let (h, w) = mu.dim();
    let lo = (window.max(1) - 1) as isize / 2;
    let hi = window.max(1) as isize - 1 - lo;
    let mut buf = Vec::with_capacity(window * window);
    Array2::from_shape_fn((h, w), |(r, c)| {
        buf.clear();
        for dy in -lo..=hi {
            for dx in -lo..=hi {
                let y = (r as isize + dy).clamp(0, h as isize - 1) as usize;
                let x = (c as isize + dx).clamp(0, w as isize - 1) as usize;
                buf.push(mu[[y, x]]);
            }
        }
        lower_median(&mut buf).expect("nonempty window")
    })
}
