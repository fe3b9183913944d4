use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::levels::normalize_sos;
use crate::{Grid, ImageSeries, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    /// `[row, col]` in voxels.
    pub center: [f64; 2],
    pub radius: f64,
    pub stiffness_pa: f64,
    #[serde(default)]
    pub loss_modulus_pa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub grid_size: usize,
    pub fov_m: f64,
    pub background_stiffness_pa: f64,
    pub background_loss_pa: f64,
    pub inclusions: Vec<Inclusion>,
    pub density_kg_m3: f64,
    /// Magnitude per region: background first, then one entry per inclusion.
    pub magnitude_contrast: Vec<f64>,
    pub static_phase_amplitude_rad: f64,
    /// Complex noise standard deviation relative to the peak image magnitude.
    pub noise_sigma: f64,
    pub coils: usize,
    /// Radius of the disc-shaped support as a fraction of the grid side.
    pub support_fraction: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid_size: 64,
            fov_m: 0.128,
            background_stiffness_pa: 2000.0,
            background_loss_pa: 0.0,
            inclusions: vec![Inclusion {
                center: [32.0, 32.0],
                radius: 10.0,
                stiffness_pa: 3000.0,
                loss_modulus_pa: 0.0,
            }],
            density_kg_m3: 1000.0,
            magnitude_contrast: vec![1.0, 0.7],
            static_phase_amplitude_rad: 1.5,
            noise_sigma: 0.0,
            coils: 8,
            support_fraction: 0.45,
        }
    }
}

impl PhantomSpec {
    /// Single-region phantom.
    pub fn homogeneous(stiffness_pa: f64) -> Self {
        Self {
            background_stiffness_pa: stiffness_pa,
            inclusions: Vec::new(),
            magnitude_contrast: vec![1.0],
            ..Self::default()
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.grid_size, self.fov_m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid_size;
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Invalid(format!("grid_size {n} must be a power of two >= 4")));
        }
        if !(self.fov_m > 0.0) {
            return Err(Error::Invalid("fov_m must be positive".into()));
        }
        if !(self.density_kg_m3 > 0.0) {
            return Err(Error::Invalid("density must be positive".into()));
        }
        if !(self.background_stiffness_pa > 0.0) {
            return Err(Error::Invalid("background stiffness must be positive".into()));
        }
        if self.coils == 0 {
            return Err(Error::Invalid("at least one coil is required".into()));
        }
        for (index, inc) in self.inclusions.iter().enumerate() {
            let [r, c] = inc.center;
            let hi = (n - 1) as f64;
            if r - inc.radius < 0.0 || c - inc.radius < 0.0 || r + inc.radius > hi || c + inc.radius > hi {
                return Err(Error::InclusionOutsideGrid { index });
            }
            if !(inc.stiffness_pa > 0.0) || !(inc.radius > 0.0) {
                return Err(Error::Invalid(format!("inclusion {index} needs positive stiffness and radius")));
            }
        }
        if self.magnitude_contrast.len() != self.inclusions.len() + 1 {
            return Err(Error::Invalid(format!(
                "magnitude_contrast needs {} entries (background + inclusions)",
                self.inclusions.len() + 1
            )));
        }
        if self.magnitude_contrast.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Invalid("magnitude_contrast entries must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Ground truth of a phantom. `displacement` and `images` are filled in by
/// the wave and encoding stages.
#[derive(Clone, Debug)]
pub struct PhantomTruth {
    pub grid: Grid,
    pub density_kg_m3: f64,
    pub stiffness_map: Array2<f64>,
    pub loss_map: Array2<f64>,
    pub magnitude_map: Array2<f64>,
    pub static_phase_map: Array2<f64>,
    pub coil_maps: Array3<C64>,
    /// 0 outside the support, 1 background, `2 + j` inclusion `j`.
    pub labels: Array2<u8>,
    pub displacement: Option<Array3<C64>>,
    pub images: Option<ImageSeries>,
}

impl PhantomTruth {
    pub fn support(&self) -> Array2<bool> {
        self.labels.mapv(|l| l > 0)
    }

    pub fn region_count(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Mask of region `label` eroded by `erosion` voxels (Chebyshev distance
    /// to any voxel of another label).
    pub fn region_mask(&self, label: u8, erosion: usize) -> Array2<bool> {
        erode(&self.labels.mapv(|l| l == label), erosion)
    }
}

/// Binary erosion with a square structuring element of radius `r`.
pub fn erode(mask: &Array2<bool>, r: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut out = mask.clone();
    if r == 0 {
        return out;
    }
    let r = r as isize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !mask[[y as usize, x as usize]] {
                continue;
            }
            'scan: for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize || !mask[[yy as usize, xx as usize]] {
                        out[[y as usize, x as usize]] = false;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

/// Raised-cosine edge profile over one voxel: 1 well inside (`d >= 0.5`), 0 outside.
fn taper(d: f64) -> f64 {
    if d >= 0.5 {
        1.0
    } else if d <= -0.5 {
        0.0
    } else {
        0.5 * (1.0 + (PI * d).sin())
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomTruth> {
    spec.validate()?;
    let grid = spec.grid();
    let n = spec.grid_size;
    let centre = (n / 2) as f64;
    let support_radius = spec.support_fraction * n as f64;

    let mut labels = Array2::<u8>::zeros((n, n));
    let mut stiffness = Array2::<f64>::zeros((n, n));
    let mut loss = Array2::<f64>::zeros((n, n));
    let mut magnitude = Array2::<f64>::zeros((n, n));
    let mut static_phase = Array2::<f64>::zeros((n, n));

    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64, c as f64);
            let ds = support_radius - ((y - centre).powi(2) + (x - centre).powi(2)).sqrt();
            let mut label = if ds + 0.5 > 0.0 { 1u8 } else { 0 };
            let mut mu = spec.background_stiffness_pa;
            let mut g2 = spec.background_loss_pa;
            let mut m = spec.magnitude_contrast[0];
            for (j, inc) in spec.inclusions.iter().enumerate() {
                let di = inc.radius - ((y - inc.center[0]).powi(2) + (x - inc.center[1]).powi(2)).sqrt();
                if di >= 0.0 {
                    mu = inc.stiffness_pa;
                    g2 = inc.loss_modulus_pa;
                    if label > 0 {
                        label = 2 + j as u8;
                    }
                }
                let t = taper(di);
                m += (spec.magnitude_contrast[j + 1] - m) * t;
            }
            labels[[r, c]] = label;
            stiffness[[r, c]] = mu;
            loss[[r, c]] = g2;
            magnitude[[r, c]] = m * taper(ds);
        }
    }

    // Fixed second-order polynomial, scaled to the requested peak amplitude.
    let poly = |x: f64, y: f64| 0.6 * x + 0.3 * y + 0.5 * x * x - 0.4 * x * y + 0.3 * y * y;
    let norm = |i: usize| (i as f64 - centre) / centre;
    let peak = (0..n * n).map(|i| poly(norm(i % n), norm(i / n)).abs()).fold(0.0, f64::max);
    for r in 0..n {
        for c in 0..n {
            static_phase[[r, c]] = spec.static_phase_amplitude_rad * poly(norm(c), norm(r)) / peak;
        }
    }

    let coil_maps = make_coils(spec.coils, n);
    Ok(PhantomTruth {
        grid,
        density_kg_m3: spec.density_kg_m3,
        stiffness_map: stiffness,
        loss_map: loss,
        magnitude_map: magnitude,
        static_phase_map: static_phase,
        coil_maps,
        labels,
        displacement: None,
        images: None,
    })
}

/// Coil `i` is a quadratic complex polynomial oriented at angle `2 pi i / C`,
/// normalised to unit sum of squares at every voxel.
fn make_coils(count: usize, n: usize) -> Array3<C64> {
    let centre = (n / 2) as f64;
    let mut maps = Array3::<C64>::zeros((count, n, n));
    for i in 0..count {
        let th = 2.0 * PI * i as f64 / count as f64;
        let (s, c) = th.sin_cos();
        let rot = C64::from_polar(1.0, th);
        for r in 0..n {
            for col in 0..n {
                let x = (col as f64 - centre) / centre;
                let y = (r as f64 - centre) / centre;
                let p = x * c + y * s;
                let q = -x * s + y * c;
                let a = 1.0 + 0.9 * p + 0.35 * p * p;
                maps[[i, r, col]] = rot * C64::new(a, 0.0) * C64::new(1.0, 0.4 * q);
            }
        }
    }
    normalize_sos(&mut maps);
    maps
}
