//! Kaiser-Bessel gridding NUFFT.
//!
//! The forward operator evaluates
//! `F x (k) = scale * sum_r x(r) exp(-i 2 pi k . r)` with `k` in cycles/m and
//! voxel positions from [`Grid::position`]. The default `scale` is `1/n`, which
//! makes a fully sampled Cartesian grid unitary. The adjoint reuses the same
//! interpolation weights, so it is the exact conjugate transpose.

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::ops::kaiser::KaiserBessel;
use crate::{Grid, C64};

#[derive(Clone, Debug)]
pub struct NufftPlan {
    grid: Grid,
    oversampled: usize,
    kernel: KaiserBessel,
    scale: f64,
    /// Reciprocal apodization per image index along one axis.
    deapod: Vec<f64>,
    coords: Vec<[f64; 2]>,
    /// Flattened per-sample kernel support: `width` column and row indices and weights.
    cols: Vec<u32>,
    rows: Vec<u32>,
    wcol: Vec<f64>,
    wrow: Vec<f64>,
    nonzero_rows: Vec<usize>,
    fft: Fft2,
}

pub const DEFAULT_OVERSAMPLING: f64 = 2.0;
pub const DEFAULT_WIDTH: usize = 6;

impl NufftPlan {
    pub fn new(grid: Grid, coords: &[[f64; 2]]) -> Result<Self> {
        Self::with_params(grid, coords, DEFAULT_OVERSAMPLING, DEFAULT_WIDTH, 1.0 / grid.size as f64)
    }

    pub fn with_scale(grid: Grid, coords: &[[f64; 2]], scale: f64) -> Result<Self> {
        Self::with_params(grid, coords, DEFAULT_OVERSAMPLING, DEFAULT_WIDTH, scale)
    }

    /// Plan sampling every point of the `n x n` Cartesian grid at spacing
    /// `1/fov`. The corners of that square lie outside the Nyquist disc, so the
    /// disc check is skipped here.
    pub fn cartesian(grid: Grid) -> Result<Self> {
        let n = grid.size as isize;
        let dk = 1.0 / grid.fov_m;
        let coords: Vec<[f64; 2]> =
            (0..n * n).map(|i| [((i % n) - n / 2) as f64 * dk, ((i / n) - n / 2) as f64 * dk]).collect();
        Self::build(grid, &coords, DEFAULT_OVERSAMPLING, DEFAULT_WIDTH, 1.0 / grid.size as f64, false)
    }

    pub fn with_params(grid: Grid, coords: &[[f64; 2]], oversampling: f64, width: usize, scale: f64) -> Result<Self> {
        Self::build(grid, coords, oversampling, width, scale, true)
    }

    fn build(
        grid: Grid,
        coords: &[[f64; 2]],
        oversampling: f64,
        width: usize,
        scale: f64,
        check_disc: bool,
    ) -> Result<Self> {
        let n = grid.size;
        if n < 2 || n % 2 != 0 {
            return Err(Error::Invalid(format!("grid size {n} must be even")));
        }
        let mut m = (oversampling * n as f64).ceil() as usize;
        m += m % 2;
        if width > m {
            return Err(Error::Invalid("kernel wider than oversampled grid".into()));
        }
        let kernel = KaiserBessel::new(width, m as f64 / n as f64);
        let k_max = grid.k_max();
        let half = (n / 2) as isize;

        let deapod = (0..n).map(|j| 1.0 / kernel.transform((j as isize - half) as f64 / m as f64)).collect();

        let s = coords.len();
        let mut cols = Vec::with_capacity(s * width);
        let mut rows = Vec::with_capacity(s * width);
        let mut wcol = Vec::with_capacity(s * width);
        let mut wrow = Vec::with_capacity(s * width);
        let to_grid = grid.fov_m * m as f64 / n as f64;
        let half_w = 0.5 * width as f64;
        for &c in coords {
            let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if check_disc && !(r <= k_max * (1.0 + 1e-9)) {
                return Err(Error::OutsideNyquist { coord: c, k_max });
            }
            for (axis, (idx, wts)) in [(&mut cols, &mut wcol), (&mut rows, &mut wrow)].into_iter().enumerate() {
                let g = c[axis] * to_grid;
                let q0 = (g - half_w).ceil() as i64;
                for j in 0..width as i64 {
                    let q = q0 + j;
                    idx.push(q.rem_euclid(m as i64) as u32);
                    wts.push(kernel.eval(g - q as f64));
                }
            }
        }
        let nonzero_rows = (0..n).map(|j| (j + m - n / 2) % m).collect();
        Ok(Self {
            grid,
            oversampled: m,
            kernel,
            scale,
            deapod,
            coords: coords.to_vec(),
            cols,
            rows,
            wcol,
            wrow,
            nonzero_rows,
            fft: Fft2::new(m),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kernel(&self) -> KaiserBessel {
        self.kernel
    }

    fn pad_index(&self, j: usize) -> usize {
        let n = self.grid.size;
        (j + self.oversampled - n / 2) % self.oversampled
    }

    pub fn forward(&self, image: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::default(); self.len()];
        self.forward_into(image, &mut out);
        out
    }

    pub fn forward_into(&self, image: &[C64], out: &mut [C64]) {
        let n = self.grid.size;
        let m = self.oversampled;
        assert_eq!(image.len(), n * n, "image does not match plan grid");
        assert_eq!(out.len(), self.len());
        let mut buf = vec![C64::default(); m * m];
        for r in 0..n {
            let gr = self.pad_index(r);
            for c in 0..n {
                let gc = self.pad_index(c);
                buf[gr * m + gc] = image[r * n + c] * (self.deapod[r] * self.deapod[c]);
            }
        }
        self.fft.forward_rows(&mut buf, &self.nonzero_rows);
        let w = self.kernel.width;
        for (s, o) in out.iter_mut().enumerate() {
            let rows = &self.rows[s * w..(s + 1) * w];
            let cols = &self.cols[s * w..(s + 1) * w];
            let wr = &self.wrow[s * w..(s + 1) * w];
            let wc = &self.wcol[s * w..(s + 1) * w];
            let mut acc = C64::default();
            for (&ri, &a) in rows.iter().zip(wr) {
                let line = &buf[ri as usize * m..(ri as usize + 1) * m];
                let mut racc = C64::default();
                for (&ci, &b) in cols.iter().zip(wc) {
                    racc += line[ci as usize] * b;
                }
                acc += racc * a;
            }
            *o = acc * self.scale;
        }
    }

    /// Conjugate transpose of [`forward`](Self::forward), optionally weighting
    /// each sample by `dcf` first.
    pub fn adjoint(&self, samples: &[C64], dcf: Option<&[f64]>) -> Vec<C64> {
        let mut out = vec![C64::default(); self.grid.voxels()];
        self.adjoint_into(samples, dcf, &mut out);
        out
    }

    pub fn adjoint_into(&self, samples: &[C64], dcf: Option<&[f64]>, out: &mut [C64]) {
        let n = self.grid.size;
        let m = self.oversampled;
        assert_eq!(samples.len(), self.len());
        assert_eq!(out.len(), n * n);
        let mut buf = vec![C64::default(); m * m];
        let w = self.kernel.width;
        for (s, &y) in samples.iter().enumerate() {
            let y = match dcf {
                Some(d) => y * d[s],
                None => y,
            };
            let rows = &self.rows[s * w..(s + 1) * w];
            let cols = &self.cols[s * w..(s + 1) * w];
            let wr = &self.wrow[s * w..(s + 1) * w];
            let wc = &self.wcol[s * w..(s + 1) * w];
            for (&ri, &a) in rows.iter().zip(wr) {
                let ya = y * a;
                let line = &mut buf[ri as usize * m..(ri as usize + 1) * m];
                for (&ci, &b) in cols.iter().zip(wc) {
                    line[ci as usize] += ya * b;
                }
            }
        }
        self.fft.inverse_rows(&mut buf, &self.nonzero_rows);
        for r in 0..n {
            let gr = self.pad_index(r);
            for c in 0..n {
                let gc = self.pad_index(c);
                out[r * n + c] = buf[gr * m + gc] * (self.deapod[r] * self.deapod[c] * self.scale);
            }
        }
    }

    /// Exact (slow) non-uniform DFT with the same conventions, for validation.
    pub fn direct_forward(&self, image: &[C64]) -> Vec<C64> {
        direct_dft(self.grid, &self.coords, image, self.scale)
    }
}

/// Brute-force evaluation of the forward model.
pub fn direct_dft(grid: Grid, coords: &[[f64; 2]], image: &[C64], scale: f64) -> Vec<C64> {
    let n = grid.size;
    coords
        .iter()
        .map(|k| {
            let mut acc = C64::default();
            for r in 0..n {
                for c in 0..n {
                    let p = grid.position(r, c);
                    let ph = -2.0 * std::f64::consts::PI * (k[0] * p[0] + k[1] * p[1]);
                    acc += image[r * n + c] * C64::from_polar(1.0, ph);
                }
            }
            acc * scale
        })
        .collect()
}
