//! Complex layers on a real-pair layout.
//!
//! A feature tensor with `c` complex channels over `t` repetitions of an
//! `h x w` map is a `(2c, t*h*w)` real matrix: rows `0..c` hold real parts,
//! rows `c..2c` imaginary parts. Gradients use the same layout, so a gradient
//! row pair is `(dL/dRe, dL/dIm)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// ELU applied separately to real and imaginary parts.
    #[default]
    Elu,
    Identity,
}

impl Activation {
    pub fn forward(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Elu => x.mapv(|v| if v > 0.0 { v } else { v.exp_m1() }),
            Activation::Identity => x.clone(),
        }
    }

    /// Multiplies `g` by the derivative at the pre-activation `x`.
    pub fn backward(self, x: &Array2<f64>, g: &mut Array2<f64>) {
        if self == Activation::Elu {
            g.zip_mut_with(x, |g, &v| {
                if v <= 0.0 {
                    *g *= v.exp();
                }
            });
        }
    }
}

/// Spatial extent of a feature batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub reps: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn cols(&self) -> usize {
        self.reps * self.h * self.w
    }

    pub fn upsampled(&self) -> Dims {
        Dims { reps: self.reps, h: 2 * self.h, w: 2 * self.w }
    }
}

/// Complex `k x k` convolution (cross-correlation, zero "same" padding).
/// With `k = 1` on `1 x 1` maps it is a dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub cout: usize,
    pub cin: usize,
    pub k: usize,
    /// `[cout][cin][k*k]`
    pub wr: Vec<f64>,
    pub wi: Vec<f64>,
    pub br: Vec<f64>,
    pub bi: Vec<f64>,
}

impl Conv {
    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        let n = cout * cin * k * k;
        Self { cout, cin, k, wr: vec![0.0; n], wi: vec![0.0; n], br: vec![0.0; cout], bi: vec![0.0; cout] }
    }

    /// Complex Glorot initialisation: real and imaginary parts are drawn
    /// independently from `N(0, 1 / (fan_in + fan_out))`, giving
    /// `E|w|^2 = 2 / (fan_in + fan_out)`. Biases start at zero.
    pub fn glorot<R: Rng>(cout: usize, cin: usize, k: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(cout, cin, k);
        let std = (1.0 / ((cin + cout) * k * k) as f64).sqrt();
        for (r, i) in c.wr.iter_mut().zip(c.wi.iter_mut()) {
            *r = std * rng.sample::<f64, _>(StandardNormal);
            *i = std * rng.sample::<f64, _>(StandardNormal);
        }
        c
    }

    pub fn param_count(&self) -> usize {
        2 * (self.wr.len() + self.br.len())
    }

    pub fn slots_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.wr, &mut self.wi, &mut self.br, &mut self.bi]
    }

    pub fn slots(&self) -> [&Vec<f64>; 4] {
        [&self.wr, &self.wi, &self.br, &self.bi]
    }

    fn taps(&self) -> usize {
        self.k * self.k
    }

    /// The equivalent real matrix `[[Wr, -Wi], [Wi, Wr]]` acting on im2col rows.
    fn real_matrix(&self) -> Array2<f64> {
        let (co, ci, kk) = (self.cout, self.cin, self.taps());
        let mut m = Array2::zeros((2 * co, 2 * ci * kk));
        for o in 0..co {
            for c in 0..ci {
                for j in 0..kk {
                    let idx = (o * ci + c) * kk + j;
                    let (wr, wi) = (self.wr[idx], self.wi[idx]);
                    m[[o, c * kk + j]] = wr;
                    m[[o, (ci + c) * kk + j]] = -wi;
                    m[[co + o, c * kk + j]] = wi;
                    m[[co + o, (ci + c) * kk + j]] = wr;
                }
            }
        }
        m
    }

    /// im2col of repetition `t`: `(rows * k^2, h * w)`.
    fn im2col(&self, x: &Array2<f64>, d: Dims, t: usize) -> Array2<f64> {
        let kk = self.taps();
        let half = (self.k / 2) as isize;
        let (h, w, hw) = (d.h as isize, d.w as isize, d.pixels());
        let mut col = Array2::zeros((x.nrows() * kk, hw));
        for ch in 0..x.nrows() {
            let row = x.row(ch);
            let src = &row.as_slice().expect("contiguous rows")[t * hw..(t + 1) * hw];
            for j in 0..kk {
                let dy = (j / self.k) as isize - half;
                let dx = (j % self.k) as isize - half;
                let mut dst = col.row_mut(ch * kk + j);
                let dst = dst.as_slice_mut().expect("contiguous rows");
                for r in 0..h {
                    let rr = r + dy;
                    if rr < 0 || rr >= h {
                        continue;
                    }
                    let c0 = (-dx).max(0);
                    let c1 = (w - dx).min(w);
                    let out = (r * w) as usize;
                    let inp = (rr * w + dx) as usize;
                    dst[out + c0 as usize..out + c1 as usize]
                        .copy_from_slice(&src[(inp as isize + c0) as usize..(inp as isize + c1) as usize]);
                }
            }
        }
        col
    }

    /// Adjoint of [`Conv::im2col`], accumulated into repetition `t` of `x`.
    fn col2im(&self, col: &Array2<f64>, x: &mut Array2<f64>, d: Dims, t: usize) {
        let kk = self.taps();
        let half = (self.k / 2) as isize;
        let (h, w, hw) = (d.h as isize, d.w as isize, d.pixels());
        for ch in 0..x.nrows() {
            let mut row = x.row_mut(ch);
            let dst = &mut row.as_slice_mut().expect("contiguous rows")[t * hw..(t + 1) * hw];
            for j in 0..kk {
                let dy = (j / self.k) as isize - half;
                let dx = (j % self.k) as isize - half;
                let src = col.row(ch * kk + j);
                let src = src.as_slice().expect("contiguous rows");
                for r in 0..h {
                    let rr = r + dy;
                    if rr < 0 || rr >= h {
                        continue;
                    }
                    let c0 = (-dx).max(0);
                    let c1 = (w - dx).min(w);
                    let out = (r * w) as usize;
                    let inp = (rr * w + dx) as usize;
                    for c in c0..c1 {
                        dst[(inp as isize + c) as usize] += src[out + c as usize];
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Array2<f64>, d: Dims) -> Array2<f64> {
        debug_assert_eq!(x.nrows(), 2 * self.cin);
        let m = self.real_matrix();
        let mut y = if self.k == 1 {
            m.dot(x)
        } else {
            let hw = d.pixels();
            let mut y = Array2::zeros((2 * self.cout, d.cols()));
            for t in 0..d.reps {
                let col = self.im2col(x, d, t);
                general_mat_mul(1.0, &m, &col, 0.0, &mut y.slice_mut(s![.., t * hw..(t + 1) * hw]));
            }
            y
        };
        for o in 0..self.cout {
            y.row_mut(o).mapv_inplace(|v| v + self.br[o]);
            y.row_mut(self.cout + o).mapv_inplace(|v| v + self.bi[o]);
        }
        y
    }

    /// Returns the input gradient and accumulates parameter gradients into `grad`.
    pub fn backward(&self, x: &Array2<f64>, gy: &Array2<f64>, d: Dims, grad: &mut Conv) -> Array2<f64> {
        let (co, ci, kk) = (self.cout, self.cin, self.taps());
        let m = self.real_matrix();
        let (gm, gx) = if self.k == 1 {
            (gy.dot(&x.t()), m.t().dot(gy))
        } else {
            let hw = d.pixels();
            let mut gm = Array2::zeros(m.dim());
            let mut gx = Array2::zeros((2 * ci, d.cols()));
            for t in 0..d.reps {
                let col = self.im2col(x, d, t);
                let gyt = gy.slice(s![.., t * hw..(t + 1) * hw]);
                general_mat_mul(1.0, &gyt, &col.t(), 1.0, &mut gm);
                let gcol = m.t().dot(&gyt);
                self.col2im(&gcol, &mut gx, d, t);
            }
            (gm, gx)
        };
        for o in 0..co {
            for c in 0..ci {
                for j in 0..kk {
                    let idx = (o * ci + c) * kk + j;
                    grad.wr[idx] += gm[[o, c * kk + j]] + gm[[co + o, (ci + c) * kk + j]];
                    grad.wi[idx] += gm[[co + o, c * kk + j]] - gm[[o, (ci + c) * kk + j]];
                }
            }
            grad.br[o] += gy.row(o).sum();
            grad.bi[o] += gy.row(co + o).sum();
        }
        gx
    }
}

/// Per-axis bilinear weights for 2x upsampling with half-pixel centres
/// (`align_corners = false`): `(i0, i1, frac)` for every output index.
fn axis_weights(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2(x: &Array2<f64>, d: Dims) -> Array2<f64> {
    let u = d.upsampled();
    let wy = axis_weights(d.h);
    let wx = axis_weights(d.w);
    let mut out = Array2::zeros((x.nrows(), u.cols()));
    for (src, mut dst) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let src = src.as_slice().expect("contiguous rows");
        let dst = dst.as_slice_mut().expect("contiguous rows");
        for t in 0..d.reps {
            let s = &src[t * d.pixels()..(t + 1) * d.pixels()];
            let o = &mut dst[t * u.pixels()..(t + 1) * u.pixels()];
            for (r, &(r0, r1, fr)) in wy.iter().enumerate() {
                for (c, &(c0, c1, fc)) in wx.iter().enumerate() {
                    let top = s[r0 * d.w + c0] * (1.0 - fc) + s[r0 * d.w + c1] * fc;
                    let bot = s[r1 * d.w + c0] * (1.0 - fc) + s[r1 * d.w + c1] * fc;
                    o[r * u.w + c] = top * (1.0 - fr) + bot * fr;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]; `d` is the coarse extent.
pub fn upsample2_backward(g: &Array2<f64>, d: Dims) -> Array2<f64> {
    let u = d.upsampled();
    let wy = axis_weights(d.h);
    let wx = axis_weights(d.w);
    let mut out = Array2::zeros((g.nrows(), d.cols()));
    for (src, mut dst) in g.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let src = src.as_slice().expect("contiguous rows");
        let dst = dst.as_slice_mut().expect("contiguous rows");
        for t in 0..d.reps {
            let s = &src[t * u.pixels()..(t + 1) * u.pixels()];
            let o = &mut dst[t * d.pixels()..(t + 1) * d.pixels()];
            for (r, &(r0, r1, fr)) in wy.iter().enumerate() {
                for (c, &(c0, c1, fc)) in wx.iter().enumerate() {
                    let v = s[r * u.w + c];
                    o[r0 * d.w + c0] += v * (1.0 - fr) * (1.0 - fc);
                    o[r0 * d.w + c1] += v * (1.0 - fr) * fc;
                    o[r1 * d.w + c0] += v * fr * (1.0 - fc);
                    o[r1 * d.w + c1] += v * fr * fc;
                }
            }
        }
    }
    out
}

/// Adds complex Gaussian noise with standard deviation `rel` times the RMS
/// of each (channel, repetition) map. The noise is a constant for backprop.
pub fn add_feature_noise<R: Rng>(x: &mut Array2<f64>, d: Dims, rel: f64, rng: &mut R) {
    let c = x.nrows() / 2;
    let hw = d.pixels();
    for ch in 0..c {
        for t in 0..d.reps {
            let (lo, hi) = (t * hw, (t + 1) * hw);
            let re = x.slice(s![ch, lo..hi]);
            let im = x.slice(s![c + ch, lo..hi]);
            let energy: f64 = re.iter().chain(im.iter()).map(|v| v * v).sum();
            let std = rel * (energy / hw as f64).sqrt() / std::f64::consts::SQRT_2;
            for j in t * hw..(t + 1) * hw {
                x[[ch, j]] += std * rng.sample::<f64, _>(StandardNormal);
                x[[c + ch, j]] += std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_direct_complex_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv::glorot(2, 3, 3, &mut rng);
        let d = Dims { reps: 2, h: 4, w: 5 };
        let x = random(&mut rng, 6, d.cols());
        let y = conv.forward(&x, d);
        let at = |ch: usize, t: usize, r: isize, c: isize| -> C64 {
            if r < 0 || c < 0 || r >= 4 || c >= 5 {
                return C64::default();
            }
            let j = t * 20 + (r * 5 + c) as usize;
            C64::new(x[[ch, j]], x[[3 + ch, j]])
        };
        for o in 0..2 {
            for t in 0..2 {
                for r in 0..4isize {
                    for c in 0..5isize {
                        let mut acc = C64::new(conv.br[o], conv.bi[o]);
                        for ci in 0..3 {
                            for j in 0..9 {
                                let idx = (o * 3 + ci) * 9 + j;
                                let w = C64::new(conv.wr[idx], conv.wi[idx]);
                                acc += w * at(ci, t, r + (j / 3) as isize - 1, c + (j % 3) as isize - 1);
                            }
                        }
                        let col = t * 20 + (r * 5 + c) as usize;
                        assert!((acc - C64::new(y[[o, col]], y[[2 + o, col]])).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv::glorot(3, 2, 3, &mut rng);
        conv.br.iter_mut().for_each(|b| *b = 0.0);
        conv.bi.iter_mut().for_each(|b| *b = 0.0);
        let d = Dims { reps: 3, h: 5, w: 4 };
        let x = random(&mut rng, 4, d.cols());
        let g = random(&mut rng, 6, d.cols());
        let y = conv.forward(&x, d);
        let mut grad = Conv::zeros(3, 2, 3);
        let gx = conv.backward(&x, &g, d, &mut grad);
        let lhs = (&y * &g).sum();
        let rhs = (&x * &gx).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn upsample_adjoint_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims { reps: 2, h: 3, w: 4 };
        let x = random(&mut rng, 2, d.cols());
        let g = random(&mut rng, 2, d.upsampled().cols());
        let lhs = (&upsample2(&x, d) * &g).sum();
        let rhs = (&x * &upsample2_backward(&g, d)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let ones = Array2::from_elem((1, d.cols()), 1.0);
        assert!(upsample2(&ones, d).iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn upsample_interpolates_half_pixel_centres() {
        let d = Dims { reps: 1, h: 1, w: 2 };
        let x = Array2::from_shape_vec((1, 2), vec![0.0, 4.0]).unwrap();
        let y = upsample2(&x, d);
        assert_eq!(y.row(0).to_vec(), vec![0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}
