//! Multi-level complex decoder `G(v_t | theta) = {rho_{t,1}, ..., rho_{t,K}}`.
//!
//! The latent enters as `conj(v_t)` so that the degenerate linear decoder is
//! exactly the subspace model `rho_t = U v_t^H`.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deeprec::layers::{add_feature_noise, upsample2, upsample2_backward, Activation, Conv, Dims};
use crate::error::{Error, Result};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub levels: usize,
    pub latent: usize,
    /// Hidden MLP widths; the last MLP layer always maps to `Q * c0`.
    pub mlp_hidden: Vec<usize>,
    /// Channels of the coarsest feature map.
    pub base_channels: usize,
    /// Channels halve per level down to this floor.
    pub min_channels: usize,
    pub kernel: usize,
    /// Relative std of the training-time feature noise.
    pub noise_sigma: f64,
    pub activation: Activation,
    /// Without residual blocks every level is upsampling plus projection.
    pub residual_blocks: bool,
    /// Start the last MLP layer at zero, so training starts from the zero
    /// image and puts nothing into directions the data cannot see.
    pub zero_init_last: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            latent: 8,
            mlp_hidden: vec![64, 64],
            base_channels: 16,
            min_channels: 8,
            kernel: 3,
            noise_sigma: 0.05,
            activation: Activation::Elu,
            residual_blocks: true,
            zero_init_last: false,
        }
    }
}

impl DecoderConfig {
    /// Feature channels at each level, coarsest first.
    pub fn channels(&self) -> Vec<usize> {
        let floor = self.min_channels.min(self.base_channels);
        (0..self.levels)
            .map(|k| if self.residual_blocks { (self.base_channels >> k).max(floor) } else { self.base_channels })
            .collect()
    }

    /// Output side of each level for a full-resolution grid of side `n`.
    pub fn sides(&self, n: usize) -> Vec<usize> {
        (0..self.levels).map(|k| n >> (self.levels - 1 - k)).collect()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.levels == 0 || self.latent == 0 || self.base_channels == 0 {
            return Err(Error::Invalid("decoder needs at least one level, latent and channel".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Invalid(format!("kernel size {} must be odd", self.kernel)));
        }
        if n % (1 << (self.levels - 1)) != 0 {
            return Err(Error::Invalid(format!("grid {n} not divisible by 2^{}", self.levels - 1)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Invalid("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub a: Conv,
    pub b: Conv,
    /// 1x1 projection on the skip path when the channel count changes.
    pub skip: Option<Conv>,
}

/// Trainable decoder weights plus the latent matrix (`T x L`).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub mlp: Vec<Conv>,
    pub blocks: Vec<Option<Block>>,
    pub proj: Vec<Conv>,
    pub v: Array2<C64>,
}

impl DecoderParams {
    pub fn init(cfg: &DecoderConfig, n: usize, v: Array2<C64>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate(n)?;
        if v.ncols() != cfg.latent {
            return Err(Error::Invalid(format!("latent length {} != configured {}", v.ncols(), cfg.latent)));
        }
        let chans = cfg.channels();
        let side0 = cfg.sides(n)[0];
        let mut mlp = Vec::new();
        let mut width = cfg.latent;
        for &h in &cfg.mlp_hidden {
            mlp.push(Conv::glorot(h, width, 1, rng));
            width = h;
        }
        let last = Conv::glorot(side0 * side0 * chans[0], width, 1, rng);
        mlp.push(if cfg.zero_init_last { Conv::zeros(last.cout, last.cin, 1) } else { last });
        let mut blocks = Vec::new();
        let mut proj = Vec::new();
        let mut cin = chans[0];
        for &c in &chans {
            blocks.push(cfg.residual_blocks.then(|| Block {
                a: Conv::glorot(c, cin, cfg.kernel, rng),
                b: Conv::glorot(c, c, cfg.kernel, rng),
                skip: (c != cin).then(|| Conv::glorot(c, cin, 1, rng)),
            }));
            proj.push(Conv::glorot(1, c, 1, rng));
            cin = c;
        }
        Ok(Self { mlp, blocks, proj, v })
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let z = |c: &Conv| Conv::zeros(c.cout, c.cin, c.k);
        Self {
            mlp: self.mlp.iter().map(z).collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.as_ref().map(|b| Block { a: z(&b.a), b: z(&b.b), skip: b.skip.as_ref().map(z) }))
                .collect(),
            proj: self.proj.iter().map(z).collect(),
            v: Array2::zeros(self.v.dim()),
        }
    }

    fn convs(&self) -> Vec<&Conv> {
        let mut out: Vec<&Conv> = self.mlp.iter().collect();
        for b in self.blocks.iter().flatten() {
            out.push(&b.a);
            out.push(&b.b);
            out.extend(b.skip.as_ref());
        }
        out.extend(self.proj.iter());
        out
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv> {
        let mut out: Vec<&mut Conv> = self.mlp.iter_mut().collect();
        for b in self.blocks.iter_mut().flatten() {
            out.push(&mut b.a);
            out.push(&mut b.b);
            out.extend(b.skip.as_mut());
        }
        out.extend(self.proj.iter_mut());
        out
    }

    /// Number of real network parameters (excluding the latents).
    pub fn theta_len(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }

    pub fn len(&self) -> usize {
        self.theta_len() + 2 * self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All real parameters: network weights, then latents as (re, im) pairs.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for c in self.convs() {
            for s in c.slots() {
                out.extend_from_slice(s);
            }
        }
        for z in self.v.iter() {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    pub fn load(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "parameter vector length");
        let mut pos = 0;
        for c in self.convs_mut() {
            for s in c.slots_mut() {
                let n = s.len();
                s.copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        for z in self.v.iter_mut() {
            *z = C64::new(flat[pos], flat[pos + 1]);
            pos += 2;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

struct LevelCache {
    dims: Dims,
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    out: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct Cache {
    mlp_inputs: Vec<Array2<f64>>,
    mlp_pre: Vec<Array2<f64>>,
    levels: Vec<LevelCache>,
}

/// Decoder outputs per level as `(T, side, side)` images.
pub type LevelImages = Vec<Array3<C64>>;

fn to_images(x: &Array2<f64>, d: Dims) -> Array3<C64> {
    Array3::from_shape_fn((d.reps, d.h, d.w), |(t, r, c)| {
        let j = t * d.pixels() + r * d.w + c;
        C64::new(x[[0, j]], x[[1, j]])
    })
}

fn from_images(g: &Array3<C64>) -> Array2<f64> {
    let n = g.len();
    let mut out = Array2::zeros((2, n));
    for (j, z) in g.iter().enumerate() {
        out[[0, j]] = z.re;
        out[[1, j]] = z.im;
    }
    out
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub grid_size: usize,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, grid_size: usize) -> Result<Self> {
        cfg.validate(grid_size)?;
        Ok(Self { cfg, grid_size })
    }

    pub fn sides(&self) -> Vec<usize> {
        self.cfg.sides(self.grid_size)
    }

    /// Decodes every repetition. `noise` enables the training-time feature
    /// noise; without it the call is pure.
    pub fn forward(&self, p: &DecoderParams, noise: Option<&mut ChaCha8Rng>) -> (LevelImages, Cache) {
        let act = self.cfg.activation;
        let reps = p.v.nrows();
        let latent = p.v.ncols();
        let mut noise = noise;

        // conj(v_t) as a real-pair batch of 1x1 maps.
        let mut x = Array2::zeros((2 * latent, reps));
        for t in 0..reps {
            for l in 0..latent {
                x[[l, t]] = p.v[[t, l]].re;
                x[[latent + l, t]] = -p.v[[t, l]].im;
            }
        }
        let dense = Dims { reps, h: 1, w: 1 };
        let mut mlp_inputs = Vec::new();
        let mut mlp_pre = Vec::new();
        for (i, layer) in p.mlp.iter().enumerate() {
            let y = layer.forward(&x, dense);
            mlp_inputs.push(std::mem::replace(&mut x, Array2::zeros((0, 0))));
            x = if i + 1 < p.mlp.len() { act.forward(&y) } else { y.clone() };
            mlp_pre.push(y);
        }

        let chans = self.cfg.channels();
        let sides = self.sides();
        let mut feat = unflatten_features(&x, chans[0], sides[0], reps);
        let mut dims = Dims { reps, h: sides[0], w: sides[0] };
        let mut images = Vec::with_capacity(self.cfg.levels);
        let mut levels = Vec::with_capacity(self.cfg.levels);
        for k in 0..self.cfg.levels {
            if k > 0 {
                feat = upsample2(&feat, dims);
                dims = dims.upsampled();
            }
            let (pre, hidden, out) = match &p.blocks[k] {
                Some(b) => {
                    let pre = b.a.forward(&feat, dims);
                    let mut hidden = act.forward(&pre);
                    if let Some(rng) = noise.as_deref_mut() {
                        add_feature_noise(&mut hidden, dims, self.cfg.noise_sigma, rng);
                    }
                    let mut out = b.b.forward(&hidden, dims);
                    match &b.skip {
                        Some(s) => out += &s.forward(&feat, dims),
                        None => out += &feat,
                    }
                    (pre, hidden, out)
                }
                None => (Array2::zeros((0, 0)), Array2::zeros((0, 0)), feat.clone()),
            };
            images.push(to_images(&p.proj[k].forward(&out, dims), dims));
            levels.push(LevelCache { dims, input: feat, pre, hidden, out: out.clone() });
            feat = out;
        }
        (images, Cache { mlp_inputs, mlp_pre, levels })
    }

    /// Gradients of a loss w.r.t. all parameters given its gradients w.r.t.
    /// the level images (`dL/dRe + i dL/dIm`).
    pub fn backward(&self, p: &DecoderParams, cache: &Cache, grads: &[Array3<C64>]) -> DecoderParams {
        let act = self.cfg.activation;
        let mut g = p.zeros_like();
        let mut carry: Option<Array2<f64>> = None;
        for k in (0..self.cfg.levels).rev() {
            let lc = &cache.levels[k];
            let mut g_out = p.proj[k].backward(&lc.out, &from_images(&grads[k]), lc.dims, &mut g.proj[k]);
            if let Some(c) = carry.take() {
                g_out += &c;
            }
            let mut g_in = match &p.blocks[k] {
                Some(b) => {
                    let gb = g.blocks[k].as_mut().expect("same structure");
                    let mut g_hidden = b.b.backward(&lc.hidden, &g_out, lc.dims, &mut gb.b);
                    act.backward(&lc.pre, &mut g_hidden);
                    let mut g_in = b.a.backward(&lc.input, &g_hidden, lc.dims, &mut gb.a);
                    match (&b.skip, gb.skip.as_mut()) {
                        (Some(s), Some(gs)) => g_in += &s.backward(&lc.input, &g_out, lc.dims, gs),
                        _ => g_in += &g_out,
                    }
                    g_in
                }
                None => g_out,
            };
            if k > 0 {
                let coarse = cache.levels[k - 1].dims;
                g_in = upsample2_backward(&g_in, coarse);
            }
            carry = Some(g_in);
        }

        let reps = p.v.nrows();
        let dense = Dims { reps, h: 1, w: 1 };
        let chans = self.cfg.channels();
        let mut gx = flatten_features(&carry.expect("at least one level"), chans[0], self.sides()[0], reps);
        for i in (0..p.mlp.len()).rev() {
            if i + 1 < p.mlp.len() {
                act.backward(&cache.mlp_pre[i], &mut gx);
            }
            gx = p.mlp[i].backward(&cache.mlp_inputs[i], &gx, dense, &mut g.mlp[i]);
        }
        let latent = p.v.ncols();
        for t in 0..reps {
            for l in 0..latent {
                g.v[[t, l]] = C64::new(gx[[l, t]], -gx[[latent + l, t]]);
            }
        }
        g
    }

    /// Noise-free decode of the finest level.
    pub fn decode(&self, p: &DecoderParams) -> Array3<C64> {
        self.forward(p, None).0.pop().expect("at least one level")
    }
}

/// MLP output `(2 Q c, T)` to features `(2c, T Q)`; output unit `ch * Q + pixel`.
fn unflatten_features(x: &Array2<f64>, c: usize, side: usize, reps: usize) -> Array2<f64> {
    let q = side * side;
    let qc = q * c;
    let mut out = Array2::zeros((2 * c, reps * q));
    for part in 0..2 {
        for ch in 0..c {
            for t in 0..reps {
                for j in 0..q {
                    out[[part * c + ch, t * q + j]] = x[[part * qc + ch * q + j, t]];
                }
            }
        }
    }
    out
}

fn flatten_features(g: &Array2<f64>, c: usize, side: usize, reps: usize) -> Array2<f64> {
    let q = side * side;
    let qc = q * c;
    let mut out = Array2::zeros((2 * qc, reps));
    for part in 0..2 {
        for ch in 0..c {
            for t in 0..reps {
                for j in 0..q {
                    out[[part * qc + ch * q + j, t]] = g[[part * c + ch, t * q + j]];
                }
            }
        }
    }
    out
}

/// Random complex latents for tests and tooling.
pub fn random_latents(reps: usize, latent: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    Array2::from_shape_fn((reps, latent), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup() -> (Decoder, DecoderParams) {
        let cfg = DecoderConfig {
            levels: 3,
            latent: 4,
            mlp_hidden: vec![8],
            base_channels: 4,
            min_channels: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_latents(3, 4, &mut rng);
        let p = DecoderParams::init(&cfg, 16, v, &mut rng).unwrap();
        (Decoder::new(cfg, 16).unwrap(), p)
    }

    #[test]
    fn level_sides_follow_grid() {
        let cfg = DecoderConfig::default();
        assert_eq!(cfg.sides(64), vec![16, 32, 64]);
        assert_eq!(cfg.channels(), vec![16, 8, 8]);
        let (dec, p) = setup();
        let (imgs, _) = dec.forward(&p, None);
        let dims: Vec<_> = imgs.iter().map(|i| i.dim()).collect();
        assert_eq!(dims, vec![(3, 4, 4), (3, 8, 8), (3, 16, 16)]);
    }

    #[test]
    fn zero_projection_gives_zero_images() {
        let (dec, mut p) = setup();
        for c in p.proj.iter_mut() {
            *c = Conv::zeros(c.cout, c.cin, c.k);
        }
        let (imgs, _) = dec.forward(&p, None);
        assert!(imgs.iter().all(|i| i.iter().all(|z| *z == C64::default())));
    }

    #[test]
    fn inference_is_deterministic_and_training_noise_is_seeded() {
        let (dec, p) = setup();
        assert_eq!(dec.forward(&p, None).0, dec.forward(&p, None).0);
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let na = dec.forward(&p, Some(&mut a)).0;
        assert_eq!(na, dec.forward(&p, Some(&mut b)).0);
        assert_ne!(na, dec.forward(&p, None).0);
    }

    #[test]
    fn flatten_round_trips() {
        let (_, p) = setup();
        let mut q = p.zeros_like();
        q.load(&p.flatten());
        assert_eq!(p, q);
        assert_eq!(p.flatten().len(), p.len());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (dec, p) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Random linear functional of the outputs: L = sum Re(conj(w) rho).
        let (imgs, cache) = dec.forward(&p, None);
        let weights: Vec<Array3<C64>> = imgs
            .iter()
            .map(|i| {
                Array3::from_shape_fn(i.dim(), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            })
            .collect();
        let loss = |q: &DecoderParams| -> f64 {
            let (o, _) = dec.forward(q, None);
            o.iter().zip(&weights).map(|(a, w)| a.iter().zip(w).map(|(x, y)| (y.conj() * x).re).sum::<f64>()).sum()
        };
        let grad = dec.backward(&p, &cache, &weights).flatten();
        let base = p.flatten();
        let mut q = p.clone();
        for _ in 0..40 {
            let i = rng.random_range(0..base.len());
            let h = 1e-5;
            let mut x = base.clone();
            x[i] += h;
            q.load(&x);
            let lp = loss(&q);
            x[i] -= 2.0 * h;
            q.load(&x);
            let lm = loss(&q);
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * fd.abs().max(grad[i].abs()).max(1e-3),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }
}
