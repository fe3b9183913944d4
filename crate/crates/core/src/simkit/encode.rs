use std::f64::consts::PI;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::phantom::PhantomTruth;
use crate::simkit::wave::VibrationSpec;
use crate::{ImageSeries, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

/// Position of a repetition in the (direction, polarity, offset) acquisition grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepIndex {
    pub direction: usize,
    pub polarity: Polarity,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityOrder {
    /// `t = (d * 2 + polarity) * P + p`, positive polarity first.
    #[default]
    DirectionPolarityOffset,
    /// `t = (d * P + p) * 2 + polarity`.
    DirectionOffsetPolarity,
}

/// Motion-encoding gradient settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MegSpec {
    pub encoding_rad_per_m: f64,
    pub polarity_order: PolarityOrder,
    pub n_directions: usize,
    pub n_offsets: usize,
}

impl Default for MegSpec {
    fn default() -> Self {
        // 2.5 rad peak wave phase for the default 20 um amplitude.
        Self {
            encoding_rad_per_m: 2.5 / 20e-6,
            polarity_order: PolarityOrder::default(),
            n_directions: 3,
            n_offsets: 4,
        }
    }
}

impl MegSpec {
    pub fn for_vibration(vib: &VibrationSpec, encoding_rad_per_m: f64) -> Self {
        Self {
            encoding_rad_per_m,
            polarity_order: PolarityOrder::default(),
            n_directions: vib.n_directions,
            n_offsets: vib.n_offsets,
        }
    }

    pub fn reps(&self) -> usize {
        self.n_directions * 2 * self.n_offsets
    }

    pub fn rep(&self, idx: RepIndex) -> usize {
        let pol = match idx.polarity {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        };
        let p = self.n_offsets;
        match self.polarity_order {
            PolarityOrder::DirectionPolarityOffset => (idx.direction * 2 + pol) * p + idx.offset,
            PolarityOrder::DirectionOffsetPolarity => (idx.direction * p + idx.offset) * 2 + pol,
        }
    }

    pub fn index(&self, t: usize) -> RepIndex {
        let p = self.n_offsets;
        let (direction, pol, offset) = match self.polarity_order {
            PolarityOrder::DirectionPolarityOffset => (t / (2 * p), (t / p) % 2, t % p),
            PolarityOrder::DirectionOffsetPolarity => (t / (2 * p), t % 2, (t / 2) % p),
        };
        RepIndex { direction, polarity: if pol == 0 { Polarity::Positive } else { Polarity::Negative }, offset }
    }

    /// `(positive, negative)` repetition pairs ordered by direction then offset.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_directions * self.n_offsets);
        for direction in 0..self.n_directions {
            for offset in 0..self.n_offsets {
                let plus = self.rep(RepIndex { direction, polarity: Polarity::Positive, offset });
                let minus = self.rep(RepIndex { direction, polarity: Polarity::Negative, offset });
                out.push((plus, minus));
            }
        }
        out
    }

    /// Checks that a series of `reps` repetitions contains every polarity partner.
    pub fn check_pairs(&self, reps: usize) -> Result<()> {
        for (p, m) in self.pairs() {
            if p >= reps {
                return Err(Error::MissingPartner { rep: m });
            }
            if m >= reps {
                return Err(Error::MissingPartner { rep: p });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.encoding_rad_per_m >= 0.0) {
            return Err(Error::Invalid("encoding_rad_per_m must be nonnegative".into()));
        }
        if self.n_offsets < 3 || self.n_directions == 0 {
            return Err(Error::Invalid("need >= 3 offsets and >= 1 direction".into()));
        }
        Ok(())
    }
}

/// `rho_t = m exp(i [phi_static + s gamma Re(u_d exp(-i 2 pi p / P))])`.
pub fn encode_repetitions(truth: &PhantomTruth, u: &Array3<C64>, meg: &MegSpec) -> Result<ImageSeries> {
    meg.validate()?;
    let n = truth.grid.size;
    if u.dim() != (meg.n_directions, n, n) {
        return Err(Error::Invalid(format!("displacement shape {:?} does not match MEG/grid", u.dim())));
    }
    let reps = meg.reps();
    let mut frames = Array3::<C64>::zeros((reps, n, n));
    for t in 0..reps {
        let idx = meg.index(t);
        let rot = C64::from_polar(1.0, -2.0 * PI * idx.offset as f64 / meg.n_offsets as f64);
        let s = idx.polarity.sign();
        for r in 0..n {
            for c in 0..n {
                let wave = (u[[idx.direction, r, c]] * rot).re;
                let phase = truth.static_phase_map[[r, c]] + s * meg.encoding_rad_per_m * wave;
                frames[[t, r, c]] = C64::from_polar(truth.magnitude_map[[r, c]], phase);
            }
        }
    }
    Ok(ImageSeries { grid: truth.grid, frames })
}
