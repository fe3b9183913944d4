//! Synthetic elastography phantoms and spiral acquisitions.
//!
//! A phantom is a disc-shaped support with piecewise-constant stiffness
//! inclusions. Inside each homogeneous region the displacement is a plane
//! wave with the region's Helmholtz wavenumber, so the stiffness that an
//! algebraic inversion should recover is known in closed form.

pub mod acquire;
pub mod encode;
pub mod phantom;
pub mod scenario;
pub mod spiral;
pub mod wave;

pub use acquire::{simulate_kspace, undersample};
pub use encode::{encode_repetitions, MegSpec, Polarity, RepIndex};
pub use phantom::{make_phantom, Inclusion, PhantomSpec, PhantomTruth};
pub use scenario::{simulate, SimConfig, Simulation};
pub use spiral::{make_spiral, Trajectory};
pub use wave::{synth_wavefield, VibrationSpec, WaveField, WaveSource};
