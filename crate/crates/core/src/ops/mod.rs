//! Non-Cartesian encoding operators.

pub mod dcf;
pub mod kaiser;
pub mod levels;
pub mod nufft;
pub mod sense;

pub use dcf::make_dcf;
pub use levels::{build_level_plan, Level, LevelPlan, SegmentMode};
pub use nufft::NufftPlan;
pub use sense::{sense_adjoint, sense_forward, sense_normal, Encoding};
