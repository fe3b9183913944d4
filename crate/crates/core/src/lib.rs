//! Reconstruction of undersampled spiral MR elastography data.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`simkit`] builds synthetic phantoms with known stiffness and simulates
//!   multi-coil spiral k-space.
//! - [`ops`] holds the non-Cartesian encoding operators (Kaiser-Bessel NUFFT,
//!   SENSE composition, density compensation, multi-resolution level plans).
//! - [`linrec`] provides the CG-SENSE and linear subspace baselines.
//! - [`deeprec`] represents the repetition series with a multi-level complex
//!   decoder and fits it to the undersampled data.
//! - [`wavestiff`] turns an image series into displacement and stiffness maps.
//! - [`cli`] implements the on-disk container and the `elastorec` commands.

pub mod cli;
pub mod deeprec;
pub mod error;
pub mod fft;
pub mod linrec;
pub mod ops;
pub mod simkit;
pub mod types;
pub mod wavestiff;

pub use error::{Error, Result};
pub use types::{nrmse, Grid, ImageSeries, KSpaceSet, C64};
