//! Linear baselines: per-repetition CG-SENSE and the partially separable
//! (low-rank subspace) model `rho = U V^H`.

pub mod basis;
pub mod cg;
pub mod subspace;

pub use basis::{casorati_singular_values, temporal_basis, BasisOptions, LatentMatrix, NavigatorMethod};
pub use cg::{cg_sense, conjugate_gradient, CgOptions, CgReport};
pub use subspace::{subspace_recon, SpatialCoeffs, SubspaceOptions, SubspaceResult};
