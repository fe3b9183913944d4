//! Deep network representation of the image series: a multi-level complex
//! decoder `rho_t = G(v_t | theta)` trained from undersampled k-space alone.

pub mod decoder;
pub mod layers;
pub mod losses;
pub mod train;

pub use decoder::{Decoder, DecoderConfig, DecoderParams};
pub use layers::Activation;
pub use losses::{loss_dc, loss_latent, loss_magnitude, loss_wave_tv, LevelData, Pairs};
pub use train::{
    data_scale, grad_check, objective_from_plan, optimize, prepare, train, Adam, GradCheckReport, LossTerms, LossTrace,
    Objective, TrainAbort, TrainConfig, TrainError, TrainOutput, Weights,
};
