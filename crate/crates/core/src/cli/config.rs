//! Experiment configuration: one JSON document with a section per stage.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deeprec::{DecoderConfig, TrainConfig};
use crate::error::Result;
use crate::linrec::{BasisOptions, CgOptions, SubspaceOptions};
use crate::simkit::SimConfig;
use crate::wavestiff::WaveConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Arms kept per repetition when `--arms` is not given.
    pub arms_per_rep: usize,
    pub cg: CgOptions,
    pub rank: usize,
    pub basis: BasisOptions,
    pub subspace: SubspaceOptions,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            arms_per_rep: 1,
            cg: CgOptions::default(),
            rank: 12,
            basis: BasisOptions::default(),
            subspace: SubspaceOptions::default(),
            decoder: DecoderConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Region erosion in voxels; `None` erodes by one local shear wavelength.
    pub erosion_voxels: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { erosion_voxels: Some(2) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulation: SimConfig,
    pub recon: ReconConfig,
    pub wave: WaveConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = ExperimentConfig::from_json(r#"{"recon": {"rank": 4}}"#).unwrap();
        assert_eq!(partial.recon.rank, 4);
        assert_ne!(partial.hash(), cfg.hash());
        assert!(ExperimentConfig::from_json(r#"{"recon": {"rnak": 4}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"extra": 1}"#).is_err());
    }
}
