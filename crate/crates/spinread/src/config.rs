//! The declarative experiment config document (TOML).
//!
//! Every numeric knob of a run lives here; CLI flags only select paths
//! and the subcommand. Unknown keys are rejected during parsing.

use crate::dnn::{DnnConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::experiments::{SpikeScenarioSpec, SweepSpec, T1ExperimentSpec, DEFAULT_N_PER_CLASS};
use crate::noise::NoiseSpec;
use crate::sim::TunnelConfig;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; per-module seeds default to this unless set in their
    /// own sections.
    pub seed: u64,
    /// Traces per class for `simulate` and `train` dataset handling.
    pub n_per_class: usize,
    pub tunnel: TunnelConfig,
    pub noise: NoiseSpec,
    pub dnn: DnnConfig,
    pub train: TrainConfig,
    pub sweep: Option<SweepSpec>,
    pub spike: Option<SpikeScenarioSpec>,
    pub t1: Option<T1ExperimentSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_per_class: DEFAULT_N_PER_CLASS,
            tunnel: TunnelConfig::default(),
            noise: NoiseSpec::default(),
            dnn: DnnConfig::default(),
            train: TrainConfig::default(),
            sweep: None,
            spike: None,
            t1: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.tunnel.validate()?;
        self.noise.validate()?;
        self.dnn.validate()?;
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        if let Some(t1) = &self.t1 {
            t1.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical (re-serialized) config, for manifests.
    pub fn content_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
