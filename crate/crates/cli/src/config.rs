//! The TOML run configuration. Every field has a default, so an empty file
//! (or no file) is a valid configuration.

use std::path::Path;

use autorecon_core::circuit::{CircuitParams, SuiteConfig};
use autorecon_core::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, IoContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub reconstruction: ReconstructionSection,
    pub simulation: SimulationSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            reconstruction: ReconstructionSection::default(),
            simulation: SimulationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub seq_len: usize,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetConfig::default();
        Self {
            seq_len: d.seq_len,
            lstm_hidden: d.lstm_hidden,
            latent_dim: d.latent_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionSection {
    pub lr: f64,
    /// Budget with one missing feature.
    pub epochs_single: usize,
    /// Budget with two or more missing features.
    pub epochs_multi: usize,
    /// Starting value of every missing sample, scaled units.
    pub init: f64,
}

impl Default for ReconstructionSection {
    fn default() -> Self {
        Self {
            lr: 0.005,
            epochs_single: 300,
            epochs_multi: 3000,
            init: 0.0,
        }
    }
}

impl ReconstructionSection {
    pub fn epochs_for(&self, missing: usize) -> usize {
        if missing <= 1 {
            self.epochs_single
        } else {
            self.epochs_multi
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    pub len: usize,
    pub circuit: CircuitParams,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SuiteConfig::default();
        Self {
            dt: d.dt,
            len: d.len,
            circuit: d.params,
        }
    }
}

impl Config {
    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            params: self.simulation.circuit,
            dt: self.simulation.dt,
            len: self.simulation.len,
        }
    }

    pub fn train(&self, n_features: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            lr: self.training.lr,
            seed: self.seed,
            net: NetConfig {
                n_features,
                seq_len: self.network.seq_len,
                lstm_hidden: self.network.lstm_hidden,
                latent_dim: self.network.latent_dim,
            },
        }
    }
}
