//! Declarative run configuration (TOML). Every field has a default, so an
//! empty file — or no file — yields the reference configuration.

use std::path::{Path, PathBuf};

use flexcast_core::data::{GraphParams, SplitSpec};
use flexcast_core::model::ModelConfig;
use flexcast_core::training::{TrainConfig, TransferScope};
use flexcast_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable consulted when no `--seed` is given.
pub const SEED_ENV: &str = "FLEXCAST_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub stations: Option<PathBuf>,
    pub tiles: Option<PathBuf>,
    pub traffic: Option<PathBuf>,
    /// Prepared dataset directory.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    pub scope: TransferScope,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            scope: TransferScope::All,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds splits, initialisation, shuffling and dropout when set.
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub graph: GraphParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub transfer: TransferSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    /// Loads `path` when given, the defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.graph.kappa_km > 0.0) || self.graph.max_degree == 0 {
            return Err(Error::Config(format!(
                "graph needs kappa_km > 0 and max_degree ≥ 1, got {:?}",
                self.graph
            )));
        }
        Ok(())
    }

    /// Resolves the run seed (`--seed`, then the environment, then
    /// `fallback`, then the file, then 0) and threads it through every seeded
    /// component.
    pub fn apply_seed(&mut self, flag: Option<u64>, fallback: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
            })?),
            Err(_) => None,
        };
        let seed = flag.or(env).or(fallback).or(self.seed).unwrap_or(0);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.split.seed = seed;
        Ok(seed)
    }
}
