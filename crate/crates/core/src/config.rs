//! JSON configuration shared by the command-line subcommands.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compactor::{CompactionParams, CutoffTable};
use crate::error::{Error, Result};
use crate::profile::FilterPolicy;
use crate::surt::{MAX_HOST_DEPTH, MAX_PATH_DEPTH};
use crate::sweep::DEFAULT_WEIGHTS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub max_host_depth: usize,
    pub max_path_depth: usize,
    /// Fixed cutoff table; overrides weights when present.
    pub cutoffs: Option<CutoffTable>,
    pub weights: Vec<f64>,
    pub filter: FilterPolicy,
    /// Keys held in memory before an external sort run spills.
    pub sort_buffer: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            max_host_depth: MAX_HOST_DEPTH,
            max_path_depth: MAX_PATH_DEPTH,
            cutoffs: None,
            weights: DEFAULT_WEIGHTS.to_vec(),
            filter: FilterPolicy::default(),
            sort_buffer: 1 << 24,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_host_depth < 1 || self.max_path_depth < 1 {
            return Err(Error::Config("depth caps must be at least 1".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("invalid weight {w}")));
        }
        if self.sort_buffer == 0 {
            return Err(Error::Config("sort_buffer must be positive".into()));
        }
        Ok(())
    }

    /// Applies the depth caps to `params`.
    pub fn apply(&self, mut params: CompactionParams) -> CompactionParams {
        params.max_host_depth = self.max_host_depth;
        params.max_path_depth = self.max_path_depth;
        params
    }
}
