use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::restore::{default_grid, RestoreConfig};
use crate::tiltcorrect::{FlowConfig, Reference};
use crate::turbsim::TurbulenceParams;

/// Whole-pipeline configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed applied to every stage when present.
    pub seed: Option<u64>,
    pub simulate: SimulateSection,
    pub basis: BasisSection,
    pub tiltcorrect: TiltSection,
    pub restore: RestoreConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Size of the synthetic scene when no clean image is given.
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub n_frames: usize,
    /// `None` means 16 px regions.
    pub region_grid: Option<(usize, usize)>,
    pub turbulence: TurbulenceParams,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            channels: 1,
            n_frames: 50,
            region_grid: None,
            turbulence: TurbulenceParams::default(),
        }
    }
}

impl SimulateSection {
    pub fn grid_for(&self, width: usize, height: usize) -> (usize, usize) {
        self.region_grid.unwrap_or_else(|| default_grid(width, height))
    }
}

/// Ensemble sampling for `basis`; kernel shape parameters come from
/// `simulate.turbulence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub ensemble_size: usize,
    pub n_components: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            ensemble_size: 512,
            n_components: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltSection {
    pub reference: Reference,
    pub flow: FlowConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config = serde_json::from_str(&text)?;
        if let Some(s) = cfg.seed {
            cfg.set_seed(s);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.simulate.turbulence.seed = seed;
        self.restore.seed = seed;
    }
}
