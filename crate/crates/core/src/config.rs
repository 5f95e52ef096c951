//! Human-readable pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::TrainConfig;
use crate::dataset::NamedLayout;
use crate::error::{Error, Result};
use crate::library::LibraryConfig;
use crate::offline::OfflineConfig;
use crate::online::OnlineConfig;
use crate::params::{FrequencyGrid, ParameterBounds};

/// Frequency constants of the offline training grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub c_lower: usize,
    pub c_upper: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { c_lower: 10, c_upper: 5 }
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub layouts: Vec<NamedLayout>,
    pub noise_levels: Vec<f64>,
    pub n_part: usize,
    pub n_cap: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            seed: 1,
            layouts: vec![NamedLayout::near(), NamedLayout::far()],
            noise_levels: vec![0.02],
            n_part: 30,
            n_cap: None,
        }
    }
}

/// Train-test evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub n_tt: Vec<usize>,
    pub sigma: Vec<f64>,
    pub phi: f64,
    pub n_part: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { n_tt: vec![250, 500, 1000, 2000], sigma: vec![0.0, 0.02], phi: 0.7, n_part: 30, seed: 11, train: TrainConfig::default() }
    }
}

/// The single source of truth for every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub library: LibraryConfig,
    pub bounds: ParameterBounds,
    pub offline: OfflineConfig,
    pub offline_grid: GridConfig,
    pub online: OnlineConfig,
    pub dataset: DatasetConfig,
    pub evaluate: EvaluateConfig,
}

impl PipelineConfig {
    /// Desk-scale defaults.
    pub fn full() -> Self {
        Self { name: "full".into(), ..Self::default() }
    }

    /// Coarse settings for quick end-to-end runs.
    pub fn smoke() -> Self {
        let mut c = Self::full();
        c.name = "smoke".into();
        c.library.h = 0.5;
        c.library.crack_depth = 0.5;
        c.offline_grid = GridConfig { c_lower: 5, c_upper: 2 };
        c.offline.n_train_port = 40;
        c.offline.n_train_bubble = 12;
        c.offline.n_train_inhomogeneity = 12;
        c.online.c_lower = 5;
        c.online.c_upper = 2;
        c.online.n_steps = 2000;
        c.dataset.n_samples = 50;
        c.dataset.n_part = 3;
        c.evaluate.n_tt = vec![50];
        c.evaluate.n_part = 3;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.library.h > 0.0) || self.library.h > self.library.thickness {
            return Err(Error::Config(format!("mesh size h = {} must lie in (0, thickness]", self.library.h)));
        }
        FrequencyGrid::new(self.offline_grid.c_lower, self.offline_grid.c_upper, self.bounds.sigma_t_ref())?;
        FrequencyGrid::new(self.online.c_lower, self.online.c_upper, self.bounds.sigma_t_ref())?;
        if self.online.n_steps < 2 || self.online.greedy_tol <= 0.0 || self.online.max_basis == 0 {
            return Err(Error::Config("online settings need n_steps >= 2, greedy_tol > 0, max_basis > 0".into()));
        }
        if !(self.evaluate.phi > 0.0 && self.evaluate.phi < 1.0) || self.evaluate.n_part == 0 {
            return Err(Error::Config("evaluate settings need 0 < phi < 1 and n_part > 0".into()));
        }
        if let Some(&n) = self.evaluate.n_tt.iter().max() {
            if n > self.dataset.n_samples {
                return Err(Error::Config(format!("n_tt = {n} exceeds the dataset size {}", self.dataset.n_samples)));
            }
        }
        Ok(())
    }

    pub fn offline_frequencies(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.offline_grid.c_lower, self.offline_grid.c_upper, self.bounds.sigma_t_ref())
    }

    /// Hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Hash of the settings that determine the offline cache.
    pub fn offline_hash(&self) -> String {
        let key = (&self.library, &self.bounds, &self.offline, &self.offline_grid);
        hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("config serializes")))
    }
}
