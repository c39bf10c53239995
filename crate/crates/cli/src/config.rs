use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use broomscan_core::balance::{BalanceMethod, SmoteMode, DEFAULT_K};
use broomscan_core::features::FeatureConfig;
use broomscan_core::phenology::{DEFAULT_STAGES, DEFAULT_TBASE};
use broomscan_core::pipeline::CanopyConfig;
use broomscan_core::scenarios::{ScenarioConfig, ScenarioId};
use broomscan_core::synthgen::SynthConfig;
use broomscan_core::{ModelConfig, Provenance, TrainConfig};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub panels: Option<PathBuf>,
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhenologyConfig {
    pub tbase: f64,
    pub targets: Vec<f64>,
}

impl Default for PhenologyConfig {
    fn default() -> Self {
        PhenologyConfig {
            tbase: DEFAULT_TBASE,
            targets: DEFAULT_STAGES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub method: BalanceMethod,
    pub k: usize,
    /// Final size of the balanced class; defaults to the other class's size.
    pub target: Option<usize>,
    pub mode: SmoteMode,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            method: BalanceMethod::Smote,
            k: DEFAULT_K,
            target: None,
            mode: SmoteMode::Sequence,
        }
    }
}

/// Everything a run depends on. The top-level seed replaces the seeds of the
/// nested sections so one flag controls all randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub phenology: PhenologyConfig,
    pub canopy: CanopyConfig,
    pub features: FeatureConfig,
    pub balance: BalanceConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            phenology: PhenologyConfig::default(),
            canopy: CanopyConfig::default(),
            features: FeatureConfig::default(),
            balance: BalanceConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scenarios: ScenarioId::ALL
                .iter()
                .map(|&id| ScenarioConfig::new(id, 0))
                .collect(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Short SHA-256 of the canonical JSON form, after seeds are unified.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.resolved()).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_owned()
    }

    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.synth.seed = c.seed;
        c.train.seed = c.seed;
        for s in &mut c.scenarios {
            s.seed = c.seed;
        }
        c
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"seed": 4, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.scenarios.len(), 4);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.epochs = 7;
        assert_ne!(a.hash(), b.hash());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
    }
}
