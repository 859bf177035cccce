//! TOML run configuration shared by every pipeline command.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SynthCorpusSpec;
use crate::error::{Error, Result};
use crate::model::{AblationVariant, ModelConfig};
use crate::scoring::{CohortSelection, DcfConfig};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    Desk,
    Tiny,
    Paper512,
    Paper1024,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub preset: ModelPreset,
    /// Overrides the preset's trunk width.
    pub channels: Option<usize>,
    pub ablation: Option<AblationVariant>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: ModelPreset::Desk,
            channels: None,
            ablation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSection {
    /// Top-N cohort scores per side; absent means the whole cohort.
    pub cohort_top_n: Option<usize>,
    pub dcf: DcfConfig,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self {
            cohort_top_n: Some(1000),
            dcf: DcfConfig::default(),
        }
    }
}

impl ScoreSection {
    pub fn selection(&self) -> CohortSelection {
        self.cohort_top_n.map_or(CohortSelection::All, CohortSelection::TopN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthCorpusSpec,
    pub score: ScoreSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSection::default(),
            train: TrainConfig::desk(),
            synth: SynthCorpusSpec::default(),
            score: ScoreSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = match self.model.preset {
            ModelPreset::Desk => ModelConfig::desk(),
            ModelPreset::Tiny => ModelConfig::tiny(),
            ModelPreset::Paper512 => ModelConfig::paper(512),
            ModelPreset::Paper1024 => ModelConfig::paper(1024),
        };
        if let Some(ch) = self.model.channels {
            c.channels = ch;
        }
        if let Some(v) = self.model.ablation {
            c = c.apply_ablation(v);
        }
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[model]\npreset = \"tiny\"\nablation = \"B2\"\n[train]\niterations = 7\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.train.batch_size, TrainConfig::desk().batch_size);
        let m = c.model_config().unwrap();
        assert_eq!(m.channels, 16);
        assert!(!m.ablation.res2_enabled);
    }

    #[test]
    fn round_trip_and_hash() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
        assert!(RunConfig::from_toml("nonsense = [").is_err());
    }
}
