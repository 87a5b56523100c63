//! Run configuration: one TOML document with `data`, `encoders`, `loss`,
//! `training` and `evaluation` sections. Every field has a default; unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{GridSpec, Variant};
use crate::loss::ContrastiveObjective;
use crate::train::TrainConfig;

/// Scalar width used for a run. `f64` is the reproducible mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Species-set file; `None` means the built-in 12-class set.
    pub species: Option<PathBuf>,
    pub n_per_class: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            species: None,
            n_per_class: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub grid: GridSpec,
    pub heatmap_class: usize,
    pub day_of_year: u16,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            heatmap_class: 0,
            day_of_year: 183,
            variants: vec![
                Variant::Full,
                Variant::TwoTerm,
                Variant::DropImageMeta,
                Variant::DropTextMeta,
            ],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required by every command that trains.
    pub seed: Option<u64>,
    pub precision: Precision,
    pub data: DataSection,
    pub encoders: EncoderConfig,
    pub loss: ContrastiveObjective,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoders.validate()?;
        self.loss.temperature.validate()?;
        self.training.validate()?;
        self.evaluation.grid.validate()?;
        if self.data.n_per_class == 0 {
            return Err(Error::validation("data.n_per_class", "must be at least 1"));
        }
        if !(1..=366).contains(&self.evaluation.day_of_year) {
            return Err(Error::validation(
                "evaluation.day_of_year",
                "must lie in 1..=366",
            ));
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::Config("`seed` is mandatory for training commands (config key or --seed)".into())
        })
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.training.batch_size, 32);
        assert!(cfg.require_seed().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[training]\nbatch = 3").is_err());
        assert!(
            RunConfig::from_toml("[loss.temperature]\nmode = \"fixed\"\ntau = 0.1\nextra = 1")
                .is_err()
        );
    }

    #[test]
    fn sections_parse_and_validate() {
        let cfg = RunConfig::from_toml(
            "seed = 7\nprecision = \"f32\"\n\
             [loss]\nterms = [\"IT\", \"TI\"]\n\
             [loss.temperature]\nmode = \"learnable\"\ninitial_tau = 0.07\n\
             [training]\nbatch_size = 8\nhead_input = \"image_only\"\n\
             [evaluation]\nvariants = [\"full\", \"two_term\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.require_seed().unwrap(), 7);
        assert_eq!(cfg.precision, Precision::F32);
        assert_eq!(cfg.loss.terms.len(), 2);
        assert_eq!(
            cfg.evaluation.variants,
            vec![Variant::Full, Variant::TwoTerm]
        );
        assert!(RunConfig::from_toml("[training]\nbatch_size = 1").is_err());
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(3);
        cfg.training.pretrain_epochs = 4;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = Some(4);
        assert_ne!(other.hash(), cfg.hash());
    }
}
