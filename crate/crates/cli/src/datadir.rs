//! Dataset directories: `train.csv`, `test.csv`, and (when generated)
//! `species.toml` plus `manifest.json`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use crosscon::data::{load_table, Dataset, SisterPair, SpeciesSet, SpeciesSetFile, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT: &str = "crosscon-dataset";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format: String,
    pub seed: u64,
    pub n_per_class: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub classes: Vec<String>,
    pub sister_pairs: Vec<SisterPair>,
    pub counts: Counts,
    /// SHA-256 of `species.toml`.
    pub spec_hash: String,
    pub generator_version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct DataDir {
    pub train: Dataset,
    pub test: Dataset,
    pub pairs: Vec<SisterPair>,
    pub manifest: Option<DataManifest>,
    /// Resolved species set, when the directory carries its spec.
    pub species: Option<SpeciesSet>,
}

impl DataDir {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            bail!("data directory {} does not exist", dir.display());
        }
        let manifest_path = dir.join("manifest.json");
        let manifest: Option<DataManifest> = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path)?;
            let m: DataManifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", manifest_path.display()))?;
            if m.format != FORMAT {
                bail!("{} is not a dataset manifest", manifest_path.display());
            }
            Some(m)
        } else {
            None
        };
        let hint = manifest.as_ref().map(|m| m.num_classes);
        let table = |name: &str, split| {
            let p = dir.join(name);
            load_table(&p, split, hint).with_context(|| format!("loading {}", p.display()))
        };
        let mut train = table("train.csv", Split::Train)?;
        let mut test = table("test.csv", Split::Test)?;
        let num_classes = train.num_classes.max(test.num_classes);
        train.num_classes = num_classes;
        test.num_classes = num_classes;
        if train.feature_dim() != test.feature_dim() {
            bail!(
                "train features have width {} but test features {}",
                train.feature_dim(),
                test.feature_dim()
            );
        }
        let species = match (&manifest, dir.join("species.toml")) {
            (Some(m), p) if p.exists() => {
                let file = SpeciesSetFile::from_toml(&fs::read_to_string(&p)?)?;
                Some(file.resolve(m.seed)?)
            }
            _ => None,
        };
        if let Some(m) = &manifest {
            train.seed = Some(m.seed);
            test.seed = Some(m.seed);
        }
        Ok(Self {
            pairs: manifest
                .as_ref()
                .map(|m| m.sister_pairs.clone())
                .unwrap_or_default(),
            train,
            test,
            manifest,
            species,
        })
    }

    /// How a run names its dataset in `run.json`.
    pub fn identity(&self, dir: &Path) -> serde_json::Value {
        serde_json::json!({
            "dir": dir,
            "seed": self.manifest.as_ref().map(|m| m.seed),
            "spec_hash": self.manifest.as_ref().map(|m| m.spec_hash.clone()),
            "train": self.train.len(),
            "test": self.test.len(),
        })
    }

    pub fn class_mean_image(&self, class: usize) -> Result<Vec<f64>> {
        let rows: Vec<&Vec<f64>> = self
            .train
            .samples
            .iter()
            .filter(|s| s.class == class)
            .map(|s| &s.image)
            .collect();
        if rows.is_empty() {
            bail!("class {class} has no training samples");
        }
        let mut mean = vec![0.0; rows[0].len()];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        Ok(mean)
    }
}
