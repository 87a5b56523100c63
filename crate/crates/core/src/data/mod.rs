//! Observations, datasets, the sister-species generator and table I/O.

mod generate;
pub mod geo;
mod species;
mod table;

pub use generate::generate;
pub use species::{
    SisterKind, SisterPair, SpeciesFileEntry, SpeciesSet, SpeciesSetFile, SpeciesSpec,
};
pub use table::{load_table, write_table};

use serde::{Deserialize, Serialize};

use crate::encoders::MetaInput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub class: usize,
    pub image: Vec<f64>,
    pub meta: MetaInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
    /// Generator seed, when the data was generated.
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.image.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.class] += 1;
        }
        counts
    }

    /// Checks finiteness, consistent feature width, metadata ranges and labels.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("class", "dataset has no classes"));
        }
        let dim = self.feature_dim();
        for s in &self.samples {
            if s.class >= self.num_classes {
                return Err(Error::validation(
                    "class",
                    format!(
                        "sample {} has class {} ≥ {}",
                        s.id, s.class, self.num_classes
                    ),
                ));
            }
            if s.image.len() != dim {
                return Err(Error::validation(
                    "features",
                    format!(
                        "sample {} has {} features, expected {dim}",
                        s.id,
                        s.image.len()
                    ),
                ));
            }
            if s.image.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    "features",
                    format!("sample {} is not finite", s.id),
                ));
            }
            s.meta.validate()?;
        }
        Ok(())
    }
}
