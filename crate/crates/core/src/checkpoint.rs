//! Textual (JSON) parameter dumps.
//!
//! Values are written as shortest round-trip decimals of their `f64` image,
//! so both precisions reload bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Precision;
use crate::encoders::{EncoderConfig, TriModalModel};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::train::{Classifier, FineTuneHead, HeadInput};

pub const FORMAT: &str = "crosscon-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadRecord {
    pub input: HeadInput,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    pub seed: u64,
    pub config_hash: String,
    pub encoders: EncoderConfig,
    /// Present when the checkpoint carries a fine-tune head.
    pub head: Option<HeadRecord>,
    pub slots: Vec<SlotRecord>,
}

fn records<T: Scalar>(store: &ParamStore<T>) -> Vec<SlotRecord> {
    store
        .slots()
        .iter()
        .map(|s| SlotRecord {
            name: s.name.clone(),
            group: s.group,
            shape: s.shape.clone(),
            values: store.values()[s.range()]
                .iter()
                .map(|v| v.as_f64())
                .collect(),
        })
        .collect()
}

fn precision_of<T: Scalar>() -> Precision {
    if std::mem::size_of::<T>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &TriModalModel<T>, seed: u64, config_hash: &str) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            precision: precision_of::<T>(),
            seed,
            config_hash: config_hash.into(),
            encoders: model.config().clone(),
            head: None,
            slots: records(model.params()),
        }
    }

    pub fn from_classifier<T: Scalar>(clf: &Classifier<T>, seed: u64, config_hash: &str) -> Self {
        let mut ck = Self::from_model(&clf.model, seed, config_hash);
        ck.head = Some(HeadRecord {
            input: clf.head.input,
            num_classes: clf.head.num_classes,
        });
        ck.slots.extend(records(&clf.head_params));
        ck
    }

    fn store<T: Scalar>(&self, head: bool) -> Result<ParamStore<T>> {
        if self.precision != precision_of::<T>() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters; loading as {} would not be bit-exact",
                self.precision.name(),
                precision_of::<T>().name()
            )));
        }
        let mut store = ParamStore::new();
        for s in self
            .slots
            .iter()
            .filter(|s| (s.group == ParamGroup::Head) == head)
        {
            store.add_values(
                &s.name,
                s.group,
                s.shape.clone(),
                s.values.iter().map(|&v| T::of(v)).collect(),
            )?;
        }
        Ok(store)
    }

    pub fn to_model<T: Scalar>(&self) -> Result<TriModalModel<T>> {
        TriModalModel::from_params(&self.encoders, self.store(false)?)
    }

    pub fn to_classifier<T: Scalar>(&self) -> Result<Classifier<T>> {
        let head = self
            .head
            .ok_or_else(|| Error::Config("checkpoint has no fine-tune head".into()))?;
        let model = self.to_model()?;
        let head_params = self.store(true)?;
        let expected = head.input.width(self.encoders.shared_dim);
        let head_layer = FineTuneHead::reattach(&head_params, head.input, head.num_classes)?;
        let hidden = head_params
            .find("head.hidden.weight")
            .map(|id| head_params.slot(id).shape.clone());
        if hidden.as_ref().and_then(|s| s.first()) != Some(&expected) {
            return Err(Error::Config(format!(
                "head input width {hidden:?} does not match {expected} for {:?}",
                head.input
            )));
        }
        Ok(Classifier {
            model,
            head: head_layer,
            head_params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint (format {:?})",
                ck.format
            )));
        }
        if ck.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
