//! Stand-in text encoder. Each class has exactly one prompt, so the prompt
//! encoder reduces to a learned table with one row per prompt, followed by
//! the projection into the shared space.

use super::{Linear, ProjectionHead};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamGroup, ParamStore, SlotId};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Prompt text for a class name.
pub fn prompt_for(class_name: &str) -> String {
    format!("This is a photograph of a bird called {class_name}")
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    num_classes: usize,
    table: SlotId,
    pub head: ProjectionHead,
}

impl TextEncoder {
    pub(crate) fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        num_classes: usize,
        width: usize,
        shared_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let table = store.add(
            "text.table",
            ParamGroup::Text,
            vec![num_classes, width],
            Init::Xavier {
                fan_in: num_classes,
                fan_out: width,
            },
            rng,
        )?;
        Ok(Self {
            num_classes,
            table,
            head: ProjectionHead(Linear::register(
                store,
                "text.proj",
                ParamGroup::Text,
                width,
                shared_dim,
                rng,
            )?),
        })
    }

    pub(crate) fn reattach<T: Scalar>(store: &ParamStore<T>, num_classes: usize) -> Result<Self> {
        let table = store
            .find("text.table")
            .ok_or_else(|| Error::Config("missing parameter slot text.table".into()))?;
        Ok(Self {
            num_classes,
            table,
            head: ProjectionHead(Linear::find(store, "text.proj")?),
        })
    }

    fn lookup<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        class_ids: &[usize],
    ) -> Result<Var> {
        if let Some(&bad) = class_ids.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::validation(
                "class id",
                format!(
                    "{bad} unknown (text encoder has {} prompts)",
                    self.num_classes
                ),
            ));
        }
        tape.gather_rows(params.var(self.table), class_ids)
    }

    /// Unnormalized shared-space output, one row per class id.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        class_ids: &[usize],
    ) -> Result<Var> {
        let rows = self.lookup(tape, params, class_ids)?;
        self.head.0.forward(tape, params, rows)
    }

    pub fn embed<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        class_ids: &[usize],
    ) -> Result<Var> {
        let rows = self.lookup(tape, params, class_ids)?;
        self.head.project_and_normalize(tape, params, rows)
    }
}
