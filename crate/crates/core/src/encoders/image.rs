//! Stand-in image backbone: a two-layer MLP over precomputed feature
//! vectors, followed by the linear projection head.

use super::{Linear, ProjectionHead};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Binding, ParamGroup, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    layer1: Linear,
    layer2: Linear,
    pub head: ProjectionHead,
}

impl ImageEncoder {
    pub(crate) fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        hidden: usize,
        shared_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Image;
        Ok(Self {
            layer1: Linear::register(store, "image.layer1", g, input_dim, hidden, rng)?,
            layer2: Linear::register(store, "image.layer2", g, hidden, hidden, rng)?,
            head: ProjectionHead(Linear::register(
                store,
                "image.proj",
                g,
                hidden,
                shared_dim,
                rng,
            )?),
        })
    }

    pub(crate) fn reattach<T: Scalar>(store: &ParamStore<T>) -> Result<Self> {
        Ok(Self {
            layer1: Linear::find(store, "image.layer1")?,
            layer2: Linear::find(store, "image.layer2")?,
            head: ProjectionHead(Linear::find(store, "image.proj")?),
        })
    }

    fn backbone<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        let h = self.layer1.forward(tape, params, x)?;
        let h = tape.relu(h);
        let h = self.layer2.forward(tape, params, h)?;
        Ok(tape.relu(h))
    }

    /// Unnormalized shared-space output for a `[B × input_dim]` batch.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        let h = self.backbone(tape, params, x)?;
        self.head.0.forward(tape, params, h)
    }

    pub fn embed<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        let h = self.backbone(tape, params, x)?;
        self.head.project_and_normalize(tape, params, h)
    }
}
