//! The three modality encoders and their projection heads into one shared
//! embedding space.

mod image;
mod meta;
mod text;

pub use image::ImageEncoder;
pub use meta::{encode_meta_features, MetaEncoder, MetaInput, SinFeatures};
pub use text::{prompt_for, TextEncoder};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, NORMALIZE_EPS};
use crate::error::{Error, Result};
use crate::params::{Binding, Init, ParamGroup, ParamStore, SlotId};
use crate::rng::{substream, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of the precomputed image features (stands in for 2048).
    pub image_input_dim: usize,
    pub image_hidden: usize,
    /// One prompt per class.
    pub num_classes: usize,
    /// Prompt embedding width (stands in for 1024).
    pub text_width: usize,
    pub meta_frequencies: usize,
    pub meta_hidden: usize,
    pub shared_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_input_dim: 64,
            image_hidden: 128,
            num_classes: 12,
            text_width: 64,
            meta_frequencies: 8,
            meta_hidden: 128,
            shared_dim: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("image_input_dim", self.image_input_dim),
            ("image_hidden", self.image_hidden),
            ("num_classes", self.num_classes),
            ("text_width", self.text_width),
            ("meta_frequencies", self.meta_frequencies),
            ("meta_hidden", self.meta_hidden),
            ("shared_dim", self.shared_dim),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(Error::Config(format!("encoders.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn meta_feature_dim(&self) -> usize {
        6 * self.meta_frequencies
    }
}

/// Affine map `x·W + b` with `W` stored `[in × out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: SlotId,
    pub bias: SlotId,
}

impl Linear {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{name}.weight"),
            group,
            vec![fan_in, fan_out],
            Init::Xavier { fan_in, fan_out },
            rng,
        )?;
        let bias = store.add(
            &format!("{name}.bias"),
            group,
            vec![fan_out],
            Init::Zeros,
            rng,
        )?;
        Ok(Self { weight, bias })
    }

    pub fn find<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        let get = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            store
                .find(&full)
                .ok_or_else(|| Error::Config(format!("missing parameter slot {full}")))
        };
        Ok(Self {
            weight: get("weight")?,
            bias: get("bias")?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        tape.linear(x, params.var(self.weight), params.var(self.bias))
    }
}

/// Linear map into the shared space, optionally followed by row normalization.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionHead(pub Linear);

impl ProjectionHead {
    pub fn project_and_normalize<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        raw: Var,
    ) -> Result<Var> {
        let z = self.0.forward(tape, params, raw)?;
        Ok(tape.l2_normalize_rows(z, T::of(NORMALIZE_EPS)))
    }
}

/// `[B × 6F]` sine–cosine feature matrix.
pub fn meta_feature_batch<T: Scalar>(metas: &[MetaInput], frequencies: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(metas.len() * 6 * frequencies);
    for m in metas {
        data.extend(
            encode_meta_features(m, frequencies)?
                .as_slice()
                .iter()
                .map(|&v| T::of(v)),
        );
    }
    Tensor::new(vec![metas.len(), 6 * frequencies], data)
}

/// `[B × D]` matrix of image feature rows.
pub fn image_feature_batch<T: Scalar>(rows: &[&[f64]], dim: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::Dimension {
                op: "image_feature_batch",
                lhs: vec![dim],
                rhs: vec![r.len()],
            });
        }
        data.extend(r.iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![rows.len(), dim], data)
}

/// Shared-space embeddings of one batch, one node per modality.
#[derive(Debug, Clone, Copy)]
pub struct TriModalEmbeddings {
    pub image: Var,
    pub text: Var,
    pub meta: Var,
}

/// All three encoders over one flat parameter store, plus the
/// `log(1/τ)` slot used when the temperature is learnable.
#[derive(Debug, Clone)]
pub struct TriModalModel<T> {
    config: EncoderConfig,
    params: ParamStore<T>,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub meta: MetaEncoder,
    logit_scale: SlotId,
}

pub const LOGIT_SCALE_SLOT: &str = "temperature.logit_scale";

impl<T: Scalar> TriModalModel<T> {
    /// Fresh model; weights come from the `"init"` substream of `seed`.
    pub fn new(config: &EncoderConfig, initial_temperature: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(initial_temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let mut rng = substream(seed, "init");
        let mut store = ParamStore::new();
        let image = ImageEncoder::register(
            &mut store,
            config.image_input_dim,
            config.image_hidden,
            config.shared_dim,
            &mut rng,
        )?;
        let text = TextEncoder::register(
            &mut store,
            config.num_classes,
            config.text_width,
            config.shared_dim,
            &mut rng,
        )?;
        let meta = MetaEncoder::register(
            &mut store,
            config.meta_frequencies,
            config.meta_hidden,
            config.shared_dim,
            &mut rng,
        )?;
        let logit_scale = store.add(
            LOGIT_SCALE_SLOT,
            ParamGroup::Temperature,
            vec![1],
            Init::Constant((1.0 / initial_temperature).ln()),
            &mut rng,
        )?;
        Ok(Self {
            config: config.clone(),
            params: store,
            image,
            text,
            meta,
            logit_scale,
        })
    }

    /// Rebuilds a model around an existing store (e.g. from a checkpoint).
    pub fn from_params(config: &EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let logit_scale = params
            .find(LOGIT_SCALE_SLOT)
            .ok_or_else(|| Error::Config(format!("missing parameter slot {LOGIT_SCALE_SLOT}")))?;
        let model = Self {
            image: ImageEncoder::reattach(&params)?,
            text: TextEncoder::reattach(&params, config.num_classes)?,
            meta: MetaEncoder::reattach(&params, config.meta_frequencies)?,
            config: config.clone(),
            params,
            logit_scale,
        };
        // Shapes must agree with the config.
        let fresh = Self::new(config, 1.0, 0)?;
        for (a, b) in fresh.params.slots().iter().zip(model.params.slots()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, config expects {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        if fresh.params.slots().len() != model.params.slots().len() {
            return Err(Error::Config(
                "parameter slot count does not match config".into(),
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn logit_scale_slot(&self) -> SlotId {
        self.logit_scale
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        self.params.bind(tape)
    }

    /// Normalized embeddings for all three modalities of one batch.
    pub fn embed_batch(
        &self,
        tape: &mut Tape<T>,
        params: &Binding,
        image_features: Tensor<T>,
        class_ids: &[usize],
        meta_features: Tensor<T>,
    ) -> Result<TriModalEmbeddings> {
        let x = tape.leaf(image_features);
        let m = tape.leaf(meta_features);
        Ok(TriModalEmbeddings {
            image: self.image.embed(tape, params, x)?,
            text: self.text.embed(tape, params, class_ids)?,
            meta: self.meta.embed(tape, params, m)?,
        })
    }

    /// Normalized metadata embeddings without recording gradients for later use.
    pub fn meta_embeddings(&self, metas: &[MetaInput]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let m = tape.leaf(meta_feature_batch(metas, self.config.meta_frequencies)?);
        let z = self.meta.embed(&mut tape, &params, m)?;
        Ok(tape.value(z).clone())
    }

    pub fn image_embeddings(&self, rows: &[&[f64]]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let x = tape.leaf(image_feature_batch(rows, self.config.image_input_dim)?);
        let z = self.image.embed(&mut tape, &params, x)?;
        Ok(tape.value(z).clone())
    }

    pub fn text_embeddings(&self, class_ids: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let z = self.text.embed(&mut tape, &params, class_ids)?;
        Ok(tape.value(z).clone())
    }

    pub fn cast<U: Scalar>(&self) -> TriModalModel<U> {
        TriModalModel {
            config: self.config.clone(),
            params: self.params.cast(),
            image: self.image.clone(),
            text: self.text.clone(),
            meta: self.meta.clone(),
            logit_scale: self.logit_scale,
        }
    }
}
