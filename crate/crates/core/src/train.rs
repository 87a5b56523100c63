//! Two-stage training: cross-contrastive pre-training of the three encoders,
//! then a classifier on concatenated image and metadata embeddings.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Dataset, Sample};
use crate::encoders::{image_feature_batch, meta_feature_batch, Linear, MetaInput, TriModalModel};
use crate::error::{Error, Result};
use crate::loss::{ContrastiveObjective, LogitScale, LossTerm, Modality};
use crate::optim::{AdamConfig, GroupOptimizer};
use crate::params::{Binding, ParamGroup, ParamStore};
use crate::rng::{indexed_substream, substream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub image: f64,
    pub text: f64,
    pub meta: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            image: 1e-4,
            text: 1e-5,
            meta: 5e-5,
        }
    }
}

/// Which embeddings feed the fine-tune head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// `concat(image, meta)`, `2 × shared_dim` wide.
    ImageAndMeta,
    /// Image embedding only.
    ImageOnly,
}

impl HeadInput {
    pub fn width(self, shared_dim: usize) -> usize {
        match self {
            HeadInput::ImageAndMeta => 2 * shared_dim,
            HeadInput::ImageOnly => shared_dim,
        }
    }

    fn encoder_groups(self) -> &'static [ParamGroup] {
        match self {
            HeadInput::ImageAndMeta => &[ParamGroup::Image, ParamGroup::Meta],
            HeadInput::ImageOnly => &[ParamGroup::Image],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub learning_rates: LearningRates,
    /// AdamW decoupled weight decay during pre-training.
    pub weight_decay: f64,
    pub shuffle: bool,
    pub finetune_epochs: usize,
    pub head_lr: f64,
    /// Learning rate of unfrozen encoders during fine-tuning.
    pub encoder_lr: f64,
    pub head_hidden: usize,
    pub freeze_encoders: bool,
    pub head_input: HeadInput,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            pretrain_epochs: 50,
            learning_rates: LearningRates::default(),
            weight_decay: 0.01,
            shuffle: true,
            finetune_epochs: 20,
            head_lr: 1e-3,
            encoder_lr: 1e-4,
            head_hidden: 128,
            freeze_encoders: true,
            head_input: HeadInput::ImageAndMeta,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "training.batch_size must be at least 2".into(),
            ));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config(
                "training.head_hidden must be positive".into(),
            ));
        }
        let rates = [
            ("learning_rates.image", self.learning_rates.image),
            ("learning_rates.text", self.learning_rates.text),
            ("learning_rates.meta", self.learning_rates.meta),
            ("weight_decay", self.weight_decay),
            ("head_lr", self.head_lr),
            ("encoder_lr", self.encoder_lr),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "training.{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Index batches for one epoch. Order is seeded per `(stream, epoch)`;
/// batches shorter than `min_len` are dropped.
fn epoch_batches(
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    stream: &str,
    epoch: usize,
    min_len: usize,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        order.shuffle(&mut indexed_substream(seed, stream, epoch as u64));
    }
    order
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= min_len)
        .map(<[usize]>::to_vec)
        .collect()
}

fn image_batch<T: Scalar>(samples: &[&Sample], dim: usize) -> Result<Tensor<T>> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
    image_feature_batch(&rows, dim)
}

fn meta_batch<T: Scalar>(samples: &[&Sample], frequencies: usize) -> Result<Tensor<T>> {
    let metas: Vec<MetaInput> = samples.iter().map(|s| s.meta).collect();
    meta_feature_batch(&metas, frequencies)
}

fn check_dataset<T: Scalar>(model: &TriModalModel<T>, data: &Dataset) -> Result<()> {
    let cfg = model.config();
    if data.is_empty() {
        return Err(Error::validation("dataset", "no samples"));
    }
    if data.feature_dim() != cfg.image_input_dim {
        return Err(Error::Dimension {
            op: "dataset features",
            lhs: vec![data.feature_dim()],
            rhs: vec![cfg.image_input_dim],
        });
    }
    if data.num_classes > cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the text encoder has {} prompts",
            data.num_classes, cfg.num_classes
        )));
    }
    Ok(())
}

/// Mean loss values over the batches of one pre-training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub terms: [f64; 6],
    pub total: f64,
    pub batches: usize,
}

impl EpochLoss {
    pub fn term(&self, t: LossTerm) -> f64 {
        self.terms[t.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: Vec<EpochLoss>,
}

impl PretrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Cross-contrastive pre-training of `model` on `data`.
///
/// One AdamW instance per encoder (projection heads included) at its own
/// learning rate; encoders no active term touches are never stepped. A
/// learnable temperature gets its own instance at the image learning rate
/// without weight decay.
pub fn pretrain<T: Scalar>(
    model: &mut TriModalModel<T>,
    data: &Dataset,
    objective: &ContrastiveObjective,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    cfg.validate()?;
    objective.temperature.validate()?;
    check_dataset(model, data)?;

    let lr = cfg.learning_rates;
    let groups = [
        (ParamGroup::Image, Modality::Image, lr.image),
        (ParamGroup::Text, Modality::Text, lr.text),
        (ParamGroup::Meta, Modality::Meta, lr.meta),
    ];
    let mut optimizers: Vec<GroupOptimizer<T>> = groups
        .iter()
        .filter(|(_, m, _)| objective.terms.touches(*m))
        .map(|&(g, _, lr)| {
            GroupOptimizer::new(
                model.params(),
                &[g],
                AdamConfig::adamw(lr, cfg.weight_decay),
            )
        })
        .collect();
    let learnable = objective.temperature.is_learnable() && !objective.terms.is_empty();
    if learnable {
        optimizers.push(GroupOptimizer::new(
            model.params(),
            &[ParamGroup::Temperature],
            AdamConfig::adamw(lr.image, 0.0),
        ));
    }
    let tau = T::of(objective.temperature.initial_tau());
    let mcfg = model.config().clone();

    let mut report = PretrainReport::default();
    let mut tape = Tape::new();
    for epoch in 0..cfg.pretrain_epochs {
        let batches = epoch_batches(data.len(), cfg, seed, "shuffle", epoch, 2);
        let mut terms = [0.0; 6];
        let mut total = 0.0;
        for idx in &batches {
            let samples: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.class).collect();
            tape.clear();
            let binding = model.bind(&mut tape);
            let emb = model.embed_batch(
                &mut tape,
                &binding,
                image_batch(&samples, mcfg.image_input_dim)?,
                &labels,
                meta_batch(&samples, mcfg.meta_frequencies)?,
            )?;
            let scale = if learnable {
                LogitScale::Learned(binding.var(model.logit_scale_slot()))
            } else {
                LogitScale::fixed_tau(tau)
            };
            let (loss, breakdown) = objective.record(&mut tape, &emb, &labels, scale)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite pre-training loss at epoch {}",
                    epoch + 1
                )));
            }
            if !optimizers.is_empty() {
                tape.backward(loss)?;
                let grads = model.params().collect_grads(&tape, &binding);
                for opt in &mut optimizers {
                    opt.step(model.params_mut(), &grads)?;
                }
            }
            for (acc, v) in terms.iter_mut().zip(breakdown.terms) {
                *acc += v.as_f64();
            }
            total += breakdown.total.as_f64();
        }
        let n = batches.len().max(1) as f64;
        report.epochs.push(EpochLoss {
            epoch: epoch + 1,
            terms: terms.map(|t| t / n),
            total: total / n,
            batches: batches.len(),
        });
    }
    Ok(report)
}

/// `linear(in→hidden) → relu → linear(hidden→classes)`.
#[derive(Debug, Clone)]
pub struct FineTuneHead {
    pub input: HeadInput,
    pub num_classes: usize,
    hidden: Linear,
    out: Linear,
}

impl FineTuneHead {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        input: HeadInput,
        input_width: usize,
        hidden: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = substream(seed, "head");
        Ok(Self {
            input,
            num_classes,
            hidden: Linear::register(
                store,
                "head.hidden",
                ParamGroup::Head,
                input_width,
                hidden,
                &mut rng,
            )?,
            out: Linear::register(
                store,
                "head.out",
                ParamGroup::Head,
                hidden,
                num_classes,
                &mut rng,
            )?,
        })
    }

    pub fn reattach<T: Scalar>(
        store: &ParamStore<T>,
        input: HeadInput,
        num_classes: usize,
    ) -> Result<Self> {
        Ok(Self {
            input,
            num_classes,
            hidden: Linear::find(store, "head.hidden")?,
            out: Linear::find(store, "head.out")?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Binding, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, params, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, params, h)
    }
}

/// Class decision and the full probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Softmax with the largest entry subtracted, then argmax with the lowest
/// index winning ties.
pub fn prediction_from_logits(logits: &[f64]) -> Prediction {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let probabilities: Vec<f64> = e.iter().map(|v| v / z).collect();
    let mut class = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[class] {
            class = i;
        }
    }
    Prediction {
        class,
        probabilities,
    }
}

/// Encoders plus fine-tune head.
#[derive(Debug, Clone)]
pub struct Classifier<T> {
    pub model: TriModalModel<T>,
    pub head: FineTuneHead,
    pub head_params: ParamStore<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the in-training predictions over the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: Vec<FinetuneEpoch>,
    /// Batches whose encoder gradient had at least one nonzero entry.
    pub encoder_grad_batches: usize,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(
        model: TriModalModel<T>,
        input: HeadInput,
        hidden: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("head needs at least one class".into()));
        }
        let mut head_params = ParamStore::new();
        let width = input.width(model.config().shared_dim);
        let head =
            FineTuneHead::register(&mut head_params, input, width, hidden, num_classes, seed)?;
        Ok(Self {
            model,
            head,
            head_params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes
    }

    fn record_features(
        &self,
        tape: &mut Tape<T>,
        mb: &Binding,
        images: Tensor<T>,
        metas: Option<Tensor<T>>,
    ) -> Result<Var> {
        let x = tape.leaf(images);
        let zi = self.model.image.embed(tape, mb, x)?;
        match (self.head.input, metas) {
            (HeadInput::ImageOnly, _) => Ok(zi),
            (HeadInput::ImageAndMeta, Some(m)) => {
                let m = tape.leaf(m);
                let zm = self.model.meta.embed(tape, mb, m)?;
                tape.concat_cols(zi, zm)
            }
            (HeadInput::ImageAndMeta, None) => {
                Err(Error::Contract("metadata required by the head".into()))
            }
        }
    }

    fn input_tensors(
        &self,
        images: &[&[f64]],
        metas: &[MetaInput],
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let cfg = self.model.config();
        let x = image_feature_batch(images, cfg.image_input_dim)?;
        let m = match self.head.input {
            HeadInput::ImageOnly => None,
            HeadInput::ImageAndMeta => Some(meta_feature_batch(metas, cfg.meta_frequencies)?),
        };
        Ok((x, m))
    }

    /// Head input rows (`[B × width]`) without gradient bookkeeping.
    pub fn features(&self, images: &[&[f64]], metas: &[MetaInput]) -> Result<Tensor<T>> {
        let (x, m) = self.input_tensors(images, metas)?;
        let mut tape = Tape::new();
        let mb = self.model.bind(&mut tape);
        let f = self.record_features(&mut tape, &mb, x, m)?;
        Ok(tape.value(f).clone())
    }

    /// Head logits for precomputed head-input rows.
    pub fn head_logits(&self, features: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let hb = self.head_params.bind(&mut tape);
        let f = tape.leaf(features);
        let l = self.head.forward(&mut tape, &hb, f)?;
        Ok(tape.value(l).clone())
    }

    pub fn logits(&self, images: &[&[f64]], metas: &[MetaInput]) -> Result<Tensor<T>> {
        self.head_logits(self.features(images, metas)?)
    }

    pub fn predict_inputs(
        &self,
        images: &[&[f64]],
        metas: &[MetaInput],
    ) -> Result<Vec<Prediction>> {
        let logits = self.logits(images, metas)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row: Vec<f64> = logits.row(i).iter().map(|v| v.as_f64()).collect();
                prediction_from_logits(&row)
            })
            .collect())
    }

    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        let images: Vec<&[f64]> = samples.iter().map(|s| s.image.as_slice()).collect();
        let metas: Vec<MetaInput> = samples.iter().map(|s| s.meta).collect();
        self.predict_inputs(&images, &metas)
    }

    /// Mean cross-entropy of the current classifier on `samples`.
    pub fn cross_entropy(&self, samples: &[Sample]) -> Result<f64> {
        let preds = self.predict(samples)?;
        let n = samples.len().max(1) as f64;
        Ok(preds
            .iter()
            .zip(samples)
            .map(|(p, s)| -p.probabilities[s.class].ln())
            .sum::<f64>()
            / n)
    }

    /// Trains the head (and, unless frozen, the image and metadata encoders)
    /// with cross-entropy using Adam.
    pub fn fit(&mut self, data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<FinetuneReport> {
        cfg.validate()?;
        check_dataset(&self.model, data)?;
        if data.num_classes != self.head.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the head outputs {}",
                data.num_classes, self.head.num_classes
            )));
        }
        let mcfg = self.model.config().clone();
        let mut head_opt = GroupOptimizer::new(
            &self.head_params,
            &[ParamGroup::Head],
            AdamConfig::adam(cfg.head_lr),
        );
        let mut enc_opt = (!cfg.freeze_encoders).then(|| {
            GroupOptimizer::new(
                self.model.params(),
                self.head.input.encoder_groups(),
                AdamConfig::adam(cfg.encoder_lr),
            )
        });

        // Frozen encoders: embed every sample once.
        let frozen_features = if cfg.freeze_encoders {
            let images: Vec<&[f64]> = data.samples.iter().map(|s| s.image.as_slice()).collect();
            let metas: Vec<MetaInput> = data.samples.iter().map(|s| s.meta).collect();
            Some(self.features(&images, &metas)?)
        } else {
            None
        };

        let mut report = FinetuneReport::default();
        let mut tape = Tape::new();
        for epoch in 0..cfg.finetune_epochs {
            let batches = epoch_batches(data.len(), cfg, seed, "finetune-shuffle", epoch, 1);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for idx in &batches {
                let samples: Vec<&Sample> = idx.iter().map(|&i| &data.samples[i]).collect();
                tape.clear();
                let mb = self.model.bind(&mut tape);
                let hb = self.head_params.bind(&mut tape);
                let features = match &frozen_features {
                    Some(all) => {
                        let rows: Vec<Vec<T>> = idx.iter().map(|&i| all.row(i).to_vec()).collect();
                        tape.leaf(Tensor::from_rows(&rows)?)
                    }
                    None => {
                        let x = image_batch(&samples, mcfg.image_input_dim)?;
                        let m = match self.head.input {
                            HeadInput::ImageOnly => None,
                            HeadInput::ImageAndMeta => {
                                Some(meta_batch(&samples, mcfg.meta_frequencies)?)
                            }
                        };
                        self.record_features(&mut tape, &mb, x, m)?
                    }
                };
                let logits = self.head.forward(&mut tape, &hb, features)?;
                let logp = tape.log_softmax_rows(logits)?;
                let c = self.head.num_classes;
                let b = samples.len();
                let mut weights = vec![T::zero(); b * c];
                for (r, s) in samples.iter().enumerate() {
                    weights[r * c + s.class] = -T::one() / T::of(b as f64);
                }
                let loss = tape.weighted_sum(logp, weights)?;
                let lv = tape.value(loss).item()?.as_f64();
                if !lv.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite fine-tune loss at epoch {}",
                        epoch + 1
                    )));
                }
                let lvals = tape.value(logits);
                for (r, s) in samples.iter().enumerate() {
                    let row: Vec<f64> = lvals.row(r).iter().map(|v| v.as_f64()).collect();
                    if prediction_from_logits(&row).class == s.class {
                        correct += 1;
                    }
                }
                loss_sum += lv * b as f64;

                tape.backward(loss)?;
                let hg = self.head_params.collect_grads(&tape, &hb);
                head_opt.step(&mut self.head_params, &hg)?;
                if let Some(opt) = &mut enc_opt {
                    let eg = self.model.params().collect_grads(&tape, &mb);
                    if eg.iter().any(|g| *g != T::zero()) {
                        report.encoder_grad_batches += 1;
                    }
                    opt.step(self.model.params_mut(), &eg)?;
                }
            }
            report.epochs.push(FinetuneEpoch {
                epoch: epoch + 1,
                loss: loss_sum / data.len() as f64,
                train_accuracy: correct as f64 / data.len() as f64,
            });
        }
        Ok(report)
    }
}

/// Builds a head for `data` on top of `model` and fits it.
pub fn finetune<T: Scalar>(
    model: TriModalModel<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Classifier<T>, FinetuneReport)> {
    let mut clf = Classifier::new(
        model,
        cfg.head_input,
        cfg.head_hidden,
        data.num_classes,
        seed,
    )?;
    let report = clf.fit(data, cfg, seed)?;
    Ok((clf, report))
}
