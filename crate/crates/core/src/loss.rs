//! Class-positive cross-contrastive objective over image, text and metadata
//! embeddings.
//!
//! For an ordered modality pair (anchor `X`, target `Y`) the term is
//!
//! ```text
//! L_XY = −1/|A| Σ_{i∈A} 1/|P(i)| Σ_{p∈P(i)} log softmax_row_i(X·Yᵀ / τ)[p]
//! ```
//!
//! where `P(i)` holds the targets sharing anchor `i`'s label, the softmax runs
//! over every target (positives included) and `A` is the set of anchors with a
//! non-empty `P(i)`. The full objective sums the six ordered pairs. Both
//! directions of a pair share one `B×B` similarity matrix; the reverse
//! direction is its transpose.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoders::TriModalEmbeddings;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
    Meta,
}

/// One ordered (anchor, target) direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossTerm {
    #[serde(rename = "IT")]
    ImageText,
    #[serde(rename = "TI")]
    TextImage,
    #[serde(rename = "MT")]
    MetaText,
    #[serde(rename = "TM")]
    TextMeta,
    #[serde(rename = "MI")]
    MetaImage,
    #[serde(rename = "IM")]
    ImageMeta,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::ImageText,
        LossTerm::TextImage,
        LossTerm::MetaText,
        LossTerm::TextMeta,
        LossTerm::MetaImage,
        LossTerm::ImageMeta,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn anchor(self) -> Modality {
        match self {
            LossTerm::ImageText | LossTerm::ImageMeta => Modality::Image,
            LossTerm::TextImage | LossTerm::TextMeta => Modality::Text,
            LossTerm::MetaText | LossTerm::MetaImage => Modality::Meta,
        }
    }

    pub fn target(self) -> Modality {
        match self {
            LossTerm::TextImage | LossTerm::MetaImage => Modality::Image,
            LossTerm::ImageText | LossTerm::MetaText => Modality::Text,
            LossTerm::TextMeta | LossTerm::ImageMeta => Modality::Meta,
        }
    }

    /// The same pair in the other direction.
    pub fn reverse(self) -> LossTerm {
        match self {
            LossTerm::ImageText => LossTerm::TextImage,
            LossTerm::TextImage => LossTerm::ImageText,
            LossTerm::MetaText => LossTerm::TextMeta,
            LossTerm::TextMeta => LossTerm::MetaText,
            LossTerm::MetaImage => LossTerm::ImageMeta,
            LossTerm::ImageMeta => LossTerm::MetaImage,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            LossTerm::ImageText => "IT",
            LossTerm::TextImage => "TI",
            LossTerm::MetaText => "MT",
            LossTerm::TextMeta => "TM",
            LossTerm::MetaImage => "MI",
            LossTerm::ImageMeta => "IM",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        LossTerm::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(code))
            .ok_or_else(|| Error::validation("loss term", format!("unknown term {code:?}")))
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L_{}", self.code())
    }
}

/// Subset of the six directions that contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<LossTerm>", try_from = "Vec<LossTerm>")]
pub struct TermSet(u8);

impl TermSet {
    pub const FULL: TermSet = TermSet(0b11_1111);
    pub const EMPTY: TermSet = TermSet(0);

    pub fn of(terms: &[LossTerm]) -> Self {
        TermSet(terms.iter().fold(0, |acc, t| acc | (1 << t.index())))
    }

    /// Image↔text only.
    pub fn two_term() -> Self {
        Self::of(&[LossTerm::ImageText, LossTerm::TextImage])
    }

    pub fn without(self, terms: &[LossTerm]) -> Self {
        TermSet(self.0 & !Self::of(terms).0)
    }

    pub fn contains(self, term: LossTerm) -> bool {
        self.0 & (1 << term.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = LossTerm> {
        LossTerm::ALL.into_iter().filter(move |t| self.contains(*t))
    }

    /// Whether any active term involves `modality`.
    pub fn touches(self, modality: Modality) -> bool {
        self.iter()
            .any(|t| t.anchor() == modality || t.target() == modality)
    }
}

impl Default for TermSet {
    fn default() -> Self {
        TermSet::FULL
    }
}

impl From<TermSet> for Vec<LossTerm> {
    fn from(s: TermSet) -> Self {
        s.iter().collect()
    }
}

impl From<Vec<LossTerm>> for TermSet {
    fn from(v: Vec<LossTerm>) -> Self {
        TermSet::of(&v)
    }
}

/// `mask[i][p]` is true iff anchor `i` and target `p` carry the same label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

pub fn build_positive_mask(
    anchor_labels: &[usize],
    target_labels: &[usize],
) -> Result<PositiveMask> {
    if anchor_labels.len() != target_labels.len() {
        return Err(Error::Dimension {
            op: "build_positive_mask",
            lhs: vec![anchor_labels.len()],
            rhs: vec![target_labels.len()],
        });
    }
    let bits = anchor_labels
        .iter()
        .flat_map(|a| target_labels.iter().map(move |t| a == t))
        .collect();
    Ok(PositiveMask {
        rows: anchor_labels.len(),
        cols: target_labels.len(),
        bits,
    })
}

impl PositiveMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, p: usize) -> bool {
        self.bits[i * self.cols + p]
    }

    /// `|P(i)|`.
    pub fn positives(&self, i: usize) -> usize {
        self.bits[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn transpose(&self) -> PositiveMask {
        let mut bits = vec![false; self.bits.len()];
        for i in 0..self.rows {
            for p in 0..self.cols {
                bits[p * self.rows + i] = self.get(i, p);
            }
        }
        PositiveMask {
            rows: self.cols,
            cols: self.rows,
            bits,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|p| self.get(i, p) == self.get(p, i)))
    }

    /// Per-entry weights `1 / (|P(i)|·|A|)` on positives (zero elsewhere) and
    /// the number of anchors with no positive.
    fn reduction_weights<T: Scalar>(&self) -> (Vec<T>, usize) {
        let counts: Vec<usize> = (0..self.rows).map(|i| self.positives(i)).collect();
        let skipped = counts.iter().filter(|&&c| c == 0).count();
        let valid = self.rows - skipped;
        let mut w = vec![T::zero(); self.bits.len()];
        if valid == 0 {
            return (w, skipped);
        }
        let n_valid = T::of(valid as f64);
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let wi = T::one() / (T::of(c as f64) * n_valid);
            for p in 0..self.cols {
                if self.get(i, p) {
                    w[i * self.cols + p] = wi;
                }
            }
        }
        (w, skipped)
    }
}

pub const TAU_MIN: f64 = 1e-4;
pub const TAU_MAX: f64 = 100.0;

/// Softmax temperature `τ`. Logits are `z_a·z_b / τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Temperature {
    Fixed {
        tau: f64,
    },
    /// Trained through the stored parameter `log(1/τ)`, kept in `[TAU_MIN, TAU_MAX]`.
    Learnable {
        initial_tau: f64,
    },
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::Fixed { tau: 0.007 }
    }
}

impl Temperature {
    pub fn initial_tau(&self) -> f64 {
        match *self {
            Temperature::Fixed { tau } => tau,
            Temperature::Learnable { initial_tau } => initial_tau,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Temperature::Learnable { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.initial_tau();
        if !(tau.is_finite() && (TAU_MIN..=TAU_MAX).contains(&tau)) {
            return Err(Error::validation(
                "temperature",
                format!("tau {tau} must lie in [{TAU_MIN}, {TAU_MAX}]"),
            ));
        }
        Ok(())
    }

    /// Bounds on the stored `log(1/τ)` parameter.
    pub fn logit_scale_bounds() -> (f64, f64) {
        ((1.0 / TAU_MAX).ln(), (1.0 / TAU_MIN).ln())
    }
}

/// How similarity logits get scaled on a tape.
#[derive(Debug, Clone, Copy)]
pub enum LogitScale<T> {
    /// Multiply by the constant `1/τ`.
    Fixed(T),
    /// Multiply by `exp(clamp(s))` for the `log(1/τ)` parameter node `s`.
    Learned(Var),
}

impl<T: Scalar> LogitScale<T> {
    pub fn fixed_tau(tau: T) -> Self {
        LogitScale::Fixed(T::one() / tau)
    }

    /// Resolves to a node usable by [`scale_logits`]. For `Learned`, records the
    /// clamp and exponential once so every term shares them.
    fn prepare(self, tape: &mut Tape<T>) -> PreparedScale<T> {
        match self {
            LogitScale::Fixed(c) => PreparedScale::Const(c),
            LogitScale::Learned(s) => {
                let (lo, hi) = Temperature::logit_scale_bounds();
                let clamped = tape.clamp(s, T::of(lo), T::of(hi));
                PreparedScale::Node(tape.exp(clamped))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PreparedScale<T> {
    Const(T),
    Node(Var),
}

fn scale_logits<T: Scalar>(tape: &mut Tape<T>, sim: Var, scale: PreparedScale<T>) -> Result<Var> {
    match scale {
        PreparedScale::Const(c) => Ok(tape.scale(sim, c)),
        PreparedScale::Node(s) => tape.scale_by(sim, s),
    }
}

/// Records one direction given already-scaled `[B_a × B_t]` logits.
/// Returns the loss node and the number of skipped anchors.
fn record_direction<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    mask: &PositiveMask,
) -> Result<(Var, usize)> {
    let shape = tape.value(logits).shape().to_vec();
    if shape != [mask.rows(), mask.cols()] {
        return Err(Error::Dimension {
            op: "pair_loss",
            lhs: shape,
            rhs: vec![mask.rows(), mask.cols()],
        });
    }
    let log_probs = tape.log_softmax_rows(logits)?;
    let (weights, skipped) = mask.reduction_weights::<T>();
    let neg: Vec<T> = weights.into_iter().map(|w| -w).collect();
    Ok((tape.weighted_sum(log_probs, neg)?, skipped))
}

/// Records `L_XY` for anchor embeddings `anchors` and targets `targets`
/// (both `[B × D]`, unit rows) on `tape`.
pub fn record_pair_loss<T: Scalar>(
    tape: &mut Tape<T>,
    anchors: Var,
    targets: Var,
    mask: &PositiveMask,
    scale: LogitScale<T>,
) -> Result<(Var, usize)> {
    let scale = scale.prepare(tape);
    let tt = tape.transpose(targets)?;
    let sim = tape.matmul(anchors, tt)?;
    let logits = scale_logits(tape, sim, scale)?;
    record_direction(tape, logits, mask)
}

/// The six terms, their sum, and skipped-anchor counts per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    /// Indexed by [`LossTerm::index`]; inactive terms hold zero.
    pub terms: [T; 6],
    pub active: TermSet,
    pub total: T,
    pub skipped_anchors: [usize; 6],
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn get(&self, term: LossTerm) -> T {
        self.terms[term.index()]
    }
}

/// Fails if any row norm deviates from 1 by more than `tol`.
pub fn check_unit_rows<T: Scalar>(x: &Tensor<T>, tol: f64, what: &str) -> Result<()> {
    for i in 0..x.rows() {
        let n = x
            .row(i)
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt();
        if (n - 1.0).abs() > tol {
            return Err(Error::Contract(format!(
                "{what} row {i} has norm {n}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Settings of the cross-contrastive objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveObjective {
    pub terms: TermSet,
    pub temperature: Temperature,
    /// Reject embedding rows whose norm deviates from 1 by more than 1e-3.
    pub strict: bool,
}

impl Default for ContrastiveObjective {
    fn default() -> Self {
        Self {
            terms: TermSet::FULL,
            temperature: Temperature::default(),
            strict: false,
        }
    }
}

pub const STRICT_NORM_TOL: f64 = 1e-3;

impl ContrastiveObjective {
    /// Records the active terms on `tape`; returns the total node and the
    /// per-term values. With no active terms the total is a constant zero.
    pub fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        emb: &TriModalEmbeddings,
        labels: &[usize],
        scale: LogitScale<T>,
    ) -> Result<(Var, LossBreakdown<T>)> {
        self.record_with_labels(tape, emb, [labels, labels, labels], scale)
    }

    /// Like [`record`](Self::record) with separate label vectors for image,
    /// text and metadata batches.
    pub fn record_with_labels<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        emb: &TriModalEmbeddings,
        labels: [&[usize]; 3],
        scale: LogitScale<T>,
    ) -> Result<(Var, LossBreakdown<T>)> {
        let node = |m: Modality| match m {
            Modality::Image => emb.image,
            Modality::Text => emb.text,
            Modality::Meta => emb.meta,
        };
        let label_of = |m: Modality| match m {
            Modality::Image => labels[0],
            Modality::Text => labels[1],
            Modality::Meta => labels[2],
        };
        if self.strict {
            for m in [Modality::Image, Modality::Text, Modality::Meta] {
                if self.terms.touches(m) {
                    check_unit_rows(
                        tape.value(node(m)),
                        STRICT_NORM_TOL,
                        &format!("{m:?} embedding"),
                    )?;
                }
            }
        }

        let mut breakdown = LossBreakdown {
            terms: [T::zero(); 6],
            active: self.terms,
            total: T::zero(),
            skipped_anchors: [0; 6],
        };
        if self.terms.is_empty() {
            let zero = tape.leaf(Tensor::scalar(T::zero()));
            return Ok((zero, breakdown));
        }

        let scale = scale.prepare(tape);
        let mut total: Option<Var> = None;
        // Each unordered pair is visited once through its first listed direction.
        for term in [LossTerm::ImageText, LossTerm::MetaText, LossTerm::MetaImage] {
            let rev = term.reverse();
            if !self.terms.contains(term) && !self.terms.contains(rev) {
                continue;
            }
            let (a, b) = (term.anchor(), term.target());
            let bt = tape.transpose(node(b))?;
            let sim = tape.matmul(node(a), bt)?;
            let logits = scale_logits(tape, sim, scale)?;
            let mask = build_positive_mask(label_of(a), label_of(b))?;
            for (dir, mask) in [(term, mask.clone()), (rev, mask.transpose())] {
                if !self.terms.contains(dir) {
                    continue;
                }
                let logits = if dir == term {
                    logits
                } else {
                    tape.transpose(logits)?
                };
                let (l, skipped) = record_direction(tape, logits, &mask)?;
                breakdown.terms[dir.index()] = tape.value(l).item()?;
                breakdown.skipped_anchors[dir.index()] = skipped;
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
        }
        let total = total.expect("at least one active term");
        breakdown.total = tape.value(total).item()?;
        Ok((total, breakdown))
    }
}

/// Embeddings of one modality with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    pub embeddings: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(embeddings: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if embeddings.shape().len() != 2 || embeddings.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "EmbeddingBatch",
                lhs: embeddings.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        Ok(Self { embeddings, labels })
    }
}

/// `L_XY` evaluated directly on values at fixed temperature `tau`.
pub fn pair_loss<T: Scalar>(
    anchors: &Tensor<T>,
    targets: &Tensor<T>,
    mask: &PositiveMask,
    tau: T,
) -> Result<(T, usize)> {
    let mut tape = Tape::new();
    let a = tape.leaf(anchors.clone());
    let t = tape.leaf(targets.clone());
    let (l, skipped) = record_pair_loss(&mut tape, a, t, mask, LogitScale::fixed_tau(tau))?;
    Ok((tape.value(l).item()?, skipped))
}

fn value_loss<T: Scalar>(
    image: &EmbeddingBatch<T>,
    text: &EmbeddingBatch<T>,
    meta: &EmbeddingBatch<T>,
    tau: T,
    terms: TermSet,
) -> Result<LossBreakdown<T>> {
    let mut tape = Tape::new();
    let emb = TriModalEmbeddings {
        image: tape.leaf(image.embeddings.clone()),
        text: tape.leaf(text.embeddings.clone()),
        meta: tape.leaf(meta.embeddings.clone()),
    };
    let objective = ContrastiveObjective {
        terms,
        temperature: Temperature::Fixed { tau: tau.as_f64() },
        strict: false,
    };
    let labels = [
        image.labels.as_slice(),
        text.labels.as_slice(),
        meta.labels.as_slice(),
    ];
    let (_, breakdown) =
        objective.record_with_labels(&mut tape, &emb, labels, LogitScale::fixed_tau(tau))?;
    Ok(breakdown)
}

/// All six directions at fixed temperature `tau`.
pub fn total_loss<T: Scalar>(
    image: &EmbeddingBatch<T>,
    text: &EmbeddingBatch<T>,
    meta: &EmbeddingBatch<T>,
    tau: T,
) -> Result<LossBreakdown<T>> {
    value_loss(image, text, meta, tau, TermSet::FULL)
}

/// Image↔text directions only.
pub fn two_term_loss<T: Scalar>(
    image: &EmbeddingBatch<T>,
    text: &EmbeddingBatch<T>,
    tau: T,
) -> Result<LossBreakdown<T>> {
    // The metadata batch is never read when no term touches it.
    value_loss(image, text, image, tau, TermSet::two_term())
}

/// Euclidean norm of each active term's gradient with respect to the three
/// embedding batches.
pub fn term_gradient_norms<T: Scalar>(
    image: &EmbeddingBatch<T>,
    text: &EmbeddingBatch<T>,
    meta: &EmbeddingBatch<T>,
    tau: T,
    terms: TermSet,
) -> Result<[T; 6]> {
    let mut out = [T::zero(); 6];
    for term in terms.iter() {
        let mut tape = Tape::new();
        let emb = TriModalEmbeddings {
            image: tape.leaf(image.embeddings.clone()),
            text: tape.leaf(text.embeddings.clone()),
            meta: tape.leaf(meta.embeddings.clone()),
        };
        let objective = ContrastiveObjective {
            terms: TermSet::of(&[term]),
            temperature: Temperature::Fixed { tau: tau.as_f64() },
            strict: false,
        };
        let labels = [
            image.labels.as_slice(),
            text.labels.as_slice(),
            meta.labels.as_slice(),
        ];
        let (l, _) =
            objective.record_with_labels(&mut tape, &emb, labels, LogitScale::fixed_tau(tau))?;
        tape.backward(l)?;
        let sq: T = [emb.image, emb.text, emb.meta]
            .iter()
            .filter_map(|&v| tape.grad(v))
            .flat_map(|g| g.iter().map(|&x| x * x))
            .sum();
        out[term.index()] = sq.sqrt();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng as _;

    use super::*;
    use crate::autodiff::gradcheck::{central_difference, max_relative_error};
    use crate::rng::substream;

    const LN2: f64 = std::f64::consts::LN_2;

    fn unit_rows(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = substream(seed, "loss-test");
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let r: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(r.iter().map(|v| v / n));
        }
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    fn batch(t: Tensor<f64>, labels: &[usize]) -> EmbeddingBatch<f64> {
        EmbeddingBatch::new(t, labels.to_vec()).unwrap()
    }

    /// Scalar triple loop over anchors, positives and the softmax denominator.
    fn oracle_pair(
        a: &Tensor<f64>,
        t: &Tensor<f64>,
        la: &[usize],
        lt: &[usize],
        tau: f64,
    ) -> (f64, usize) {
        let dot =
            |i: usize, j: usize| -> f64 { a.row(i).iter().zip(t.row(j)).map(|(x, y)| x * y).sum() };
        let (mut sum, mut valid, mut skipped) = (0.0, 0usize, 0usize);
        for i in 0..la.len() {
            let pos: Vec<usize> = (0..lt.len()).filter(|&p| lt[p] == la[i]).collect();
            if pos.is_empty() {
                skipped += 1;
                continue;
            }
            let logits: Vec<f64> = (0..lt.len()).map(|j| dot(i, j) / tau).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            let mean_log_p: f64 =
                pos.iter().map(|&p| logits[p] - lse).sum::<f64>() / pos.len() as f64;
            sum -= mean_log_p;
            valid += 1;
        }
        (if valid == 0 { 0.0 } else { sum / valid as f64 }, skipped)
    }

    fn oracle_total(
        i: &Tensor<f64>,
        t: &Tensor<f64>,
        m: &Tensor<f64>,
        labels: &[usize],
        tau: f64,
    ) -> [f64; 6] {
        let mut out = [0.0; 6];
        for term in LossTerm::ALL {
            let pick = |md: Modality| match md {
                Modality::Image => i,
                Modality::Text => t,
                Modality::Meta => m,
            };
            out[term.index()] = oracle_pair(
                pick(term.anchor()),
                pick(term.target()),
                labels,
                labels,
                tau,
            )
            .0;
        }
        out
    }

    fn mask_rows(m: &PositiveMask) -> Vec<Vec<u8>> {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|p| m.get(i, p) as u8).collect())
            .collect()
    }

    #[test]
    fn mask_examples() {
        let m = build_positive_mask(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(
            mask_rows(&m),
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]
        );
        let m = build_positive_mask(&[1, 1, 2], &[1, 1, 2]).unwrap();
        assert_eq!(
            mask_rows(&m),
            vec![vec![1, 1, 0], vec![1, 1, 0], vec![0, 0, 1]]
        );
        assert!(m.is_symmetric());
        assert!(build_positive_mask(&[1, 2], &[1]).is_err());
    }

    proptest! {
        #[test]
        fn mask_matches_double_loop(labels in prop::collection::vec(0usize..4, 1..12), shift in 0usize..3) {
            let other: Vec<usize> = labels.iter().map(|l| (l + shift) % 4).collect();
            let m = build_positive_mask(&labels, &other).unwrap();
            for i in 0..labels.len() {
                for p in 0..other.len() {
                    prop_assert_eq!(m.get(i, p), labels[i] == other[p]);
                }
            }
            let same = build_positive_mask(&labels, &labels).unwrap();
            prop_assert!(same.is_symmetric());
            prop_assert!((0..labels.len()).all(|i| same.get(i, i)));
        }

        #[test]
        fn vectorized_matches_oracle(b in 1usize..=8, seed in 0u64..1000, classes in 1usize..5) {
            let mut rng = substream(seed, "labels");
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let (i, t, m) = (unit_rows(b, 6, seed), unit_rows(b, 6, seed + 1), unit_rows(b, 6, seed + 2));
            let got = total_loss(&batch(i.clone(), &labels), &batch(t.clone(), &labels), &batch(m.clone(), &labels), 0.5).unwrap();
            let want = oracle_total(&i, &t, &m, &labels, 0.5);
            for k in 0..6 {
                prop_assert!((got.terms[k] - want[k]).abs() < 1e-9);
                prop_assert!(got.terms[k] >= 0.0);
            }
        }
    }

    #[test]
    fn single_element_batch_is_zero() {
        let a = unit_rows(1, 4, 1);
        let mask = build_positive_mask(&[0], &[0]).unwrap();
        assert_eq!(
            pair_loss(&a, &unit_rows(1, 4, 2), &mask, 0.1).unwrap(),
            (0.0, 0)
        );
    }

    #[test]
    fn two_orthogonal_distinct_classes() {
        // Targets orthogonal to every anchor: all logits are zero.
        let i = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let t = Tensor::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mask = build_positive_mask(&[0, 1], &[0, 1]).unwrap();
        let (l, _) = pair_loss(&i, &t, &mask, 1.0).unwrap();
        assert!((l - LN2).abs() < 1e-15);
        let two = two_term_loss(&batch(i, &[0, 1]), &batch(t, &[0, 1]), 1.0).unwrap();
        assert!((two.total - 2.0 * LN2).abs() < 1e-15);
    }

    #[test]
    fn four_with_duplicates_matches_oracle() {
        let labels = [0, 1, 0, 2];
        let (a, t) = (unit_rows(4, 5, 7), unit_rows(4, 5, 8));
        let mask = build_positive_mask(&labels, &labels).unwrap();
        for tau in [0.007, 0.1, 1.0] {
            let (got, _) = pair_loss(&a, &t, &mask, tau).unwrap();
            let (want, _) = oracle_pair(&a, &t, &labels, &labels, tau);
            assert!((got - want).abs() < 1e-10, "tau {tau}: {got} vs {want}");
        }
    }

    #[test]
    fn total_matches_oracle_and_sums_terms() {
        let mut rng = substream(3, "labels");
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let (i, t, m) = (
            unit_rows(8, 16, 1),
            unit_rows(8, 16, 2),
            unit_rows(8, 16, 3),
        );
        let got = total_loss(
            &batch(i.clone(), &labels),
            &batch(t.clone(), &labels),
            &batch(m.clone(), &labels),
            0.007,
        )
        .unwrap();
        let want = oracle_total(&i, &t, &m, &labels, 0.007);
        assert!((got.total - want.iter().sum::<f64>()).abs() < 1e-9);
        let mut sum = 0.0;
        for term in LossTerm::ALL {
            let pick = |md: Modality| match md {
                Modality::Image => &i,
                Modality::Text => &t,
                Modality::Meta => &m,
            };
            let mask = build_positive_mask(&labels, &labels).unwrap();
            let (alone, _) =
                pair_loss(pick(term.anchor()), pick(term.target()), &mask, 0.007).unwrap();
            assert!((alone - got.get(term)).abs() < 1e-12);
            sum += alone;
        }
        assert!((got.total - sum).abs() < 1e-12);
    }

    #[test]
    fn identical_batches_give_symmetric_terms() {
        let labels = [0, 1, 2, 3, 4];
        let z = unit_rows(5, 8, 4);
        let b = batch(z, &labels);
        let got = total_loss(&b, &b, &b, 1.0).unwrap();
        for t in LossTerm::ALL {
            assert!((got.get(t) - got.get(LossTerm::ImageText)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_term_is_total_without_meta_terms() {
        let labels = [0, 1, 1, 2, 0, 3];
        let (i, t, m) = (
            unit_rows(6, 4, 11),
            unit_rows(6, 4, 12),
            unit_rows(6, 4, 13),
        );
        let (bi, bt, bm) = (
            batch(i.clone(), &labels),
            batch(t.clone(), &labels),
            batch(m, &labels),
        );
        let full = total_loss(&bi, &bt, &bm, 0.2).unwrap();
        let two = two_term_loss(&bi, &bt, 0.2).unwrap();
        let meta: f64 = [
            LossTerm::MetaText,
            LossTerm::TextMeta,
            LossTerm::MetaImage,
            LossTerm::ImageMeta,
        ]
        .iter()
        .map(|&t| full.get(t))
        .sum();
        assert!((two.total - (full.total - meta)).abs() < 1e-12);
        let want = oracle_pair(&i, &t, &labels, &labels, 0.2).0
            + oracle_pair(&t, &i, &labels, &labels, 0.2).0;
        assert!((two.total - want).abs() < 1e-10);
        assert!(two.active.len() == 2 && two.get(LossTerm::MetaText) == 0.0);
    }

    #[test]
    fn joint_permutation_leaves_terms_unchanged() {
        let labels = [2, 0, 1, 0, 2, 1, 1];
        let (i, t, m) = (
            unit_rows(7, 5, 21),
            unit_rows(7, 5, 22),
            unit_rows(7, 5, 23),
        );
        let perm = [3, 6, 0, 5, 1, 4, 2];
        let permute = |x: &Tensor<f64>| {
            Tensor::from_rows(&perm.iter().map(|&p| x.row(p).to_vec()).collect::<Vec<_>>()).unwrap()
        };
        let pl: Vec<usize> = perm.iter().map(|&p| labels[p]).collect();
        let a = total_loss(
            &batch(i.clone(), &labels),
            &batch(t.clone(), &labels),
            &batch(m.clone(), &labels),
            0.05,
        )
        .unwrap();
        let b = total_loss(
            &batch(permute(&i), &pl),
            &batch(permute(&t), &pl),
            &batch(permute(&m), &pl),
            0.05,
        )
        .unwrap();
        for k in 0..6 {
            assert!((a.terms[k] - b.terms[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_positive_is_cross_entropy() {
        let labels = [0, 1, 2, 3];
        let (a, t) = (unit_rows(4, 6, 31), unit_rows(4, 6, 32));
        let tau = 0.3;
        let mut ce = 0.0;
        for i in 0..4 {
            let logits: Vec<f64> = (0..4)
                .map(|j| {
                    a.row(i)
                        .iter()
                        .zip(t.row(j))
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                        / tau
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            ce += -(logits[i].exp() / z).ln();
        }
        let mask = build_positive_mask(&labels, &labels).unwrap();
        let (got, _) = pair_loss(&a, &t, &mask, tau).unwrap();
        assert!((got - ce / 4.0).abs() < 1e-12);
    }

    /// Gradient of one direction with respect to its logits.
    fn logit_grad(logits: &Tensor<f64>, mask: &PositiveMask) -> Vec<f64> {
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let (loss, _) = record_direction(&mut tape, l, mask).unwrap();
        tape.backward(loss).unwrap();
        tape.grad(l).unwrap().to_vec()
    }

    #[test]
    fn raising_positive_similarity_never_increases_the_loss() {
        for seed in 0..20 {
            let mut rng = substream(seed, "mono");
            let b = 6;
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
            let logits = Tensor::new(
                vec![b, b],
                (0..b * b).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let mask = build_positive_mask(&labels, &labels).unwrap();
            let g = logit_grad(&logits, &mask);
            for i in 0..b {
                // Directional derivative along all positives of anchor i at once.
                let d: f64 = (0..b)
                    .filter(|&p| mask.get(i, p))
                    .map(|p| g[i * b + p])
                    .sum();
                assert!(d <= 1e-15, "seed {seed} anchor {i}: {d}");
                if mask.positives(i) == 1 {
                    assert!(g[i * b + i] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn loss_vanishes_for_saturated_single_positives() {
        let z = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let mask = build_positive_mask(&[0, 1, 2], &[0, 1, 2]).unwrap();
        let (l, _) = pair_loss(&z, &z, &mask, 0.01).unwrap();
        assert!((0.0..1e-40).contains(&l), "{l}");
    }

    #[test]
    fn anchors_without_positives_are_skipped() {
        let (a, t) = (unit_rows(3, 4, 41), unit_rows(3, 4, 42));
        let la = [0, 1, 5];
        let lt = [0, 1, 1];
        let mask = build_positive_mask(&la, &lt).unwrap();
        let (got, skipped) = pair_loss(&a, &t, &mask, 0.5).unwrap();
        let (want, ws) = oracle_pair(&a, &t, &la, &lt, 0.5);
        assert_eq!((skipped, ws), (1, 1));
        assert!((got - want).abs() < 1e-12);
        let none = build_positive_mask(&[7, 8], &[0, 1]).unwrap();
        assert_eq!(
            pair_loss(&unit_rows(2, 4, 1), &unit_rows(2, 4, 2), &none, 0.5).unwrap(),
            (0.0, 2)
        );
    }

    #[test]
    fn strict_mode_rejects_unnormalized_rows() {
        let mut tape = Tape::new();
        let good = unit_rows(2, 3, 1);
        let bad = Tensor::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let emb = TriModalEmbeddings {
            image: tape.leaf(good.clone()),
            text: tape.leaf(good),
            meta: tape.leaf(bad),
        };
        let strict = ContrastiveObjective {
            strict: true,
            ..ContrastiveObjective::default()
        };
        let scale = LogitScale::fixed_tau(0.1);
        assert!(matches!(
            strict.record(&mut tape, &emb, &[0, 1], scale),
            Err(Error::Contract(_))
        ));
        let two = ContrastiveObjective {
            terms: TermSet::two_term(),
            ..strict
        };
        assert!(two.record(&mut tape, &emb, &[0, 1], scale).is_ok());
        assert!(ContrastiveObjective::default()
            .record(&mut tape, &emb, &[0, 1], scale)
            .is_ok());
    }

    #[test]
    fn empty_term_set_is_zero() {
        let mut tape = Tape::new();
        let z = unit_rows(2, 3, 1);
        let emb = TriModalEmbeddings {
            image: tape.leaf(z.clone()),
            text: tape.leaf(z.clone()),
            meta: tape.leaf(z),
        };
        let obj = ContrastiveObjective {
            terms: TermSet::EMPTY,
            ..ContrastiveObjective::default()
        };
        let (l, b) = obj
            .record(&mut tape, &emb, &[0, 1], LogitScale::fixed_tau(0.1))
            .unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn total_gradient_matches_finite_differences_with_learned_temperature() {
        let labels = [0, 1, 0, 2, 1];
        let (b, d) = (5, 4);
        for seed in 0..5 {
            let i = unit_rows(b, d, seed * 3);
            let t = unit_rows(b, d, seed * 3 + 1);
            let m = unit_rows(b, d, seed * 3 + 2);
            let s0 = (1.0f64 / 0.3).ln();
            let mut x: Vec<f64> = [i.data(), t.data(), m.data()].concat();
            x.push(s0);
            let eval = |p: &[f64], grad: bool| -> (f64, Vec<f64>) {
                let n = b * d;
                let mut tape = Tape::new();
                let emb = TriModalEmbeddings {
                    image: tape.leaf(Tensor::new(vec![b, d], p[..n].to_vec()).unwrap()),
                    text: tape.leaf(Tensor::new(vec![b, d], p[n..2 * n].to_vec()).unwrap()),
                    meta: tape.leaf(Tensor::new(vec![b, d], p[2 * n..3 * n].to_vec()).unwrap()),
                };
                let s = tape.leaf(Tensor::scalar(p[3 * n]));
                let obj = ContrastiveObjective::default();
                let (l, _) = obj
                    .record(&mut tape, &emb, &labels, LogitScale::Learned(s))
                    .unwrap();
                let v = tape.value(l).item().unwrap();
                if !grad {
                    return (v, Vec::new());
                }
                tape.backward(l).unwrap();
                let g = [emb.image, emb.text, emb.meta, s]
                    .iter()
                    .flat_map(|&v| tape.grad(v).unwrap().to_vec())
                    .collect();
                (v, g)
            };
            let (_, analytic) = eval(&x, true);
            let numeric = central_difference(|p| eval(p, false).0, &x, 1e-6);
            let err = max_relative_error(&analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn learned_scale_is_clamped() {
        let (lo, hi) = Temperature::logit_scale_bounds();
        assert!((lo - (0.01f64).ln()).abs() < 1e-15 && (hi - (1e4f64).ln()).abs() < 1e-12);
        let z = unit_rows(3, 4, 5);
        let mut tape = Tape::new();
        let a = tape.leaf(z.clone());
        let s = tape.leaf(Tensor::scalar(50.0));
        let mask = build_positive_mask(&[0, 1, 2], &[0, 1, 2]).unwrap();
        let (l, _) = record_pair_loss(&mut tape, a, a, &mask, LogitScale::Learned(s)).unwrap();
        let (want, _) = pair_loss(&z, &z, &mask, 1e-4).unwrap();
        assert!((tape.value(l).item().unwrap() - want).abs() < 1e-9);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(s).unwrap(), &[0.0]);
    }

    #[test]
    fn temperature_validation_and_serde() {
        assert!(Temperature::Fixed { tau: 0.0 }.validate().is_err());
        assert!(Temperature::Learnable { initial_tau: 200.0 }
            .validate()
            .is_err());
        assert!(Temperature::default().validate().is_ok());
        let t: Temperature =
            serde_json::from_str(r#"{"mode":"learnable","initial_tau":0.07}"#).unwrap();
        assert!(t.is_learnable());
        let s: TermSet = serde_json::from_str(r#"["IT","TI","MI"]"#).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(TermSet::FULL.without(&[LossTerm::ImageMeta]).len(), 5);
        assert_eq!(LossTerm::from_code("tm").unwrap(), LossTerm::TextMeta);
        assert_eq!(LossTerm::MetaImage.to_string(), "L_MI");
    }
}
