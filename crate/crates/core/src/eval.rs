//! Metrics, the loss-term ablation harness, and the location exports
//! (metadata-embedding grid and class-probability heatmap).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::geo::great_circle_deg;
use crate::data::{Dataset, Sample, SisterKind, SisterPair};
use crate::encoders::{EncoderConfig, MetaInput, TriModalModel};
use crate::error::{Error, Result};
use crate::loss::{ContrastiveObjective, LossTerm, TermSet};
use crate::scalar::Scalar;
use crate::train::{
    finetune, pretrain, Classifier, FinetuneReport, HeadInput, Prediction, PretrainReport,
    TrainConfig,
};

/// Anything that maps samples to class predictions.
pub trait Classify {
    fn num_classes(&self) -> usize;
    fn predict(&self, samples: &[Sample]) -> Result<Vec<Prediction>>;
}

impl<T: Scalar> Classify for Classifier<T> {
    fn num_classes(&self) -> usize {
        Classifier::num_classes(self)
    }

    fn predict(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        Classifier::predict(self, samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAccuracy {
    pub a: usize,
    pub b: usize,
    pub kind: SisterKind,
    pub samples: usize,
    pub accuracy: f64,
}

/// Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub samples: usize,
    pub top1_accuracy: f64,
    /// `None` for classes absent from the evaluated split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Pooled over all sister-pair samples; each sample is a binary decision
    /// between the two classes of its pair. `None` without pairs.
    pub sister_pair_accuracy: Option<f64>,
    pub sister_pairs: Vec<PairAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Pair decision: the more probable of the two classes, lower index on ties.
fn pair_decision(p: &Prediction, pair: &SisterPair) -> usize {
    if p.probabilities[pair.b] > p.probabilities[pair.a] {
        pair.b
    } else {
        pair.a
    }
}

pub fn report_from_predictions(
    samples: &[Sample],
    predictions: &[Prediction],
    num_classes: usize,
    pairs: &[SisterPair],
) -> Result<EvalReport> {
    if samples.len() != predictions.len() {
        return Err(Error::Dimension {
            op: "evaluate",
            lhs: vec![samples.len()],
            rhs: vec![predictions.len()],
        });
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (s, p) in samples.iter().zip(predictions) {
        if s.class >= num_classes || p.class >= num_classes {
            return Err(Error::validation(
                "class",
                format!("sample {} outside {num_classes} classes", s.id),
            ));
        }
        confusion[s.class][p.class] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();

    let mut sister_pairs = Vec::new();
    let (mut pooled_n, mut pooled_ok) = (0usize, 0usize);
    for pair in pairs {
        let (mut n, mut ok) = (0usize, 0usize);
        for (s, p) in samples.iter().zip(predictions) {
            if pair.contains(s.class) {
                n += 1;
                ok += usize::from(pair_decision(p, pair) == s.class);
            }
        }
        pooled_n += n;
        pooled_ok += ok;
        sister_pairs.push(PairAccuracy {
            a: pair.a,
            b: pair.b,
            kind: pair.kind,
            samples: n,
            accuracy: if n == 0 { 0.0 } else { ok as f64 / n as f64 },
        });
    }
    Ok(EvalReport {
        seed: None,
        config_hash: None,
        samples: samples.len(),
        top1_accuracy: if samples.is_empty() {
            0.0
        } else {
            correct as f64 / samples.len() as f64
        },
        per_class_accuracy,
        sister_pair_accuracy: (pooled_n > 0).then(|| pooled_ok as f64 / pooled_n as f64),
        sister_pairs,
        confusion,
    })
}

pub fn evaluate<C: Classify + ?Sized>(
    clf: &C,
    data: &Dataset,
    pairs: &[SisterPair],
) -> Result<EvalReport> {
    let preds = clf.predict(&data.samples)?;
    report_from_predictions(&data.samples, &preds, clf.num_classes(), pairs)
}

/// One pre-train + fine-tune recipe of the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Image↔text terms only.
    TwoTerm,
    DropImageMeta,
    DropTextMeta,
    /// No pre-training; fine-tune from the initial encoders.
    NoPretrain,
    /// Two-term pre-training and a head on the image embedding alone.
    ImageOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::TwoTerm,
        Variant::DropImageMeta,
        Variant::DropTextMeta,
        Variant::NoPretrain,
        Variant::ImageOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TwoTerm => "two_term",
            Variant::DropImageMeta => "drop_image_meta",
            Variant::DropTextMeta => "drop_text_meta",
            Variant::NoPretrain => "no_pretrain",
            Variant::ImageOnly => "image_only",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::validation("variant", format!("unknown variant {name:?}")))
    }

    pub fn terms(self) -> TermSet {
        match self {
            Variant::Full => TermSet::FULL,
            Variant::TwoTerm | Variant::ImageOnly => TermSet::two_term(),
            Variant::DropImageMeta => {
                TermSet::FULL.without(&[LossTerm::ImageMeta, LossTerm::MetaImage])
            }
            Variant::DropTextMeta => {
                TermSet::FULL.without(&[LossTerm::TextMeta, LossTerm::MetaText])
            }
            Variant::NoPretrain => TermSet::EMPTY,
        }
    }

    pub fn head_input(self) -> HeadInput {
        match self {
            Variant::ImageOnly => HeadInput::ImageOnly,
            _ => HeadInput::ImageAndMeta,
        }
    }
}

/// What a run trains on and how.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub pairs: &'a [SisterPair],
    pub encoders: &'a EncoderConfig,
    pub objective: ContrastiveObjective,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub terms: TermSet,
    pub head_input: HeadInput,
    pub report: EvalReport,
    pub pretrain: PretrainReport,
    pub finetune: FinetuneReport,
}

/// Pre-trains with `terms` and fine-tunes a `head_input` head. Initial
/// parameters and data order depend only on `seed`.
pub fn run_terms<T: Scalar>(
    exp: &Experiment<'_>,
    terms: TermSet,
    head_input: HeadInput,
    seed: u64,
) -> Result<(Classifier<T>, PretrainReport, FinetuneReport)> {
    let objective = ContrastiveObjective {
        terms,
        ..exp.objective
    };
    let mut model =
        TriModalModel::<T>::new(exp.encoders, objective.temperature.initial_tau(), seed)?;
    let pre = pretrain(&mut model, exp.train, &objective, &exp.training, seed)?;
    let cfg = TrainConfig {
        head_input,
        ..exp.training
    };
    let (clf, fine) = finetune(model, exp.train, &cfg, seed)?;
    Ok((clf, pre, fine))
}

pub fn run_variant<T: Scalar>(
    exp: &Experiment<'_>,
    variant: Variant,
    seed: u64,
) -> Result<(Classifier<T>, RunResult)> {
    let (clf, pretrain, finetune) =
        run_terms::<T>(exp, variant.terms(), variant.head_input(), seed)?;
    let mut report = evaluate(&clf, exp.test, exp.pairs)?;
    report.seed = Some(seed);
    Ok((
        clf,
        RunResult {
            variant: variant.name().to_string(),
            seed,
            terms: variant.terms(),
            head_input: variant.head_input(),
            report,
            pretrain,
            finetune,
        },
    ))
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub top1_mean: f64,
    pub top1_sd: f64,
    pub sister_mean: f64,
    pub sister_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn summary_of(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant.name())
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every variant for every seed; all variants of one seed share the
/// initial parameters and the data order.
pub fn run_ablation<T: Scalar>(
    exp: &Experiment<'_>,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationReport> {
    let mut runs = Vec::new();
    for &v in variants {
        for &seed in seeds {
            runs.push(run_variant::<T>(exp, v, seed)?.1);
        }
    }
    Ok(AblationReport::from_runs(variants, seeds, runs))
}

impl AblationReport {
    /// Groups finished runs by variant and summarizes them.
    pub fn from_runs(variants: &[Variant], seeds: &[u64], runs: Vec<RunResult>) -> Self {
        let summary = variants
            .iter()
            .map(|v| {
                let of: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v.name()).collect();
                let top1: Vec<f64> = of.iter().map(|r| r.report.top1_accuracy).collect();
                let sister: Vec<f64> = of
                    .iter()
                    .filter_map(|r| r.report.sister_pair_accuracy)
                    .collect();
                let (top1_mean, top1_sd) = mean_sd(&top1);
                let (sister_mean, sister_sd) = mean_sd(&sister);
                VariantSummary {
                    variant: v.name().to_string(),
                    seeds: seeds.to_vec(),
                    top1_mean,
                    top1_sd,
                    sister_mean,
                    sister_sd,
                }
            })
            .collect();
        Self { runs, summary }
    }
}

/// Regular lat/lon grid; cells are listed north to south, then west to east.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lat_min: -90.0,
            lat_max: 90.0,
            lon_min: -180.0,
            lon_max: 180.0,
            rows: 60,
            cols: 120,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(
                "grid needs at least one row and column".into(),
            ));
        }
        let ok = (-90.0..=90.0).contains(&self.lat_min)
            && (-90.0..=90.0).contains(&self.lat_max)
            && (-180.0..=180.0).contains(&self.lon_min)
            && (-180.0..=180.0).contains(&self.lon_max)
            && self.lat_min < self.lat_max
            && self.lon_min < self.lon_max;
        if !ok {
            return Err(Error::Config(format!("invalid grid bounding box {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell-center latitude of row `r`.
    pub fn lat(&self, r: usize) -> f64 {
        self.lat_max - (r as f64 + 0.5) * (self.lat_max - self.lat_min) / self.rows as f64
    }

    /// Cell-center longitude of column `c`.
    pub fn lon(&self, c: usize) -> f64 {
        self.lon_min + (c as f64 + 0.5) * (self.lon_max - self.lon_min) / self.cols as f64
    }

    /// `(lat, lon)` of every cell in row-major order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (self.lat(r), self.lon(c))))
            .collect()
    }

    fn metas(&self, day_of_year: u16) -> Result<Vec<MetaInput>> {
        self.validate()?;
        self.cells()
            .into_iter()
            .map(|(lat, lon)| MetaInput::new(lat, lon, day_of_year))
            .collect()
    }
}

/// Metadata-encoder embedding of every grid cell at one date.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationEmbeddings {
    pub grid: GridSpec,
    pub day_of_year: u16,
    /// `grid.len()` rows of `shared_dim` values.
    pub rows: Vec<Vec<f64>>,
}

pub fn export_location_embeddings<T: Scalar>(
    model: &TriModalModel<T>,
    grid: &GridSpec,
    day_of_year: u16,
) -> Result<LocationEmbeddings> {
    let metas = grid.metas(day_of_year)?;
    let z = model.meta_embeddings(&metas)?;
    let rows = (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    Ok(LocationEmbeddings {
        grid: *grid,
        day_of_year,
        rows,
    })
}

impl LocationEmbeddings {
    /// Writes `lat,lon,e0,…` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut header = vec!["lat".to_string(), "lon".to_string()];
        header.extend((0..dim).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for ((lat, lon), row) in self.grid.cells().into_iter().zip(&self.rows) {
            let mut rec = vec![lat.to_string(), lon.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Probability of one class at every grid cell for a fixed image and date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub grid: GridSpec,
    pub class_id: usize,
    pub day_of_year: u16,
    /// Row-major, `grid.rows × grid.cols`.
    pub values: Vec<f64>,
}

/// Sidecar describing a heatmap matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapHeader {
    pub class_id: usize,
    pub day_of_year: u16,
    pub grid: GridSpec,
    pub matrix_file: String,
}

pub fn class_heatmap<T: Scalar>(
    clf: &Classifier<T>,
    class_id: usize,
    image: &[f64],
    day_of_year: u16,
    grid: &GridSpec,
) -> Result<HeatmapGrid> {
    if class_id >= clf.num_classes() {
        return Err(Error::validation(
            "class id",
            format!(
                "{class_id} unknown (head has {} classes)",
                clf.num_classes()
            ),
        ));
    }
    let metas = grid.metas(day_of_year)?;
    let images = vec![image; metas.len()];
    let preds = clf.predict_inputs(&images, &metas)?;
    Ok(HeatmapGrid {
        grid: *grid,
        class_id,
        day_of_year,
        values: preds
            .into_iter()
            .map(|p| p.probabilities[class_id])
            .collect(),
    })
}

impl HeatmapGrid {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid.cols + c]
    }

    /// `(mean inside, mean outside)` for cells whose centers lie within
    /// `radius` degrees (great circle) of `center`.
    pub fn range_means(&self, center: (f64, f64), radius: f64) -> (f64, f64) {
        let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
        for ((lat, lon), v) in self.grid.cells().into_iter().zip(&self.values) {
            if great_circle_deg(lat, lon, center.0, center.1) <= radius {
                sin += v;
                nin += 1;
            } else {
                sout += v;
                nout += 1;
            }
        }
        (sin / nin.max(1) as f64, sout / nout.max(1) as f64)
    }

    /// Writes the matrix (`<stem>.csv`, one grid row per line, no header) and
    /// the sidecar (`<stem>.json`).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let matrix = dir.join(format!("{stem}.csv"));
        let mut f = fs::File::create(&matrix).map_err(|e| Error::io(&matrix, e))?;
        for r in 0..self.grid.rows {
            let line: Vec<String> = (0..self.grid.cols)
                .map(|c| self.at(r, c).to_string())
                .collect();
            writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(&matrix, e))?;
        }
        let header = HeatmapHeader {
            class_id: self.class_id,
            day_of_year: self.day_of_year,
            grid: self.grid,
            matrix_file: format!("{stem}.csv"),
        };
        let side = dir.join(format!("{stem}.json"));
        fs::write(&side, serde_json::to_string_pretty(&header)?)
            .map_err(|e| Error::io(&side, e))?;
        Ok(())
    }
}
