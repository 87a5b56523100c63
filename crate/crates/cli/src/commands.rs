use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crosscon::checkpoint::Checkpoint;
use crosscon::config::{Precision, RunConfig};
use crosscon::data::{generate, write_table, SpeciesSetFile};
use crosscon::encoders::TriModalModel;
use crosscon::eval::{
    class_heatmap, evaluate, export_location_embeddings, run_variant, AblationReport, Experiment,
    Variant,
};
use crosscon::loss::{LossTerm, Temperature};
use crosscon::train::{finetune as fit_head, pretrain as fit_encoders, PretrainReport};
use crosscon::Scalar;
use serde_json::{json, Map, Value};

use crate::datadir::{sha256_hex, Counts, DataDir, DataManifest, FORMAT};
use crate::run::{with_run_dir, RunDir};
use crate::{
    AblateArgs, Common, EvalArgs, ExportArgs, FinetuneArgs, GenDataArgs, HeatmapArgs, PrecisionArg,
    PretrainArgs, TrainFlags,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_out(root: &Path, stem: &str) -> PathBuf {
    root.join(format!(
        "{stem}-{}",
        chrono::Utc::now().format("%Y%m%dT%H%M%S")
    ))
}

fn out_dir(common: &Common, root: &Path, stem: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| default_out(root, stem))
}

/// Defaults, then the config file, then flags.
fn resolve(common: &Common, flags: Option<&TrainFlags>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = flags {
        if f.seed.is_some() {
            cfg.seed = f.seed;
        }
        if let Some(p) = f.precision {
            cfg.precision = match p {
                PrecisionArg::F64 => Precision::F64,
                PrecisionArg::F32 => Precision::F32,
            };
        }
        if let Some(b) = f.batch_size {
            cfg.training.batch_size = b;
        }
        if let Some(e) = f.pretrain_epochs {
            cfg.training.pretrain_epochs = e;
        }
        if let Some(e) = f.finetune_epochs {
            cfg.training.finetune_epochs = e;
        }
        if let Some(tau) = f.tau {
            cfg.loss.temperature = Temperature::Fixed { tau };
        }
        if f.unfreeze {
            cfg.training.freeze_encoders = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The text encoder has one prompt per class and the image encoder reads the
/// table's feature width, so both come from the data.
fn fit_to_data(cfg: &mut RunConfig, data: &DataDir) -> Result<()> {
    cfg.encoders.num_classes = data.train.num_classes;
    cfg.encoders.image_input_dim = data.train.feature_dim();
    cfg.validate()?;
    Ok(())
}

/// Echoes the resolved config and the run identity into the run directory.
fn record_run(dir: &mut RunDir, command: &str, cfg: &RunConfig, inputs: Value) -> Result<()> {
    dir.write("config.toml", cfg.to_toml()?)?;
    let run = json!({
        "command": command,
        "version": VERSION,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "precision": cfg.precision.name(),
        "inputs": inputs,
    });
    dir.write_json("run.json", &run)?;
    dir.log("config", json!({ "config_hash": cfg.hash() }))
}

fn term_map(terms: &[f64; 6]) -> Value {
    let mut m = Map::new();
    for t in LossTerm::ALL {
        m.insert(t.code().to_string(), json!(terms[t.index()]));
    }
    Value::Object(m)
}

fn log_pretrain(dir: &mut RunDir, report: &PretrainReport) -> Result<()> {
    for e in &report.epochs {
        dir.log(
            "pretrain_epoch",
            json!({ "epoch": e.epoch, "terms": term_map(&e.terms), "total": e.total, "batches": e.batches }),
        )?;
    }
    Ok(())
}

pub fn gen_data(root: &Path, a: GenDataArgs) -> Result<PathBuf> {
    let file = match &a.spec {
        Some(p) => SpeciesSetFile::from_toml(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => SpeciesSetFile::default(),
    };
    let set = file.resolve(a.seed).context("invalid species spec")?;
    let (train, test) = generate(&set, a.n_per_class, a.seed)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("data-{}", a.seed)));
    with_run_dir(&out, |d| {
        let spec_text = file.to_toml()?;
        d.write("species.toml", &spec_text)?;
        write_table(&d.path("train.csv"), &train)?;
        write_table(&d.path("test.csv"), &test)?;
        let manifest = DataManifest {
            format: FORMAT.into(),
            seed: a.seed,
            n_per_class: a.n_per_class,
            feature_dim: set.feature_dim,
            num_classes: set.num_classes(),
            classes: set.class_names(),
            sister_pairs: set.sister_pairs(),
            counts: Counts {
                train: train.len(),
                test: test.len(),
            },
            spec_hash: sha256_hex(spec_text.as_bytes()),
            generator_version: VERSION.into(),
        };
        d.write_json("manifest.json", &manifest)?;
        let cfg = RunConfig {
            seed: Some(a.seed),
            data: crosscon::config::DataSection {
                species: a.spec.clone(),
                n_per_class: a.n_per_class,
            },
            ..RunConfig::default()
        };
        d.write("config.toml", cfg.to_toml()?)?;
        d.log(
            "generated",
            json!({ "train": train.len(), "test": test.len(), "classes": manifest.num_classes }),
        )
    })
}

pub fn pretrain(root: &Path, a: PretrainArgs) -> Result<PathBuf> {
    let data = DataDir::load(&a.data)?;
    let mut cfg = resolve(&a.common, Some(&a.train))?;
    fit_to_data(&mut cfg, &data)?;
    let seed = cfg.require_seed()?;
    with_run_dir(&out_dir(&a.common, root, "pretrain"), |d| {
        record_run(
            d,
            "pretrain",
            &cfg,
            json!({ "data": data.identity(&a.data) }),
        )?;
        match cfg.precision {
            Precision::F64 => pretrain_as::<f64>(d, &cfg, &data, seed),
            Precision::F32 => pretrain_as::<f32>(d, &cfg, &data, seed),
        }
    })
}

fn pretrain_as<T: Scalar>(
    d: &mut RunDir,
    cfg: &RunConfig,
    data: &DataDir,
    seed: u64,
) -> Result<()> {
    let mut model =
        TriModalModel::<T>::new(&cfg.encoders, cfg.loss.temperature.initial_tau(), seed)?;
    let report = fit_encoders(&mut model, &data.train, &cfg.loss, &cfg.training, seed)?;
    log_pretrain(d, &report)?;
    Checkpoint::from_model(&model, seed, &cfg.hash()).save(&d.path("checkpoint.json"))?;
    Ok(())
}

pub fn finetune(root: &Path, a: FinetuneArgs) -> Result<PathBuf> {
    let data = DataDir::load(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = resolve(&a.common, Some(&a.train))?;
    // Architecture and precision follow the checkpoint.
    cfg.encoders = ck.encoders.clone();
    cfg.precision = ck.precision;
    let seed = cfg.require_seed()?;
    with_run_dir(&out_dir(&a.common, root, "finetune"), |d| {
        record_run(
            d,
            "finetune",
            &cfg,
            json!({ "data": data.identity(&a.data), "checkpoint": a.checkpoint, "checkpoint_config_hash": ck.config_hash }),
        )?;
        match cfg.precision {
            Precision::F64 => finetune_as::<f64>(d, &cfg, &ck, &data, seed),
            Precision::F32 => finetune_as::<f32>(d, &cfg, &ck, &data, seed),
        }
    })
}

fn finetune_as<T: Scalar>(
    d: &mut RunDir,
    cfg: &RunConfig,
    ck: &Checkpoint,
    data: &DataDir,
    seed: u64,
) -> Result<()> {
    let model = ck.to_model::<T>()?;
    let (clf, report) = fit_head(model, &data.train, &cfg.training, seed)?;
    for e in &report.epochs {
        d.log(
            "finetune_epoch",
            json!({ "epoch": e.epoch, "loss": e.loss, "train_accuracy": e.train_accuracy }),
        )?;
    }
    let test = evaluate(&clf, &data.test, &data.pairs)?;
    d.log(
        "test_accuracy",
        json!({ "top1_accuracy": test.top1_accuracy, "sister_pair_accuracy": test.sister_pair_accuracy }),
    )?;
    Checkpoint::from_classifier(&clf, seed, &cfg.hash()).save(&d.path("classifier.json"))?;
    Ok(())
}

pub fn eval(root: &Path, a: EvalArgs) -> Result<PathBuf> {
    let data = DataDir::load(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = resolve(&a.common, None)?;
    cfg.encoders = ck.encoders.clone();
    cfg.precision = ck.precision;
    cfg.seed = Some(ck.seed);
    with_run_dir(&out_dir(&a.common, root, "eval"), |d| {
        record_run(
            d,
            "eval",
            &cfg,
            json!({ "data": data.identity(&a.data), "checkpoint": a.checkpoint }),
        )?;
        let mut report = match ck.precision {
            Precision::F64 => evaluate(&ck.to_classifier::<f64>()?, &data.test, &data.pairs)?,
            Precision::F32 => evaluate(&ck.to_classifier::<f32>()?, &data.test, &data.pairs)?,
        };
        report.seed = Some(ck.seed);
        report.config_hash = Some(ck.config_hash.clone());
        d.write("report.json", report.to_json()? + "\n")?;
        d.log(
            "evaluated",
            json!({ "top1_accuracy": report.top1_accuracy, "sister_pair_accuracy": report.sister_pair_accuracy }),
        )
    })
}

pub fn ablate(root: &Path, a: AblateArgs) -> Result<PathBuf> {
    let data = DataDir::load(&a.data)?;
    let mut cfg = resolve(&a.common, Some(&a.train))?;
    fit_to_data(&mut cfg, &data)?;
    if let Some(seeds) = &a.seeds {
        cfg.evaluation.seeds = seeds.clone();
    }
    if let Some(names) = &a.variants {
        cfg.evaluation.variants = names
            .iter()
            .map(|n| Variant::from_name(n))
            .collect::<crosscon::Result<_>>()?;
    }
    if cfg.evaluation.seeds.is_empty() || cfg.evaluation.variants.is_empty() {
        bail!("ablation needs at least one seed and one variant");
    }
    with_run_dir(&out_dir(&a.common, root, "ablate"), |d| {
        record_run(d, "ablate", &cfg, json!({ "data": data.identity(&a.data) }))?;
        match cfg.precision {
            Precision::F64 => ablate_as::<f64>(d, &cfg, &data),
            Precision::F32 => ablate_as::<f32>(d, &cfg, &data),
        }
    })
}

fn ablate_as<T: Scalar>(d: &mut RunDir, cfg: &RunConfig, data: &DataDir) -> Result<()> {
    let exp = Experiment {
        train: &data.train,
        test: &data.test,
        pairs: &data.pairs,
        encoders: &cfg.encoders,
        objective: cfg.loss,
        training: cfg.training,
    };
    let ev = &cfg.evaluation;
    let mut runs = Vec::new();
    for &v in &ev.variants {
        for &seed in &ev.seeds {
            let (_, mut run) = run_variant::<T>(&exp, v, seed)?;
            run.report.config_hash = Some(cfg.hash());
            d.log(
                "run",
                json!({
                    "variant": run.variant,
                    "seed": seed,
                    "top1_accuracy": run.report.top1_accuracy,
                    "sister_pair_accuracy": run.report.sister_pair_accuracy,
                }),
            )?;
            eprintln!(
                "{:16} seed {seed}: top-1 {:.3}, sister {:.3}",
                run.variant,
                run.report.top1_accuracy,
                run.report.sister_pair_accuracy.unwrap_or(f64::NAN)
            );
            runs.push(run);
        }
    }
    let report = AblationReport::from_runs(&ev.variants, &ev.seeds, runs);
    let mut reports = String::new();
    for r in &report.runs {
        reports += &serde_json::to_string(&json!({ "variant": r.variant, "report": r.report }))?;
        reports.push('\n');
    }
    d.write("reports.jsonl", reports)?;
    d.write_json("ablation.json", &report)?;
    for s in &report.summary {
        d.log("summary", serde_json::to_value(s)?)?;
    }
    Ok(())
}

pub fn heatmap(root: &Path, a: HeatmapArgs) -> Result<PathBuf> {
    let data = DataDir::load(&a.data)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = resolve(&a.common, None)?;
    cfg.encoders = ck.encoders.clone();
    cfg.precision = ck.precision;
    cfg.seed = Some(ck.seed);
    if let Some(c) = a.class {
        cfg.evaluation.heatmap_class = c;
    }
    if let Some(day) = a.day {
        cfg.evaluation.day_of_year = day;
    }
    cfg.validate()?;
    let class = cfg.evaluation.heatmap_class;
    let image = data.class_mean_image(class)?;
    with_run_dir(&out_dir(&a.common, root, "heatmap"), |d| {
        record_run(
            d,
            "heatmap",
            &cfg,
            json!({ "data": data.identity(&a.data), "checkpoint": a.checkpoint }),
        )?;
        let ev = &cfg.evaluation;
        let h = match ck.precision {
            Precision::F64 => class_heatmap(
                &ck.to_classifier::<f64>()?,
                class,
                &image,
                ev.day_of_year,
                &ev.grid,
            )?,
            Precision::F32 => class_heatmap(
                &ck.to_classifier::<f32>()?,
                class,
                &image,
                ev.day_of_year,
                &ev.grid,
            )?,
        };
        h.write(d.dir(), "heatmap")?;
        if let Some(spec) = data.species.as_ref().and_then(|s| s.species.get(class)) {
            let (inside, outside) = h.range_means(spec.range_center, spec.range_radius);
            d.log(
                "range_contrast",
                json!({
                    "class": class,
                    "name": spec.name,
                    "in_range_mean": inside,
                    "out_of_range_mean": outside,
                    "ratio": inside / outside,
                }),
            )?;
        }
        Ok(())
    })
}

pub fn export_embeddings(root: &Path, a: ExportArgs) -> Result<PathBuf> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = resolve(&a.common, None)?;
    cfg.encoders = ck.encoders.clone();
    cfg.precision = ck.precision;
    cfg.seed = Some(ck.seed);
    if let Some(day) = a.day {
        cfg.evaluation.day_of_year = day;
    }
    cfg.validate()?;
    with_run_dir(&out_dir(&a.common, root, "embeddings"), |d| {
        record_run(
            d,
            "export-embeddings",
            &cfg,
            json!({ "checkpoint": a.checkpoint }),
        )?;
        let ev = &cfg.evaluation;
        let e = match ck.precision {
            Precision::F64 => {
                export_location_embeddings(&ck.to_model::<f64>()?, &ev.grid, ev.day_of_year)?
            }
            Precision::F32 => {
                export_location_embeddings(&ck.to_model::<f32>()?, &ev.grid, ev.day_of_year)?
            }
        };
        e.write_csv(&d.path("embeddings.csv"))?;
        d.write_json(
            "embeddings.json",
            &json!({
                "grid": e.grid,
                "day_of_year": e.day_of_year,
                "dim": cfg.encoders.shared_dim,
                "rows": e.rows.len(),
                "table_file": "embeddings.csv",
            }),
        )?;
        d.log("exported", json!({ "rows": e.rows.len() }))
    })
}
