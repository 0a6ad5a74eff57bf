use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mtt_core::dataset::{
    build_examples_with, read_bundle, write_bundle, DatasetManifest, PreparedDataset,
    DATASET_FORMAT, MANIFEST_FILE,
};
use mtt_core::ensemble::{
    audit_isolation, build_row_subsets, predict_ensemble, train_ensemble, EnsembleManifest,
    MemberEntry, ENSEMBLE_FORMAT,
};
use mtt_core::io::{atomic_write, read_json, write_json};
use mtt_core::model::{load_checkpoint, save_checkpoint, ModelConfig, MttParams};
use mtt_core::pipeline::{read_dataset, NormalizationParams, Source, TriExample};
use mtt_core::suite::{gradient_suite, GRADIENT_TOLERANCE};
use mtt_core::synth::{generate, write_dataset};
use mtt_core::train::{
    baseline_rows, fit, forecast_rows, forecasts_csv, metrics_csv, report, EvaluationReport, Exec,
    FitData, InitSpec,
};

use crate::config::RunConfig;

/// Exit code 1: bad usage, configuration or input files.
/// Exit code 2: the work itself failed.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<mtt_core::Error> for Failure {
    fn from(e: mtt_core::Error) -> Self {
        use mtt_core::Error as E;
        match &e {
            E::Config(_)
            | E::Data(_)
            | E::Format { .. }
            | E::Duplicate { .. }
            | E::UnfillableColumn(_)
            | E::EmptyExtraction(_)
            | E::TooFewBatches(_) => Failure::Validation(e.into()),
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Failure::Validation(e.into())
            }
            _ => Failure::Runtime(e.into()),
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(anyhow!("missing input file {}", path.display())))
    }
}

/// Provenance written next to every CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

fn write_csv_artifact(path: &Path, text: &str, meta: &ArtifactMeta) -> Outcome {
    atomic_write(path, text.as_bytes())?;
    write_json(&sidecar_path(path), meta)?;
    Ok(())
}

fn exec() -> Exec {
    Exec::default()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Outcome {
    let data = generate(&cfg.synth)?;
    write_dataset(&data, out)?;
    write_json(
        &out.join("run.json"),
        &ArtifactMeta {
            command: "synth".into(),
            config_hash: cfg.hash(),
            seed: cfg.synth.seed,
        },
    )?;
    let records: usize = data.streams.iter().map(|s| s.len()).sum();
    log::info!("wrote {} records to {}", records, out.display());
    Ok(())
}

pub fn prepare(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Outcome {
    for s in [Source::Irrigation, Source::Environment, Source::Yield] {
        require_file(&data_dir.join(s.file_name()))?;
    }
    let streams = read_dataset(data_dir)?;
    let interval = cfg.model_secs();
    let raw = build_examples_with(&streams, cfg.sync_secs(), interval, &cfg.data.window)?;
    log::info!("extracted {} examples at {}s", raw.len(), interval);
    let data = PreparedDataset::new(raw, &cfg.split)?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        config_hash: cfg.hash(),
        seed: cfg.split.seed,
        interval_s: interval,
        window: cfg.data.window.clone(),
        example_count: data.raw.len(),
        normalizer: data.normalizer.clone(),
        split: data.plan.clone(),
    };
    write_bundle(out, &data, &manifest)?;
    log::info!(
        "bundle {}: {} train, {} validation, {} test",
        out.display(),
        data.plan.train_indices().count(),
        data.plan.validation_indices().count(),
        data.plan.test.len()
    );
    Ok(())
}

fn load_bundle(dir: &Path) -> Result<(PreparedDataset, DatasetManifest), Failure> {
    require_file(&dir.join(MANIFEST_FILE))?;
    Ok(read_bundle(dir)?)
}

const MODEL_FILE: &str = "model.json";

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MODEL_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn train(cfg: &RunConfig, bundle: &Path, out: &Path) -> Outcome {
    let (data, dm) = load_bundle(bundle)?;
    let first = data
        .normalized
        .first()
        .ok_or_else(|| invalid(anyhow!("bundle holds no examples")))?;
    let config = ModelConfig::for_example(cfg.model.clone(), first)?;
    let params = MttParams::new(
        config,
        InitSpec {
            seed: cfg.train.seed,
            ..Default::default()
        },
    )?;
    log::info!("training {} parameters", params.store.numel());
    let fd = FitData::from_plan(&data.normalized, &data.plan);
    let outcome = fit(params, &fd, &cfg.train, exec())?;
    log::info!(
        "best epoch {} of {} (val mse {:.6})",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_mse
    );
    let meta = ArtifactMeta {
        command: "train".into(),
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
    };
    let mut md = BTreeMap::new();
    md.insert("config_hash".into(), json!(meta.config_hash));
    md.insert("seed".into(), json!(meta.seed));
    md.insert("dataset_config_hash".into(), json!(dm.config_hash));
    md.insert("interval_s".into(), json!(dm.interval_s));
    md.insert("best_epoch".into(), json!(outcome.best_epoch));
    md.insert("best_val_mse".into(), json!(outcome.best_val_mse));
    md.insert(
        "normalizer".into(),
        serde_json::to_value(&data.normalizer).map_err(runtime)?,
    );
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(runtime)?;
    save_checkpoint(&outcome.params, &out.join(MODEL_FILE), md)?;
    write_csv_artifact(
        &out.join("metrics.csv"),
        &metrics_csv(&outcome.history),
        &meta,
    )
}

struct LoadedModel {
    params: MttParams,
    normalizer: NormalizationParams,
    meta: ArtifactMeta,
}

fn metadata_field<T: serde::de::DeserializeOwned>(
    md: &BTreeMap<String, Value>,
    key: &str,
    path: &Path,
) -> Result<T, Failure> {
    let v = md.get(key).ok_or_else(|| {
        invalid(anyhow!(
            "{}: checkpoint metadata lacks {key}",
            path.display()
        ))
    })?;
    serde_json::from_value(v.clone())
        .map_err(|e| invalid(anyhow!("{}: bad {key} in metadata: {e}", path.display())))
}

fn load_model(path: &Path, command: &str) -> Result<LoadedModel, Failure> {
    let path = checkpoint_path(path);
    require_file(&path)?;
    let (params, manifest) = load_checkpoint(&path)?;
    let md = &manifest.metadata;
    Ok(LoadedModel {
        normalizer: metadata_field(md, "normalizer", &path)?,
        meta: ArtifactMeta {
            command: command.into(),
            config_hash: metadata_field(md, "config_hash", &path)?,
            seed: metadata_field(md, "seed", &path)?,
        },
        params,
    })
}

/// Which examples a prediction command covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    Test,
    All,
}

fn subset_indices(data: &PreparedDataset, subset: Subset) -> Vec<usize> {
    match subset {
        Subset::Test => data.plan.test.clone(),
        Subset::All => (0..data.raw.len()).collect(),
    }
}

pub fn predict(bundle: &Path, model: &Path, out: &Path, subset: Subset) -> Outcome {
    let (data, _) = load_bundle(bundle)?;
    let m = load_model(model, "predict")?;
    let idx = subset_indices(&data, subset);
    let examples = normalize_with(&data.raw_refs(&idx), &m.normalizer)?;
    let refs: Vec<&TriExample> = examples.iter().collect();
    let rows = forecast_rows(&m.params, &refs, &m.normalizer, exec())?;
    write_csv_artifact(out, &forecasts_csv(&rows), &m.meta)?;
    log::info!("wrote {} forecasts to {}", rows.len(), out.display());
    Ok(())
}

fn normalize_with(
    raw: &[&TriExample],
    n: &NormalizationParams,
) -> Result<Vec<TriExample>, Failure> {
    Ok(raw
        .iter()
        .map(|e| n.normalize_example(e))
        .collect::<mtt_core::Result<_>>()?)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportSummary {
    pub n: usize,
    pub rmse_grams: f64,
    pub mean_truth_g: f64,
    pub pct_of_mean: Option<f64>,
    pub pct_of_range: Option<f64>,
}

impl From<&EvaluationReport> for ReportSummary {
    fn from(r: &EvaluationReport) -> Self {
        ReportSummary {
            n: r.n,
            rmse_grams: r.rmse_grams,
            mean_truth_g: r.mean_truth_g,
            pct_of_mean: r.pct_of_mean,
            pct_of_range: r.pct_of_range,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationDocument {
    pub config_hash: String,
    pub seed: u64,
    pub model: ReportSummary,
    pub prior_year_baseline: ReportSummary,
    /// `1 − model/baseline` on pct_of_mean.
    pub relative_improvement: Option<f64>,
}

pub fn evaluate(bundle: &Path, model: &Path, out: &Path) -> Outcome {
    let (data, _) = load_bundle(bundle)?;
    let m = load_model(model, "evaluate")?;
    let raw = data.raw_refs(&data.plan.test);
    let examples = normalize_with(&raw, &m.normalizer)?;
    let refs: Vec<&TriExample> = examples.iter().collect();
    let rep = report(forecast_rows(&m.params, &refs, &m.normalizer, exec())?)?;
    let base = report(baseline_rows(&raw))?;
    let doc = EvaluationDocument {
        config_hash: m.meta.config_hash,
        seed: m.meta.seed,
        relative_improvement: rep
            .pct_of_mean
            .zip(base.pct_of_mean)
            .filter(|(_, b)| *b > 0.0)
            .map(|(a, b)| 1.0 - a / b),
        model: (&rep).into(),
        prior_year_baseline: (&base).into(),
    };
    log::info!(
        "rmse {:.2} g ({:.2}% of mean), baseline {:.2} g",
        rep.rmse_grams,
        rep.pct_of_mean.unwrap_or(f64::NAN),
        base.rmse_grams
    );
    write_json(out, &doc)?;
    Ok(())
}

const ENSEMBLE_FILE: &str = "ensemble.json";

pub fn ensemble_train(cfg: &RunConfig, bundle: &Path, out: &Path) -> Outcome {
    if !cfg.ensemble.enabled {
        return Err(invalid(anyhow!(
            "ensemble training is disabled in the config"
        )));
    }
    let (data, _) = load_bundle(bundle)?;
    let spec = build_row_subsets(&cfg.split.train_rows, cfg.ensemble.seed)?;
    let members = train_ensemble(&spec, &data.raw, &cfg.model, &cfg.split, &cfg.train, exec())?;
    let hash = cfg.hash();
    let mut entries = Vec::new();
    for m in &members {
        let name = format!("member-{}", m.index + 1);
        let mut md = BTreeMap::new();
        md.insert("config_hash".into(), json!(hash));
        md.insert("seed".into(), json!(m.seed));
        md.insert("rows".into(), json!(m.rows));
        md.insert("best_epoch".into(), json!(m.best_epoch));
        md.insert(
            "normalizer".into(),
            serde_json::to_value(&m.normalizer).map_err(runtime)?,
        );
        save_checkpoint(&m.params, &out.join(format!("{name}.json")), md)?;
        write_csv_artifact(
            &out.join(format!("{name}-metrics.csv")),
            &metrics_csv(&m.history),
            &ArtifactMeta {
                command: "ensemble-train".into(),
                config_hash: hash.clone(),
                seed: m.seed,
            },
        )?;
        entries.push(MemberEntry {
            index: m.index,
            rows: m.rows.clone(),
            seed: m.seed,
            checkpoint: format!("{name}.json"),
            normalizer: m.normalizer.clone(),
            best_epoch: m.best_epoch,
            seen_digest: m.seen_digest.clone(),
            seen_ids: m.seen_ids.clone(),
        });
    }
    write_json(
        &out.join(ENSEMBLE_FILE),
        &EnsembleManifest {
            format: ENSEMBLE_FORMAT.into(),
            config_hash: hash,
            seed: cfg.ensemble.seed,
            members: entries,
        },
    )?;
    log::info!("wrote {} members to {}", members.len(), out.display());
    Ok(())
}

pub fn ensemble_predict(bundle: &Path, ensemble: &Path, out: &Path, subset: Subset) -> Outcome {
    let (data, _) = load_bundle(bundle)?;
    let path = if ensemble.is_dir() {
        ensemble.join(ENSEMBLE_FILE)
    } else {
        ensemble.to_path_buf()
    };
    require_file(&path)?;
    let manifest: EnsembleManifest = read_json(&path)?;
    if manifest.format != ENSEMBLE_FORMAT {
        return Err(invalid(anyhow!(
            "{}: unsupported ensemble format {:?}",
            path.display(),
            manifest.format
        )));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut members = Vec::new();
    for e in &manifest.members {
        audit_isolation(&e.rows, &e.seen_ids, &e.seen_digest)
            .map_err(|err| runtime(anyhow!("member {}: {err}", e.index + 1)))?;
        let (params, _) = load_checkpoint(&dir.join(&e.checkpoint))?;
        members.push((params, e.normalizer.clone()));
    }
    let refs: Vec<(&MttParams, &NormalizationParams)> =
        members.iter().map(|(p, n)| (p, n)).collect();

    let mut idx = subset_indices(&data, subset);
    idx.sort_by(|&a, &b| {
        let (x, y) = (&data.raw[a], &data.raw[b]);
        (x.target_date, x.row_id, &x.id).cmp(&(y.target_date, y.row_id, &y.id))
    });
    let preds = exec().map(&idx, |&i| predict_ensemble(&refs, &data.raw[i]))?;
    let mut text = String::from(
        "example_id,row_id,target_date,member_1_g,member_2_g,member_3_g,average_g,median_g,spread_g,truth_g\n",
    );
    for (&i, p) in idx.iter().zip(&preds) {
        let ex = &data.raw[i];
        let [a, b, c] = p.member_preds;
        writeln!(
            text,
            "{},{},{},{a:.6},{b:.6},{c:.6},{:.6},{:.6},{:.6},{:.6}",
            ex.id, ex.row_id, ex.target_date, p.average, p.median, p.spread, ex.target_yield
        )
        .expect("string write");
    }
    write_csv_artifact(
        out,
        &text,
        &ArtifactMeta {
            command: "ensemble-predict".into(),
            config_hash: manifest.config_hash,
            seed: manifest.seed,
        },
    )?;
    log::info!(
        "wrote {} ensemble forecasts to {}",
        idx.len(),
        out.display()
    );
    Ok(())
}

pub fn gradcheck(seed: u64, out: Option<&Path>) -> Outcome {
    let results = gradient_suite(seed).map_err(runtime)?;
    let mut text = String::from("check,max_rel_error,passed\n");
    for r in &results {
        writeln!(text, "\"{}\",{:.3e},{}", r.name, r.max_rel_error, r.passed)
            .expect("string write");
    }
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!(
            "{:<width$}  {:>10.3e}  {}",
            r.name,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = out {
        write_csv_artifact(
            path,
            &text,
            &ArtifactMeta {
                command: "gradcheck".into(),
                config_hash: String::new(),
                seed,
            },
        )?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(runtime(anyhow!(
            "{failed} of {} gradient checks exceed {GRADIENT_TOLERANCE:e}",
            results.len()
        )));
    }
    println!("all {} checks below {GRADIENT_TOLERANCE:e}", results.len());
    Ok(())
}
