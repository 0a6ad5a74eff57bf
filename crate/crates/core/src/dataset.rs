//! Streams to examples, split and normalizer, and the on-disk bundle.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write_with, read_json, write_json};
use crate::pipeline::{
    extract_examples, fit_normalizer, format_timestamp, parse_timestamp, pick_dates, plan_split,
    prepare_frame_with, NormalizationParams, RawStream, SplitConfig, SplitPlan, Timeline,
    TriExample, Window, WindowSpec, SYNC_INTERVAL_SECS,
};

pub const DATASET_FORMAT: &str = "mtt-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXAMPLES_FILE: &str = "examples.csv";

/// synchronize → fill → downsample → one unnormalized example per covered pick.
pub fn build_examples(
    streams: &[RawStream],
    interval: i64,
    spec: &WindowSpec,
) -> Result<Vec<TriExample>> {
    build_examples_with(streams, SYNC_INTERVAL_SECS, interval, spec)
}

/// [`build_examples`] with a custom synchronization grid.
pub fn build_examples_with(
    streams: &[RawStream],
    sync_interval: i64,
    interval: i64,
    spec: &WindowSpec,
) -> Result<Vec<TriExample>> {
    let frame = prepare_frame_with(streams, sync_interval, interval)?;
    let picks = pick_dates(&frame);
    extract_examples(&frame, &picks, spec)
}

/// Raw examples with their split and the normalizer fitted on training rows.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub raw: Vec<TriExample>,
    pub normalized: Vec<TriExample>,
    pub normalizer: NormalizationParams,
    pub plan: SplitPlan,
}

impl PreparedDataset {
    pub fn new(raw: Vec<TriExample>, split: &SplitConfig) -> Result<Self> {
        let plan = plan_split(&raw, split)?;
        let fit_on: Vec<TriExample> = plan
            .train_indices()
            .chain(plan.validation_indices())
            .map(|i| raw[i].clone())
            .collect();
        let normalizer = fit_normalizer(&fit_on)?;
        Self::with_normalizer(raw, plan, normalizer)
    }

    pub fn with_normalizer(
        raw: Vec<TriExample>,
        plan: SplitPlan,
        normalizer: NormalizationParams,
    ) -> Result<Self> {
        let normalized = raw
            .iter()
            .map(|e| normalizer.normalize_example(e))
            .collect::<Result<_>>()?;
        Ok(PreparedDataset {
            raw,
            normalized,
            normalizer,
            plan,
        })
    }

    pub fn normalized_refs(&self, idx: &[usize]) -> Vec<&TriExample> {
        idx.iter().map(|&i| &self.normalized[i]).collect()
    }

    pub fn raw_refs(&self, idx: &[usize]) -> Vec<&TriExample> {
        idx.iter().map(|&i| &self.raw[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub interval_s: i64,
    pub window: WindowSpec,
    pub example_count: usize,
    pub normalizer: NormalizationParams,
    pub split: SplitPlan,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e)
}

fn write_csv(
    path: &Path,
    rows: impl FnOnce(&mut csv::Writer<BufWriter<File>>) -> Result<()>,
) -> Result<()> {
    atomic_write_with(path, |tmp| {
        let file = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        rows(&mut w)?;
        let mut inner = w
            .into_inner()
            .map_err(|e| Error::format(tmp, e.to_string()))?;
        inner.flush().map_err(|e| Error::io(tmp, e))
    })
}

/// Writes `examples.csv`, one CSV per timeline and the manifest.
pub fn write_bundle(dir: &Path, data: &PreparedDataset, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(EXAMPLES_FILE);
    write_csv(&path, |w| {
        let err = csv_err(&path);
        w.write_record([
            "example_id",
            "row_id",
            "issue_date",
            "target_date",
            "target_yield_g",
        ])
        .map_err(&err)?;
        for ex in &data.raw {
            w.write_record([
                ex.id.clone(),
                ex.row_id.to_string(),
                ex.issue_date.to_string(),
                ex.target_date.to_string(),
                ex.target_yield.to_string(),
            ])
            .map_err(&err)?;
        }
        Ok(())
    })?;
    for t in Timeline::ALL {
        let path = dir.join(format!("{}.csv", t.name()));
        write_csv(&path, |w| {
            let err = csv_err(&path);
            let mut header = vec!["example_id".to_string(), "step".into(), "timestamp".into()];
            header.extend(t.features());
            w.write_record(&header).map_err(&err)?;
            let mut fields = Vec::with_capacity(header.len());
            for ex in &data.raw {
                let win = ex.window(t);
                for s in 0..win.steps {
                    fields.clear();
                    fields.push(ex.id.clone());
                    fields.push(s.to_string());
                    fields.push(format_timestamp(win.cell_start(s)));
                    fields.extend(win.row(s).iter().map(|v| v.to_string()));
                    w.write_record(&fields).map_err(&err)?;
                }
            }
            Ok(())
        })?;
    }
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

struct Header {
    id: String,
    row_id: u32,
    issue_date: NaiveDate,
    target_date: NaiveDate,
    target_yield: f64,
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(path, format!("record {line}: bad value {field:?}")))
}

/// Reads a bundle back; the normalized examples are recomputed from the raw values.
pub fn read_bundle(dir: &Path) -> Result<(PreparedDataset, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            format!("unsupported dataset format {:?}", manifest.format),
        ));
    }
    let path = dir.join(EXAMPLES_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let mut headers = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(&path))?;
        if rec.len() != 5 {
            return Err(Error::format(
                &path,
                format!("record {}: expected 5 fields", line + 1),
            ));
        }
        headers.push(Header {
            id: rec[0].to_string(),
            row_id: parse(&path, line + 1, &rec[1])?,
            issue_date: parse(&path, line + 1, &rec[2])?,
            target_date: parse(&path, line + 1, &rec[3])?,
            target_yield: parse(&path, line + 1, &rec[4])?,
        });
    }
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.id.as_str(), i))
        .collect();

    let mut windows: Vec<[Option<Window>; 3]> =
        headers.iter().map(|_| [None, None, None]).collect();
    for t in Timeline::ALL {
        let path = dir.join(format!("{}.csv", t.name()));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let width = t.features().len();
        let expected: Vec<String> = ["example_id", "step", "timestamp"]
            .iter()
            .map(|s| s.to_string())
            .chain(t.features())
            .collect();
        let got: Vec<String> = rdr
            .headers()
            .map_err(csv_err(&path))?
            .iter()
            .map(String::from)
            .collect();
        if got != expected {
            return Err(Error::format(
                &path,
                format!("header {got:?} does not match {expected:?}"),
            ));
        }
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err(&path))?;
            let at = |m: &str| Error::format(&path, format!("record {}: {m}", line + 1));
            let &i = index.get(&rec[0]).ok_or_else(|| at("unknown example id"))?;
            let step: usize = parse(&path, line + 1, &rec[1])?;
            let ts = parse_timestamp(&rec[2]).ok_or_else(|| at("bad timestamp"))?;
            let win = windows[i][t as usize].get_or_insert_with(|| Window {
                start: ts,
                interval: manifest.interval_s,
                steps: 0,
                width,
                values: Vec::new(),
            });
            if step != win.steps || ts != win.cell_start(step) {
                return Err(at("steps out of order"));
            }
            for f in rec.iter().skip(3) {
                win.values.push(parse(&path, line + 1, f)?);
            }
            win.steps += 1;
        }
    }

    let raw = headers
        .into_iter()
        .zip(windows)
        .map(|(h, [past, present, prem])| {
            let missing = || Error::Data(format!("example {} lacks a window", h.id));
            Ok(TriExample {
                past: past.ok_or_else(missing)?,
                present: present.ok_or_else(missing)?,
                premonition: prem.ok_or_else(missing)?,
                id: h.id,
                row_id: h.row_id,
                issue_date: h.issue_date,
                target_date: h.target_date,
                target_yield: h.target_yield,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if raw.len() != manifest.example_count {
        return Err(Error::Data(format!(
            "manifest lists {} examples, bundle holds {}",
            manifest.example_count,
            raw.len()
        )));
    }
    let data =
        PreparedDataset::with_normalizer(raw, manifest.split.clone(), manifest.normalizer.clone())?;
    Ok((data, manifest))
}
