use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IRRIGATION_FEATURES: [&str; 5] = [
    "nutrient_ec",
    "moisture_pct",
    "soil_temp_c",
    "input_l",
    "runoff_l",
];

pub const ENVIRONMENT_FEATURES: [&str; 6] = [
    "temperature_c",
    "humidity_pct",
    "wind_dir_deg",
    "wind_speed_ms",
    "solar_wm2",
    "precip_mm",
];

pub const YIELD_FEATURES: [&str; 2] = ["weight_g", "quality_class"];

pub const YIELD_WEIGHT: &str = "weight_g";

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Irrigation,
    Environment,
    Yield,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Irrigation => "irrigation",
            Source::Environment => "environment",
            Source::Yield => "yield",
        }
    }

    pub fn features(self) -> &'static [&'static str] {
        match self {
            Source::Irrigation => &IRRIGATION_FEATURES,
            Source::Environment => &ENVIRONMENT_FEATURES,
            Source::Yield => &YIELD_FEATURES,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Source::Irrigation => "irrigation.csv",
            Source::Environment => "environment.csv",
            Source::Yield => "yields.csv",
        }
    }

    fn has_rows(self) -> bool {
        !matches!(self, Source::Environment)
    }

    fn header(self) -> Vec<&'static str> {
        let mut h = vec![match self {
            Source::Yield => "date",
            _ => "timestamp",
        }];
        if self.has_rows() {
            h.push("row_id");
        }
        h.extend_from_slice(self.features());
        h
    }
}

/// Samples from one data source, stored column-wise.
///
/// `values` is row-major `len × features.len()`; a missing reading is NaN.
/// Timestamps are Unix seconds (UTC).
#[derive(Clone, Debug, PartialEq)]
pub struct RawStream {
    pub source: Source,
    pub features: Vec<String>,
    pub timestamps: Vec<i64>,
    pub row_ids: Vec<Option<u32>>,
    pub values: Vec<f64>,
}

impl RawStream {
    pub fn new(source: Source) -> Self {
        RawStream {
            source,
            features: source.features().iter().map(|s| s.to_string()).collect(),
            timestamps: Vec::new(),
            row_ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn push(&mut self, timestamp: i64, row_id: Option<u32>, values: &[f64]) {
        debug_assert_eq!(values.len(), self.features.len());
        self.timestamps.push(timestamp);
        self.row_ids.push(row_id);
        self.values.extend_from_slice(values);
    }

    pub fn record(&self, i: usize) -> (i64, Option<u32>, &[f64]) {
        let w = self.features.len();
        (
            self.timestamps[i],
            self.row_ids[i],
            &self.values[i * w..(i + 1) * w],
        )
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .expect("timestamp in range")
        .format(TIMESTAMP_FORMAT)
        .to_string()
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT) {
        return Some(dt.and_utc().timestamp());
    }
    DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

pub fn date_of(ts: i64) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .expect("timestamp in range")
        .date_naive()
}

pub fn midnight(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0)
        .expect("valid midnight")
        .and_utc()
        .timestamp()
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Writes a stream in its CSV schema.
pub fn write_stream_csv(stream: &RawStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::format(path, e);
    wtr.write_record(stream.source.header()).map_err(csv_err)?;
    let mut fields: Vec<String> = Vec::with_capacity(stream.features.len() + 2);
    for i in 0..stream.len() {
        let (ts, row, vals) = stream.record(i);
        fields.clear();
        fields.push(match stream.source {
            Source::Yield => date_of(ts).format(DATE_FORMAT).to_string(),
            _ => format_timestamp(ts),
        });
        if stream.source.has_rows() {
            fields.push(row.map(|r| r.to_string()).unwrap_or_default());
        }
        fields.extend(vals.iter().map(|v| format_value(*v)));
        wtr.write_record(&fields).map_err(csv_err)?;
    }
    let mut inner = wtr
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Reads a stream, requiring the exact header of its schema.
pub fn read_stream_csv(source: Source, path: &Path) -> Result<RawStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| Error::format(path, e))?.clone();
    let expected = source.header();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(
            path,
            format!(
                "header {:?} does not match schema {:?}",
                header.iter().collect::<Vec<_>>(),
                expected
            ),
        ));
    }
    let offset = if source.has_rows() { 2 } else { 1 };
    let mut stream = RawStream::new(source);
    let mut vals = vec![0.0; stream.features.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let at = |msg: String| Error::format(path, format!("record {}: {msg}", line + 1));
        let ts = match source {
            Source::Yield => NaiveDate::parse_from_str(&rec[0], DATE_FORMAT)
                .map(midnight)
                .map_err(|e| at(format!("bad date {:?}: {e}", &rec[0])))?,
            _ => parse_timestamp(&rec[0])
                .ok_or_else(|| at(format!("bad timestamp {:?}", &rec[0])))?,
        };
        let row = if source.has_rows() {
            let r: u32 = rec[1]
                .parse()
                .map_err(|_| at(format!("bad row_id {:?}", &rec[1])))?;
            Some(r)
        } else {
            None
        };
        for (j, v) in vals.iter_mut().enumerate() {
            let field = &rec[offset + j];
            *v = if field.is_empty() {
                f64::NAN
            } else {
                field
                    .parse()
                    .map_err(|_| at(format!("bad value {field:?}")))?
            };
        }
        stream.push(ts, row, &vals);
    }
    Ok(stream)
}

/// Loads the three CSVs of a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Vec<RawStream>> {
    [Source::Irrigation, Source::Environment, Source::Yield]
        .into_iter()
        .map(|s| read_stream_csv(s, &dir.join(s.file_name())))
        .collect()
}
