use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::frame::{CellState, Column, SynchronizedFrame};
use super::stream::{
    date_of, midnight, Source, ENVIRONMENT_FEATURES, IRRIGATION_FEATURES, YIELD_WEIGHT,
};
use crate::error::{Error, Result};

/// Channels of the past and present timelines.
pub fn history_features() -> Vec<String> {
    ENVIRONMENT_FEATURES
        .iter()
        .chain(IRRIGATION_FEATURES.iter())
        .map(|s| s.to_string())
        .chain(["yield_g".to_string(), "pick".to_string()])
        .collect()
}

/// Channels of the premonition timeline (weather only).
pub fn premonition_features() -> Vec<String> {
    ENVIRONMENT_FEATURES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timeline {
    Past,
    Present,
    Premonition,
}

impl Timeline {
    pub const ALL: [Timeline; 3] = [Timeline::Past, Timeline::Present, Timeline::Premonition];

    pub fn name(self) -> &'static str {
        match self {
            Timeline::Past => "past",
            Timeline::Present => "present",
            Timeline::Premonition => "premonition",
        }
    }

    pub fn features(self) -> Vec<String> {
        match self {
            Timeline::Premonition => premonition_features(),
            _ => history_features(),
        }
    }
}

/// A `steps × width` block of grid cells starting at `start` (Unix seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub interval: i64,
    pub steps: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Window {
    pub fn row(&self, step: usize) -> &[f64] {
        &self.values[step * self.width..(step + 1) * self.width]
    }

    pub fn cell_start(&self, step: usize) -> i64 {
        self.start + step as i64 * self.interval
    }

    /// Start of the last cell.
    pub fn last_cell_start(&self) -> i64 {
        self.cell_start(self.steps - 1)
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> i64 {
        self.cell_start(self.steps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriExample {
    pub id: String,
    pub row_id: u32,
    pub issue_date: NaiveDate,
    pub target_date: NaiveDate,
    pub past: Window,
    pub present: Window,
    pub premonition: Window,
    pub target_yield: f64,
}

impl TriExample {
    pub fn window(&self, t: Timeline) -> &Window {
        match t {
            Timeline::Past => &self.past,
            Timeline::Present => &self.present,
            Timeline::Premonition => &self.premonition,
        }
    }

    pub fn window_mut(&mut self, t: Timeline) -> &mut Window {
        match t {
            Timeline::Past => &mut self.past,
            Timeline::Present => &mut self.present,
            Timeline::Premonition => &mut self.premonition,
        }
    }
}

pub fn example_id(row_id: u32, target_date: NaiveDate) -> String {
    format!("r{row_id:02}-{target_date}")
}

/// Row encoded in an [`example_id`].
pub fn example_row(id: &str) -> Option<u32> {
    id.strip_prefix('r')?.split('-').next()?.parse().ok()
}

/// Window geometry in days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub present_days: u32,
    pub premonition_days: u32,
    /// Offset to the prior-year window; 364 keeps the weekday phase.
    pub prior_offset_days: u32,
    /// Largest tolerated share of filled (non-observed) sensor cells in a window.
    pub max_filled_fraction: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            present_days: 84,
            premonition_days: 21,
            prior_offset_days: 364,
            max_filled_fraction: 0.1,
        }
    }
}

impl WindowSpec {
    pub fn steps_per_day(interval: i64) -> Result<usize> {
        if interval <= 0 || 86_400 % interval != 0 {
            return Err(Error::Config(format!(
                "interval {interval}s does not divide a day"
            )));
        }
        Ok((86_400 / interval) as usize)
    }

    pub fn present_steps(&self, interval: i64) -> Result<usize> {
        Ok(self.present_days as usize * Self::steps_per_day(interval)?)
    }

    pub fn premonition_steps(&self, interval: i64) -> Result<usize> {
        Ok(self.premonition_days as usize * Self::steps_per_day(interval)?)
    }

    pub fn past_steps(&self, interval: i64) -> Result<usize> {
        Ok(self.present_steps(interval)? + self.premonition_steps(interval)?)
    }

    /// Inclusive day ranges `(first, last)` for past, present and premonition.
    pub fn day_ranges(&self, target: NaiveDate) -> [(NaiveDate, NaiveDate); 3] {
        let issue = target - Days::new(self.premonition_days as u64);
        let present = (issue - Days::new(self.present_days as u64 - 1), issue);
        let premonition = (issue + Days::new(1), target);
        let offset = Days::new(self.prior_offset_days as u64);
        let past = (present.0 - offset, target - offset);
        [past, present, premonition]
    }
}

/// Per-row pick dates read from the observed yield cells.
pub fn pick_dates(frame: &SynchronizedFrame) -> BTreeMap<u32, Vec<NaiveDate>> {
    let mut out = BTreeMap::new();
    for row in frame.row_ids(Source::Yield) {
        let Some(col) = frame.column(Source::Yield, YIELD_WEIGHT, Some(row)) else {
            continue;
        };
        let mut dates: Vec<NaiveDate> = col
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == CellState::Observed)
            .map(|(i, _)| date_of(frame.timestamp(i)))
            .collect();
        dates.dedup();
        out.insert(row, dates);
    }
    out
}

struct RowColumns<'a> {
    env: Vec<&'a Column>,
    irrigation: Vec<&'a Column>,
    yields: Option<&'a Column>,
}

impl<'a> RowColumns<'a> {
    fn lookup(frame: &'a SynchronizedFrame, row: u32) -> std::result::Result<Self, String> {
        let env = ENVIRONMENT_FEATURES
            .iter()
            .map(|f| {
                frame
                    .column(Source::Environment, f, None)
                    .ok_or_else(|| format!("missing environment column {f}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let irrigation = IRRIGATION_FEATURES
            .iter()
            .map(|f| {
                frame
                    .column(Source::Irrigation, f, Some(row))
                    .ok_or_else(|| format!("missing irrigation column {f} for row {row}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(RowColumns {
            env,
            irrigation,
            yields: frame.column(Source::Yield, YIELD_WEIGHT, Some(row)),
        })
    }

    fn sensors(&self, with_irrigation: bool) -> impl Iterator<Item = &&'a Column> {
        self.env
            .iter()
            .chain(self.irrigation.iter().filter(move |_| with_irrigation))
    }
}

/// Builds one example per (row, pick date) whose three windows are covered.
///
/// Picks lacking coverage (off the grid, or with too many filled sensor
/// cells) are skipped and logged.
pub fn extract_examples(
    frame: &SynchronizedFrame,
    picks: &BTreeMap<u32, Vec<NaiveDate>>,
    spec: &WindowSpec,
) -> Result<Vec<TriExample>> {
    let interval = frame.interval();
    let per_day = WindowSpec::steps_per_day(interval)?;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for (&row, dates) in picks {
        let cols = match RowColumns::lookup(frame, row) {
            Ok(c) => c,
            Err(reason) => {
                log::info!("row {row}: all picks skipped: {reason}");
                skipped += dates.len();
                continue;
            }
        };
        for &target in dates {
            match build_example(frame, &cols, row, target, spec, per_day) {
                Ok(ex) => out.push(ex),
                Err(reason) => {
                    log::debug!("skipping pick row {row} {target}: {reason}");
                    skipped += 1;
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyExtraction(format!(
            "all {skipped} candidate picks lacked window coverage"
        )));
    }
    log::info!("extracted {} examples, skipped {skipped} picks", out.len());
    Ok(out)
}

fn build_example(
    frame: &SynchronizedFrame,
    cols: &RowColumns<'_>,
    row: u32,
    target: NaiveDate,
    spec: &WindowSpec,
    per_day: usize,
) -> std::result::Result<TriExample, String> {
    let [past_days, present_days, prem_days] = spec.day_ranges(target);
    let issue = present_days.1;

    let span = |(first, last): (NaiveDate, NaiveDate), label: &str| {
        let start = frame
            .index_of(midnight(first))
            .ok_or_else(|| format!("{label} window starts before the data ({first})"))?;
        let days = (last - first).num_days() as usize + 1;
        let steps = days * per_day;
        if start + steps > frame.len() {
            return Err(format!("{label} window ends after the data ({last})"));
        }
        Ok((start, steps))
    };
    let past = span(past_days, "past")?;
    let present = span(present_days, "present")?;
    let prem = span(prem_days, "premonition")?;

    for ((start, steps), label, irrigation) in [
        (past, "past", true),
        (present, "present", true),
        (prem, "premonition", false),
    ] {
        let (mut filled, mut total) = (0usize, 0usize);
        for col in cols.sensors(irrigation) {
            for s in &col.states[start..start + steps] {
                match s {
                    CellState::Observed => {}
                    CellState::Missing => return Err(format!("{label} window has unfilled cells")),
                    _ => filled += 1,
                }
                total += 1;
            }
        }
        let frac = filled as f64 / total as f64;
        if frac > spec.max_filled_fraction {
            return Err(format!("{label} window is {:.0}% filled", 100.0 * frac));
        }
    }

    let target_yield = day_yield(frame, cols.yields, target)
        .ok_or_else(|| format!("no observed yield on {target}"))?;

    let history = |(start, steps): (usize, usize)| {
        let width = ENVIRONMENT_FEATURES.len() + IRRIGATION_FEATURES.len() + 2;
        let mut values = Vec::with_capacity(steps * width);
        for i in start..start + steps {
            values.extend(cols.sensors(true).map(|c| c.values[i]));
            let (w, picked) = match cols.yields {
                Some(y) if y.states[i] == CellState::Observed => (y.values[i], 1.0),
                _ => (0.0, 0.0),
            };
            values.push(w);
            values.push(picked);
        }
        Window {
            start: frame.timestamp(start),
            interval: frame.interval(),
            steps,
            width,
            values,
        }
    };
    let weather = |(start, steps): (usize, usize)| {
        let width = ENVIRONMENT_FEATURES.len();
        let mut values = Vec::with_capacity(steps * width);
        for i in start..start + steps {
            values.extend(cols.env.iter().map(|c| c.values[i]));
        }
        Window {
            start: frame.timestamp(start),
            interval: frame.interval(),
            steps,
            width,
            values,
        }
    };

    Ok(TriExample {
        id: example_id(row, target),
        row_id: row,
        issue_date: issue,
        target_date: target,
        past: history(past),
        present: history(present),
        premonition: weather(prem),
        target_yield,
    })
}

/// Sum of observed yield cells whose start falls on `date`.
fn day_yield(frame: &SynchronizedFrame, col: Option<&Column>, date: NaiveDate) -> Option<f64> {
    let col = col?;
    let t0 = midnight(date);
    let first = frame
        .index_of(t0)
        .or_else(|| (t0 < frame.start()).then_some(0))?;
    let mut sum = None;
    let mut i = first;
    while i < frame.len() && frame.timestamp(i) < t0 + 86_400 {
        if col.states[i] == CellState::Observed {
            *sum.get_or_insert(0.0) += col.values[i];
        }
        i += 1;
    }
    sum
}
