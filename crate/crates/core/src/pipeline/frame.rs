use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stream::{RawStream, Source, YIELD_WEIGHT};
use crate::error::{Error, Result};

pub const SYNC_INTERVAL_SECS: i64 = 15 * 60;
pub const MODEL_INTERVAL_SECS: i64 = 4 * 3600;
const DAY_SECS: i64 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Observed,
    Missing,
    /// Carried forward from the last observation.
    Filled,
    /// Leading gap copied back from the first observation.
    Backfilled,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnKey {
    pub source: Source,
    pub feature: String,
    pub row_id: Option<u32>,
}

impl std::fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.row_id {
            Some(r) => write!(f, "{}.{}[row {r}]", self.source.name(), self.feature),
            None => write!(f, "{}.{}", self.source.name(), self.feature),
        }
    }
}

/// One feature series on the grid; `values[i]` is NaN when `states[i]` is Missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub key: ColumnKey,
    pub values: Vec<f64>,
    pub states: Vec<CellState>,
}

/// Regular time grid holding every source's features, one column per
/// (source, feature, row).
#[derive(Clone, Debug, PartialEq)]
pub struct SynchronizedFrame {
    start: i64,
    interval: i64,
    len: usize,
    columns: Vec<Column>,
}

impl SynchronizedFrame {
    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn interval(&self) -> i64 {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start + i as i64 * self.interval
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, source: Source, feature: &str, row_id: Option<u32>) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.key.source == source && c.key.feature == feature && c.key.row_id == row_id)
    }

    /// Row ids present for a source, ascending.
    pub fn row_ids(&self, source: Source) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .columns
            .iter()
            .filter(|c| c.key.source == source)
            .filter_map(|c| c.key.row_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Grid index of the cell starting at `ts`, if on the grid.
    pub fn index_of(&self, ts: i64) -> Option<usize> {
        let off = ts - self.start;
        if off < 0 || off % self.interval != 0 {
            return None;
        }
        let i = (off / self.interval) as usize;
        (i < self.len).then_some(i)
    }
}

fn is_additive(source: Source, feature: &str) -> bool {
    source == Source::Yield && feature == YIELD_WEIGHT
}

/// Resamples all streams onto a 15-minute grid.
///
/// The grid starts at UTC midnight of the earliest sample and runs to the
/// latest one. Sensor readings are averaged within a cell, yield weights are
/// summed; cells with no sample stay Missing.
pub fn synchronize(streams: &[RawStream]) -> Result<SynchronizedFrame> {
    synchronize_at(streams, SYNC_INTERVAL_SECS)
}

/// [`synchronize`] onto a grid of `interval` seconds.
pub fn synchronize_at(streams: &[RawStream], interval: i64) -> Result<SynchronizedFrame> {
    if interval <= 0 || 86_400 % interval != 0 {
        return Err(Error::Config(format!(
            "sync interval {interval}s must divide one day"
        )));
    }
    if streams.iter().all(|s| s.is_empty()) {
        return Err(Error::Data("no samples in any stream".into()));
    }
    if !streams
        .iter()
        .any(|s| s.source == Source::Environment && !s.is_empty())
    {
        return Err(Error::Data(
            "at least one environment stream is required".into(),
        ));
    }
    for s in streams {
        check_duplicates(s)?;
    }

    let min_ts = streams
        .iter()
        .flat_map(|s| s.timestamps.iter())
        .min()
        .copied()
        .expect("nonempty");
    let max_ts = streams
        .iter()
        .flat_map(|s| s.timestamps.iter())
        .max()
        .copied()
        .expect("nonempty");
    let start = min_ts.div_euclid(DAY_SECS) * DAY_SECS;
    let len = ((max_ts - start) / interval + 1) as usize;

    let mut slots: BTreeMap<ColumnKey, usize> = BTreeMap::new();
    let mut acc: Vec<(Vec<f64>, Vec<u32>)> = Vec::new();
    // Columns whose every reading was missing still get a (fully Missing) column.
    for s in streams {
        let mut rows: Vec<Option<u32>> = s.row_ids.clone();
        rows.sort_unstable();
        rows.dedup();
        for row in rows {
            for f in &s.features {
                let key = ColumnKey {
                    source: s.source,
                    feature: f.clone(),
                    row_id: row,
                };
                slots.entry(key).or_insert_with(|| {
                    acc.push((vec![0.0; len], vec![0; len]));
                    acc.len() - 1
                });
            }
        }
    }
    for s in streams {
        let w = s.features.len();
        let mut by_row: BTreeMap<Option<u32>, Vec<usize>> = BTreeMap::new();
        for i in 0..s.len() {
            let (ts, row, vals) = s.record(i);
            let cell = ((ts - start) / interval) as usize;
            let cols = by_row.entry(row).or_insert_with(|| {
                s.features
                    .iter()
                    .map(|f| {
                        slots[&ColumnKey {
                            source: s.source,
                            feature: f.clone(),
                            row_id: row,
                        }]
                    })
                    .collect()
            });
            for j in 0..w {
                let v = vals[j];
                if v.is_nan() {
                    continue;
                }
                let (sums, counts) = &mut acc[cols[j]];
                sums[cell] += v;
                counts[cell] += 1;
            }
        }
    }

    let mut acc: Vec<Option<(Vec<f64>, Vec<u32>)>> = acc.into_iter().map(Some).collect();
    let columns = slots
        .into_iter()
        .map(|(key, slot)| {
            let (sums, counts) = acc[slot].take().expect("each slot used once");
            let additive = is_additive(key.source, &key.feature);
            let mut values = Vec::with_capacity(len);
            let mut states = Vec::with_capacity(len);
            for (s, c) in sums.into_iter().zip(counts) {
                if c == 0 {
                    values.push(f64::NAN);
                    states.push(CellState::Missing);
                } else {
                    values.push(if additive { s } else { s / c as f64 });
                    states.push(CellState::Observed);
                }
            }
            Column {
                key,
                values,
                states,
            }
        })
        .collect();

    Ok(SynchronizedFrame {
        start,
        interval,
        len,
        columns,
    })
}

fn check_duplicates(s: &RawStream) -> Result<()> {
    let mut groups: BTreeMap<Option<u32>, Vec<i64>> = BTreeMap::new();
    for (ts, row) in s.timestamps.iter().zip(&s.row_ids) {
        groups.entry(*row).or_default().push(*ts);
    }
    for (row, mut ts) in groups {
        ts.sort_unstable();
        if let Some(w) = ts.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Duplicate {
                source_name: s.source.name(),
                row_id: row,
                timestamp: super::stream::format_timestamp(w[0]),
            });
        }
    }
    Ok(())
}

/// Fills missing sensor cells with the last known value.
///
/// Yield columns are left untouched: a missing pick cannot be inferred.
/// Cells before the first observation are back-filled from it and flagged
/// [`CellState::Backfilled`].
pub fn forward_fill(frame: &SynchronizedFrame) -> Result<SynchronizedFrame> {
    let mut out = frame.clone();
    for col in out.columns.iter_mut() {
        if col.key.source == Source::Yield {
            continue;
        }
        let first = col
            .states
            .iter()
            .position(|s| *s != CellState::Missing)
            .ok_or_else(|| Error::UnfillableColumn(col.key.to_string()))?;
        let seed = col.values[first];
        for i in 0..first {
            col.values[i] = seed;
            col.states[i] = CellState::Backfilled;
        }
        let mut last = seed;
        for i in first..col.values.len() {
            if col.states[i] == CellState::Missing {
                col.values[i] = last;
                col.states[i] = CellState::Filled;
            } else {
                last = col.values[i];
            }
        }
    }
    Ok(out)
}

/// Aggregates to a coarser grid: sensor means, yield sums.
pub fn downsample(frame: &SynchronizedFrame, interval: i64) -> Result<SynchronizedFrame> {
    if interval <= 0 || interval % frame.interval != 0 {
        return Err(Error::Config(format!(
            "downsample interval {interval}s is not a positive multiple of {}s",
            frame.interval
        )));
    }
    let k = (interval / frame.interval) as usize;
    let len = frame.len.div_ceil(k);
    let columns = frame
        .columns
        .iter()
        .map(|col| {
            let additive = is_additive(col.key.source, &col.key.feature);
            let mut values = Vec::with_capacity(len);
            let mut states = Vec::with_capacity(len);
            for b in 0..len {
                let range = b * k..((b + 1) * k).min(frame.len);
                let cells = col.values[range.clone()]
                    .iter()
                    .zip(&col.states[range])
                    .filter(|(_, s)| **s != CellState::Missing);
                let (mut sum, mut n) = (0.0, 0usize);
                let mut state = CellState::Missing;
                for (v, s) in cells {
                    sum += v;
                    n += 1;
                    state = merge_state(state, *s);
                }
                if n == 0 {
                    values.push(f64::NAN);
                } else {
                    values.push(if additive { sum } else { sum / n as f64 });
                }
                states.push(state);
            }
            Column {
                key: col.key.clone(),
                values,
                states,
            }
        })
        .collect();
    Ok(SynchronizedFrame {
        start: frame.start,
        interval,
        len,
        columns,
    })
}

fn merge_state(acc: CellState, next: CellState) -> CellState {
    use CellState::*;
    match (acc, next) {
        (Observed, _) | (_, Observed) => Observed,
        (Missing, s) => s,
        (Filled, _) | (_, Filled) => Filled,
        _ => Backfilled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::stream::parse_timestamp;

    fn ts(s: &str) -> i64 {
        parse_timestamp(s).unwrap()
    }

    fn env_stream(points: &[(&str, f64)]) -> RawStream {
        let mut s = RawStream::new(Source::Environment);
        for (t, v) in points {
            s.push(ts(t), None, &[*v; 6]);
        }
        s
    }

    #[test]
    fn irrigation_mean_within_bucket() {
        let env = env_stream(&[("2021-03-01T00:00:00Z", 5.0)]);
        let mut irr = RawStream::new(Source::Irrigation);
        for m in (0..15).step_by(2) {
            irr.push(ts(&format!("2021-03-01T00:{m:02}:00Z")), Some(1), &[1.0; 5]);
        }
        let f = synchronize(&[env, irr]).unwrap();
        let c = f
            .column(Source::Irrigation, "nutrient_ec", Some(1))
            .unwrap();
        assert_eq!(c.values, vec![1.0]);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn on_grid_environment_passes_through() {
        let env = env_stream(&[
            ("2021-03-01T00:00:00Z", 1.0),
            ("2021-03-01T00:30:00Z", 7.25),
        ]);
        let f = synchronize(&[env]).unwrap();
        let c = f
            .column(Source::Environment, "temperature_c", None)
            .unwrap();
        assert_eq!(c.values[2], 7.25);
        assert_eq!(c.states[1], CellState::Missing);
        assert_eq!(f.interval(), SYNC_INTERVAL_SECS);
    }

    #[test]
    fn yield_picks_are_summed() {
        let env = env_stream(&[("2021-03-01T00:00:00Z", 1.0)]);
        let mut y = RawStream::new(Source::Yield);
        y.push(ts("2021-03-01T00:00:00Z"), Some(2), &[200.0, 1.0]);
        y.push(ts("2021-03-01T00:05:00Z"), Some(2), &[300.0, 2.0]);
        let f = synchronize(&[env, y]).unwrap();
        let c = f.column(Source::Yield, "weight_g", Some(2)).unwrap();
        assert_eq!(c.values[0], 500.0);
        // Brute-force: sum every pick whose timestamp falls in [0, 15min).
        let picks = [(0i64, 200.0), (300, 300.0)];
        let oracle: f64 = picks.iter().filter(|(t, _)| *t < 900).map(|p| p.1).sum();
        assert_eq!(c.values[0], oracle);
    }

    #[test]
    fn synchronize_errors() {
        assert!(matches!(synchronize(&[]), Err(Error::Data(_))));
        let mut irr = RawStream::new(Source::Irrigation);
        irr.push(0, Some(1), &[1.0; 5]);
        assert!(matches!(synchronize(&[irr]), Err(Error::Data(_))));
        let env = env_stream(&[("2021-03-01T00:00:00Z", 1.0), ("2021-03-01T00:00:00Z", 2.0)]);
        assert!(matches!(synchronize(&[env]), Err(Error::Duplicate { .. })));
    }

    fn single_column(values: &[Option<f64>], source: Source) -> SynchronizedFrame {
        SynchronizedFrame {
            start: 0,
            interval: SYNC_INTERVAL_SECS,
            len: values.len(),
            columns: vec![Column {
                key: ColumnKey {
                    source,
                    feature: if source == Source::Yield {
                        "weight_g".into()
                    } else {
                        "temperature_c".into()
                    },
                    row_id: None,
                },
                values: values.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
                states: values
                    .iter()
                    .map(|v| {
                        if v.is_some() {
                            CellState::Observed
                        } else {
                            CellState::Missing
                        }
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn forward_fill_examples() {
        let f = single_column(&[Some(1.0), None, None, Some(4.0)], Source::Environment);
        let filled = forward_fill(&f).unwrap();
        let c = &filled.columns()[0];
        assert_eq!(c.values, vec![1.0, 1.0, 1.0, 4.0]);
        assert_eq!(c.states[1], CellState::Filled);

        let f = single_column(&[Some(1.0), Some(2.0)], Source::Environment);
        assert_eq!(forward_fill(&f).unwrap(), f);

        let f = single_column(&[Some(200.0), None, Some(300.0)], Source::Yield);
        let filled = forward_fill(&f).unwrap();
        assert_eq!(filled.columns()[0].states[1], CellState::Missing);
        let kept: Vec<f64> = filled.columns()[0]
            .values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .collect();
        assert_eq!(kept, vec![200.0, 300.0]);
    }

    #[test]
    fn leading_gap_is_backfilled() {
        let f = single_column(&[None, None, Some(3.0), None], Source::Environment);
        let c = forward_fill(&f).unwrap().columns()[0].clone();
        assert_eq!(c.values, vec![3.0, 3.0, 3.0, 3.0]);
        assert_eq!(
            c.states,
            vec![
                CellState::Backfilled,
                CellState::Backfilled,
                CellState::Observed,
                CellState::Filled
            ]
        );
    }

    #[test]
    fn unfillable_column() {
        let f = single_column(&[None, None], Source::Environment);
        assert!(matches!(forward_fill(&f), Err(Error::UnfillableColumn(_))));
    }

    #[test]
    fn downsample_examples() {
        let vals: Vec<Option<f64>> = (1..=16).map(|v| Some(v as f64)).collect();
        let f = single_column(&vals, Source::Environment);
        let d = downsample(&f, MODEL_INTERVAL_SECS).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.columns()[0].values[0], 8.5);
        assert_eq!(d.interval(), MODEL_INTERVAL_SECS);

        let f = single_column(&[Some(2.0); 32], Source::Environment);
        let d = downsample(&f, MODEL_INTERVAL_SECS).unwrap();
        assert_eq!(d.columns()[0].values, vec![2.0, 2.0]);

        let mut y = vec![None; 16];
        y[5] = Some(100.0);
        let f = single_column(&y, Source::Yield);
        let d = downsample(&f, MODEL_INTERVAL_SECS).unwrap();
        assert_eq!(d.columns()[0].values[0], 100.0);
        assert_eq!(d.columns()[0].states[0], CellState::Observed);

        assert!(matches!(downsample(&f, 1000), Err(Error::Config(_))));
    }
}
