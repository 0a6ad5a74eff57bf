use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::batch::{predict_all, Exec};
use crate::error::{Error, Result};
use crate::model::MttParams;
use crate::pipeline::{history_features, NormalizationParams, TriExample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub example_id: String,
    pub row_id: u32,
    pub target_date: NaiveDate,
    pub pred_g: f64,
    pub truth_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub rmse_grams: f64,
    pub mean_truth_g: f64,
    /// `100·RMSE/mean(y)`; absent when the mean is zero.
    pub pct_of_mean: Option<f64>,
    /// `100·RMSE/(max(y) − min(y))`; absent for a constant truth.
    pub pct_of_range: Option<f64>,
    pub rows: Vec<ForecastRow>,
}

/// Sorts forecasts by target date, then row.
pub fn order_rows(rows: &mut [ForecastRow]) {
    rows.sort_by(|a, b| {
        (a.target_date, a.row_id, &a.example_id).cmp(&(b.target_date, b.row_id, &b.example_id))
    });
}

pub fn report(mut rows: Vec<ForecastRow>) -> Result<EvaluationReport> {
    if rows.is_empty() {
        return Err(Error::Data("cannot evaluate zero examples".into()));
    }
    order_rows(&mut rows);
    let n = rows.len() as f64;
    let sq: f64 = rows.iter().map(|r| (r.pred_g - r.truth_g).powi(2)).sum();
    let rmse = (sq / n).sqrt();
    let mean = rows.iter().map(|r| r.truth_g).sum::<f64>() / n;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.truth_g), hi.max(r.truth_g))
        });
    let pct = |base: f64| (base != 0.0).then(|| 100.0 * rmse / base);
    Ok(EvaluationReport {
        n: rows.len(),
        rmse_grams: rmse,
        mean_truth_g: mean,
        pct_of_mean: pct(mean),
        pct_of_range: pct(hi - lo),
        rows,
    })
}

/// Denormalized forecasts for normalized `examples`.
pub fn forecast_rows(
    params: &MttParams,
    examples: &[&TriExample],
    normalizer: &NormalizationParams,
    exec: Exec,
) -> Result<Vec<ForecastRow>> {
    let pred = predict_all(params, examples, exec)?;
    let mut rows: Vec<ForecastRow> = examples
        .iter()
        .zip(pred)
        .map(|(ex, p)| ForecastRow {
            example_id: ex.id.clone(),
            row_id: ex.row_id,
            target_date: ex.target_date,
            pred_g: normalizer.denormalize_target(p),
            truth_g: normalizer.denormalize_target(ex.target_yield),
        })
        .collect();
    order_rows(&mut rows);
    Ok(rows)
}

pub fn evaluate(
    params: &MttParams,
    examples: &[&TriExample],
    normalizer: &NormalizationParams,
    exec: Exec,
) -> Result<EvaluationReport> {
    if examples.is_empty() {
        return Err(Error::Data("cannot evaluate zero examples".into()));
    }
    report(forecast_rows(params, examples, normalizer, exec)?)
}

/// Naive forecast from an unnormalized example: the row's mean pick weight
/// over the prior-year week ending on the target date's counterpart.
///
/// Falls back to the mean over the whole past window, then to zero.
pub fn prior_year_baseline(raw: &TriExample) -> f64 {
    let names = history_features();
    let yi = names
        .iter()
        .position(|n| n == "yield_g")
        .expect("yield channel");
    let pi = names
        .iter()
        .position(|n| n == "pick")
        .expect("pick channel");
    let w = &raw.past;
    let per_day = (86_400 / w.interval.max(1)).max(1) as usize;
    let days = w.steps / per_day;
    let day_stats = |d: usize| {
        let (mut total, mut picked) = (0.0, false);
        for s in d * per_day..(d + 1) * per_day {
            let row = w.row(s);
            if row[pi] > 0.0 {
                picked = true;
                total += row[yi];
            }
        }
        picked.then_some(total)
    };
    let mean_over = |range: std::ops::Range<usize>| {
        let picks: Vec<f64> = range.filter_map(day_stats).collect();
        (!picks.is_empty()).then(|| picks.iter().sum::<f64>() / picks.len() as f64)
    };
    mean_over(days.saturating_sub(7)..days)
        .or_else(|| mean_over(0..days))
        .unwrap_or(0.0)
}

pub fn baseline_rows(raw: &[&TriExample]) -> Vec<ForecastRow> {
    let mut rows: Vec<ForecastRow> = raw
        .iter()
        .map(|ex| ForecastRow {
            example_id: ex.id.clone(),
            row_id: ex.row_id,
            target_date: ex.target_date,
            pred_g: prior_year_baseline(ex),
            truth_g: ex.target_yield,
        })
        .collect();
    order_rows(&mut rows);
    rows
}

/// `example_id,row_id,target_date,pred_g,truth_g`
pub fn forecasts_csv(rows: &[ForecastRow]) -> String {
    let mut out = String::from("example_id,row_id,target_date,pred_g,truth_g\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.example_id, r.row_id, r.target_date, r.pred_g, r.truth_g
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: u32, day: u32, pred: f64, truth: f64) -> ForecastRow {
        let d = NaiveDate::from_ymd_opt(2021, 6, day).unwrap();
        ForecastRow {
            example_id: crate::pipeline::example_id(id, d),
            row_id: id,
            target_date: d,
            pred_g: pred,
            truth_g: truth,
        }
    }

    #[test]
    fn perfect_predictions() {
        let r = report(vec![row(1, 1, 5.0, 5.0), row(2, 1, 9.0, 9.0)]).unwrap();
        assert_eq!(r.rmse_grams, 0.0);
        assert_eq!(r.pct_of_mean, Some(0.0));
        assert_eq!(r.pct_of_range, Some(0.0));
    }

    #[test]
    fn constant_offset() {
        let r = report(vec![
            row(1, 1, 110.0, 100.0),
            row(2, 2, 60.0, 50.0),
            row(3, 3, 10.0, 0.0),
        ])
        .unwrap();
        assert!((r.rmse_grams - 10.0).abs() < 1e-12);
    }

    #[test]
    fn three_example_fixture() {
        // residuals 3, -4, 0 -> sqrt(25/3)
        let r = report(vec![
            row(5, 3, 103.0, 100.0),
            row(1, 1, 196.0, 200.0),
            row(9, 2, 300.0, 300.0),
        ])
        .unwrap();
        let rmse = (25.0f64 / 3.0).sqrt();
        assert!((r.rmse_grams - rmse).abs() < 1e-12);
        assert!((r.pct_of_mean.unwrap() - 100.0 * rmse / 200.0).abs() < 1e-12);
        assert!((r.pct_of_range.unwrap() - 100.0 * rmse / 200.0).abs() < 1e-12);
        let order: Vec<u32> = r.rows.iter().map(|r| r.row_id).collect();
        assert_eq!(order, vec![1, 9, 5]);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(report(vec![]).is_err());
    }

    #[test]
    fn csv_layout() {
        let text = forecasts_csv(&[row(3, 4, 1.5, 2.0)]);
        assert_eq!(
            text,
            "example_id,row_id,target_date,pred_g,truth_g\nr03-2021-06-04,3,2021-06-04,1.500000,2.000000\n"
        );
    }
}
