//! Seeded stand-in for a strawberry tabletop site: weather, per-row
//! irrigation telemetry and twice-weekly picks over two seasons.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write_with, write_json};
use crate::pipeline::{midnight, write_stream_csv, RawStream, Source};

pub const SPEC_ECHO_FILE: &str = "synth_spec.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonSpec {
    pub start: NaiveDate,
    pub weeks: u32,
}

/// Per-row yield hump: per-pick weight peaks at `amplitude_g` in `peak_week`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarietyProfile {
    pub peak_week: f64,
    pub amplitude_g: f64,
    pub width_weeks: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherModel {
    pub mean_temp_c: f64,
    pub seasonal_amp_c: f64,
    pub diurnal_amp_c: f64,
    /// Standard deviation of the daily temperature anomaly.
    pub anomaly_sd_c: f64,
    /// e-folding time of the anomaly in days.
    pub anomaly_days: f64,
    pub noise_sd_c: f64,
}

impl Default for WeatherModel {
    fn default() -> Self {
        WeatherModel {
            mean_temp_c: 14.0,
            seasonal_amp_c: 7.0,
            diurnal_amp_c: 5.0,
            anomaly_sd_c: 3.0,
            anomaly_days: 4.0,
            noise_sd_c: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSiteSpec {
    pub seed: u64,
    pub n_rows: u32,
    pub seasons: Vec<SeasonSpec>,
    /// One per row; drawn from the seed when empty.
    pub profiles: Vec<VarietyProfile>,
    pub weather: WeatherModel,
    pub picks_per_week: u32,
    pub irrigation_cadence_min: u32,
    pub environment_cadence_min: u32,
    pub missing_rate: f64,
    /// Relative yield change per anomaly standard deviation of the 21-day mean temperature.
    pub weather_sensitivity: f64,
    /// Largest per-row, per-season departure of the amplitude multiplier from 1;
    /// each draw moves at least half that far.
    pub season_variation: f64,
    /// Largest per-row, per-season peak shift in weeks, drawn like the multiplier.
    pub peak_shift_weeks: f64,
    /// Relative standard deviation of pick-to-pick noise.
    pub yield_noise: f64,
}

impl Default for SyntheticSiteSpec {
    fn default() -> Self {
        SyntheticSiteSpec {
            seed: 0,
            n_rows: 10,
            seasons: vec![
                SeasonSpec {
                    start: NaiveDate::from_ymd_opt(2020, 3, 2).expect("valid date"),
                    weeks: 26,
                },
                SeasonSpec {
                    start: NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date"),
                    weeks: 26,
                },
            ],
            profiles: Vec::new(),
            weather: WeatherModel::default(),
            picks_per_week: 2,
            irrigation_cadence_min: 2,
            environment_cadence_min: 15,
            missing_rate: 0.01,
            weather_sensitivity: 0.2,
            season_variation: 0.4,
            peak_shift_weeks: 2.0,
            yield_noise: 0.05,
        }
    }
}

impl SyntheticSiteSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_rows < 4 {
            return bad(format!("n_rows must be at least 4, got {}", self.n_rows));
        }
        if self.seasons.is_empty() || self.seasons.iter().any(|s| s.weeks == 0) {
            return bad("at least one season of nonzero length is required".into());
        }
        if !self.profiles.is_empty() && self.profiles.len() != self.n_rows as usize {
            return bad(format!(
                "{} profiles given for {} rows",
                self.profiles.len(),
                self.n_rows
            ));
        }
        if self
            .profiles
            .iter()
            .any(|p| !(p.amplitude_g > 0.0 && p.width_weeks > 0.0))
        {
            return bad("profile amplitudes and widths must be positive".into());
        }
        if !(1..=7).contains(&self.picks_per_week) {
            return bad("picks_per_week must be between 1 and 7".into());
        }
        for (name, m) in [
            ("irrigation_cadence_min", self.irrigation_cadence_min),
            ("environment_cadence_min", self.environment_cadence_min),
        ] {
            if m == 0 || 1440 % m != 0 {
                return bad(format!("{name} must divide a day, got {m}"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)".into());
        }
        let w = &self.weather;
        let nonneg = [
            self.weather_sensitivity,
            self.peak_shift_weeks,
            self.yield_noise,
            w.seasonal_amp_c,
            w.diurnal_amp_c,
            w.anomaly_sd_c,
            w.noise_sd_c,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || !(0.0..1.0).contains(&self.season_variation)
            || w.anomaly_days <= 0.0
        {
            return bad("rates and amplitudes must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// How one row's hump differs in one season.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonEffect {
    pub multiplier: f64,
    pub shift_weeks: f64,
}

/// The spec with every seeded draw made explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSite {
    pub spec: SyntheticSiteSpec,
    pub profiles: Vec<VarietyProfile>,
    /// `effects[row - 1][season]`
    pub effects: Vec<Vec<SeasonEffect>>,
}

impl ResolvedSite {
    /// Expected per-pick weight, before weather and noise, `weeks` into `season`.
    pub fn expected_pick(&self, row: u32, season: usize, weeks: f64) -> f64 {
        let p = self.profiles[row as usize - 1];
        let e = self.effects[row as usize - 1][season];
        let z = (weeks - p.peak_week - e.shift_weeks) / p.width_weeks;
        p.amplitude_g * e.multiplier * (-0.5 * z * z).exp()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub site: ResolvedSite,
    /// Irrigation, environment, yield.
    pub streams: Vec<RawStream>,
}

// Independent RNG streams keep each component stable when another changes.
const STREAM_SITE: u64 = 1;
const STREAM_WEATHER: u64 = 2;
const STREAM_ENV: u64 = 3;
const STREAM_IRRIGATION: u64 = 100;
const STREAM_YIELD: u64 = 200;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite nonnegative sd")
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

pub fn resolve(spec: &SyntheticSiteSpec) -> Result<ResolvedSite> {
    spec.validate()?;
    let mut r = rng(spec.seed, STREAM_SITE);
    let profiles = if spec.profiles.is_empty() {
        (0..spec.n_rows)
            .map(|_| VarietyProfile {
                peak_week: r.random_range(14.0..18.0),
                amplitude_g: r.random_range(220.0..320.0),
                width_weeks: r.random_range(6.0..9.0),
            })
            .collect()
    } else {
        spec.profiles.clone()
    };
    let v = spec.season_variation;
    let s = spec.peak_shift_weeks;
    // Magnitudes between half and all of the configured spread, random sign.
    let draw = |r: &mut ChaCha8Rng, half_width: f64| {
        if half_width == 0.0 {
            return 0.0;
        }
        let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * half_width * r.random_range(0.5..1.0)
    };
    let effects = (0..spec.n_rows)
        .map(|_| {
            spec.seasons
                .iter()
                .map(|_| SeasonEffect {
                    multiplier: 1.0 + draw(&mut r, v),
                    shift_weeks: draw(&mut r, s),
                })
                .collect()
        })
        .collect();
    Ok(ResolvedSite {
        spec: spec.clone(),
        profiles,
        effects,
    })
}

/// Daily weather state for one season.
struct SeasonWeather {
    start: NaiveDate,
    /// Zero-mean daily temperature anomaly.
    anomaly: Vec<f64>,
    /// Daily cloudiness in [0, 1].
    cloud: Vec<f64>,
    /// Daily rain total in mm.
    rain: Vec<f64>,
}

impl SeasonWeather {
    fn days(&self) -> usize {
        self.anomaly.len()
    }

    /// Mean anomaly over the 21 days ending on `day` (clamped to the season).
    fn trailing_anomaly(&self, day: usize) -> f64 {
        let lo = day.saturating_sub(20);
        let span = &self.anomaly[lo..=day.min(self.days() - 1)];
        span.iter().sum::<f64>() / span.len() as f64
    }
}

fn season_weather(
    spec: &SyntheticSiteSpec,
    r: &mut ChaCha8Rng,
    season: &SeasonSpec,
) -> SeasonWeather {
    let days = season.weeks as usize * 7;
    let w = &spec.weather;
    let phi = (-1.0 / w.anomaly_days).exp();
    let innov = normal(w.anomaly_sd_c * (1.0 - phi * phi).sqrt());
    let mut a = normal(w.anomaly_sd_c).sample(r);
    let mut anomaly = Vec::with_capacity(days);
    for _ in 0..days {
        anomaly.push(a);
        a = phi * a + innov.sample(r);
    }
    let mean = anomaly.iter().sum::<f64>() / days as f64;
    anomaly.iter_mut().for_each(|x| *x -= mean);
    let cloud = (0..days).map(|_| r.random_range(0.0..1.0)).collect();
    let rain = (0..days)
        .map(|_| {
            if r.random_bool(0.25) {
                r.random_range(0.5..12.0)
            } else {
                0.0
            }
        })
        .collect();
    SeasonWeather {
        start: season.start,
        anomaly,
        cloud,
        rain,
    }
}

fn climatology(w: &WeatherModel, date: NaiveDate) -> f64 {
    let doy = date.ordinal0() as f64;
    w.mean_temp_c + w.seasonal_amp_c * (2.0 * PI * (doy - 105.0) / 365.25).sin()
}

/// Air temperature without measurement noise.
fn air_temperature(w: &WeatherModel, sw: &SeasonWeather, day: usize, hour: f64) -> f64 {
    let date = sw.start + Days::new(day as u64);
    climatology(w, date)
        + sw.anomaly[day]
        + w.diurnal_amp_c * (2.0 * PI * (hour - 9.0) / 24.0).sin()
}

fn maybe_missing(r: &mut ChaCha8Rng, rate: f64, v: f64) -> f64 {
    if rate > 0.0 && r.random_bool(rate) {
        f64::NAN
    } else {
        v
    }
}

fn environment(spec: &SyntheticSiteSpec, weather: &[SeasonWeather]) -> RawStream {
    let w = &spec.weather;
    let mut r = rng(spec.seed, STREAM_ENV);
    let noise = normal(w.noise_sd_c);
    let step = spec.environment_cadence_min as i64 * 60;
    let per_day = 86_400 / step;
    let mut out = RawStream::new(Source::Environment);
    let mut wind_dir: f64 = r.random_range(0.0..360.0);
    for sw in weather {
        let t0 = midnight(sw.start);
        for day in 0..sw.days() {
            for k in 0..per_day {
                let ts = t0 + day as i64 * 86_400 + k * step;
                let hour = (k * step) as f64 / 3600.0;
                let temp = air_temperature(w, sw, day, hour) + noise.sample(&mut r);
                let daylight = (PI * (hour - 5.0) / 15.0).sin().max(0.0);
                let solar =
                    850.0 * daylight * (1.0 - 0.7 * sw.cloud[day]) + r.random_range(0.0..20.0);
                let humidity = (78.0 - 2.2 * (temp - w.mean_temp_c)
                    + 12.0 * sw.cloud[day]
                    + 3.0 * noise.sample(&mut r))
                .clamp(15.0, 100.0);
                wind_dir = (wind_dir + r.random_range(-15.0..15.0)).rem_euclid(360.0);
                let wind = (2.5 + 2.0 * sw.cloud[day] + r.random_range(-1.0..1.0)).max(0.0);
                let precip = sw.rain[day] / per_day as f64 * r.random_range(0.0..2.0);
                let mut vals = [
                    round_to(temp, 3),
                    round_to(humidity, 2),
                    round_to(wind_dir, 1),
                    round_to(wind, 2),
                    round_to(solar, 1),
                    round_to(precip, 3),
                ];
                for v in vals.iter_mut() {
                    *v = maybe_missing(&mut r, spec.missing_rate, *v);
                }
                out.push(ts, None, &vals);
            }
        }
    }
    out
}

fn irrigation(spec: &SyntheticSiteSpec, weather: &[SeasonWeather]) -> RawStream {
    let w = &spec.weather;
    let step = spec.irrigation_cadence_min as i64 * 60;
    let per_day = 86_400 / step;
    let scale = step as f64 / 120.0;
    let mut out = RawStream::new(Source::Irrigation);
    for row in 1..=spec.n_rows {
        let mut r = rng(spec.seed, STREAM_IRRIGATION + row as u64);
        let noise = normal(1.0);
        for sw in weather {
            let t0 = midnight(sw.start);
            for day in 0..sw.days() {
                for k in 0..per_day {
                    let ts = t0 + day as i64 * 86_400 + k * step;
                    let hour = (k * step) as f64 / 3600.0;
                    let temp = air_temperature(w, sw, day, hour);
                    let heat = (temp - 10.0).max(0.0);
                    let input = if (6.0..20.0).contains(&hour) {
                        (scale * (0.04 + 0.006 * heat) * (1.0 + 0.1 * noise.sample(&mut r)))
                            .max(0.0)
                    } else {
                        0.0
                    };
                    let vals = [
                        1.9 + 0.05 * noise.sample(&mut r),
                        42.0 - 0.6 * (temp - w.mean_temp_c) + 0.5 * noise.sample(&mut r),
                        0.7 * temp + 4.0 + 0.2 * noise.sample(&mut r),
                        input,
                        (0.15 * input * (1.0 + 0.2 * noise.sample(&mut r))).max(0.0),
                    ];
                    let vals =
                        vals.map(|v| maybe_missing(&mut r, spec.missing_rate, round_to(v, 4)));
                    out.push(ts, Some(row), &vals);
                }
            }
        }
    }
    out
}

/// Day offsets within a week on which picks happen, spread evenly from day 0.
fn pick_offsets(per_week: u32) -> Vec<u64> {
    (0..per_week as u64)
        .map(|i| i * 7 / per_week as u64)
        .collect()
}

fn yields(site: &ResolvedSite, weather: &[SeasonWeather]) -> RawStream {
    let spec = &site.spec;
    let sd = spec.weather.anomaly_sd_c.max(f64::MIN_POSITIVE);
    let mut out = RawStream::new(Source::Yield);
    let offsets = pick_offsets(spec.picks_per_week);
    for row in 1..=spec.n_rows {
        let mut r = rng(spec.seed, STREAM_YIELD + row as u64);
        let noise = normal(spec.yield_noise);
        for (si, sw) in weather.iter().enumerate() {
            for week in 0..spec.seasons[si].weeks as u64 {
                for &off in &offsets {
                    let day = (week * 7 + off) as usize;
                    let weeks = day as f64 / 7.0;
                    let factor =
                        (1.0 + spec.weather_sensitivity * sw.trailing_anomaly(day) / sd).max(0.1);
                    let expected = site.expected_pick(row, si, weeks);
                    let g = (expected * factor * (1.0 + noise.sample(&mut r))).max(0.0);
                    let quality = if g > 0.0 {
                        r.random_range(1..=3) as f64
                    } else {
                        0.0
                    };
                    let date = sw.start + Days::new(day as u64);
                    out.push(midnight(date), Some(row), &[round_to(g, 1), quality]);
                }
            }
        }
    }
    out
}

/// Irrigation, environment and yield streams for `spec`; pure in the seed.
pub fn generate(spec: &SyntheticSiteSpec) -> Result<SyntheticDataset> {
    let site = resolve(spec)?;
    let mut r = rng(spec.seed, STREAM_WEATHER);
    let weather: Vec<SeasonWeather> = spec
        .seasons
        .iter()
        .map(|s| season_weather(spec, &mut r, s))
        .collect();
    let streams = vec![
        irrigation(spec, &weather),
        environment(spec, &weather),
        yields(&site, &weather),
    ];
    Ok(SyntheticDataset { site, streams })
}

/// Writes the three stream CSVs and the resolved spec into `dir`.
pub fn write_dataset(data: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &data.streams {
        let path = dir.join(s.source.file_name());
        atomic_write_with(&path, |tmp| write_stream_csv(s, tmp))?;
    }
    write_json(&dir.join(SPEC_ECHO_FILE), &data.site)
}
