use chrono::{Datelike, Days};
use statrs::function::erf::erf;

use mtt_core::dataset::build_examples;
use mtt_core::pipeline::{date_of, read_dataset, RawStream, WindowSpec};
use mtt_core::synth::{generate, write_dataset, SyntheticSiteSpec, SPEC_ECHO_FILE};

fn coarse(seed: u64) -> SyntheticSiteSpec {
    SyntheticSiteSpec {
        seed,
        irrigation_cadence_min: 60,
        ..Default::default()
    }
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

#[test]
fn season_totals_match_the_gaussian_integral() {
    for seed in [0, 1] {
        let d = generate(&coarse(seed)).unwrap();
        let spec = &d.site.spec;
        let y = &d.streams[2];
        for row in 1..=spec.n_rows {
            let p = d.site.profiles[row as usize - 1];
            for (si, season) in spec.seasons.iter().enumerate() {
                let e = d.site.effects[row as usize - 1][si];
                let (start, end) = (
                    season.start,
                    season.start + Days::new(season.weeks as u64 * 7),
                );
                let total: f64 = (0..y.len())
                    .map(|i| y.record(i))
                    .filter(|(ts, r, _)| *r == Some(row) && (start..end).contains(&date_of(*ts)))
                    .map(|(_, _, v)| v[0])
                    .sum();
                // picks/week × ∫₀ᵂ A·m·exp(−(w−μ)²/2σ²) dw
                let mu = p.peak_week + e.shift_weeks;
                let sigma = p.width_weeks;
                let integral = p.amplitude_g
                    * e.multiplier
                    * sigma
                    * (2.0 * std::f64::consts::PI).sqrt()
                    * (phi((season.weeks as f64 - mu) / sigma) - phi(-mu / sigma));
                let want = spec.picks_per_week as f64 * integral;
                let rel = (total - want).abs() / want;
                assert!(
                    rel < 0.10,
                    "seed {seed} row {row} season {si}: {total:.0} vs {want:.0}"
                );
            }
        }
    }
}

fn same_values(a: &RawStream, b: &RawStream) -> bool {
    a.values.len() == b.values.len()
        && a.values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
}

#[test]
fn written_files_are_byte_identical_and_round_trip() {
    let spec = coarse(4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let data = generate(&spec).unwrap();
    write_dataset(&data, a.path()).unwrap();
    write_dataset(&generate(&spec).unwrap(), b.path()).unwrap();
    for name in [
        "irrigation.csv",
        "environment.csv",
        "yields.csv",
        SPEC_ECHO_FILE,
    ] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }

    let back = read_dataset(a.path()).unwrap();
    for (orig, read) in data.streams.iter().zip(&back) {
        assert_eq!(orig.source, read.source);
        assert_eq!(orig.features, read.features);
        assert_eq!(orig.timestamps, read.timestamps);
        assert_eq!(orig.row_ids, read.row_ids);
        assert!(same_values(orig, read), "{:?}", orig.source);
    }

    let header = |name: &str| {
        std::fs::read_to_string(a.path().join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(
        header("irrigation.csv"),
        "timestamp,row_id,nutrient_ec,moisture_pct,soil_temp_c,input_l,runoff_l"
    );
    assert_eq!(
        header("environment.csv"),
        "timestamp,temperature_c,humidity_pct,wind_dir_deg,wind_speed_ms,solar_wm2,precip_mm"
    );
    assert_eq!(header("yields.csv"), "date,row_id,weight_g,quality_class");

    let text = std::fs::read_to_string(a.path().join("yields.csv")).unwrap();
    for line in text.lines().skip(1) {
        let row: u32 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((1..=spec.n_rows).contains(&row), "{line}");
    }
}

#[test]
fn picks_fall_on_schedule_and_cover_the_second_season() {
    let data = generate(&coarse(9)).unwrap();
    let spec = &data.site.spec;
    let y = &data.streams[2];
    assert!(y.values.iter().all(|v| *v >= 0.0));
    for &ts in &y.timestamps {
        let day = date_of(ts);
        let season = spec
            .seasons
            .iter()
            .find(|s| day >= s.start && day < s.start + Days::new(s.weeks as u64 * 7))
            .expect("pick inside a season");
        let offset = (day - season.start).num_days() % 7;
        assert!(offset == 0 || offset == 3, "{day} is not a pick day");
        assert!(
            day.weekday().num_days_from_monday() == 0 || day.weekday().num_days_from_monday() == 3
        );
    }
    let examples = build_examples(&data.streams, 86_400, &WindowSpec::default()).unwrap();
    assert!(!examples.is_empty());
    let second = spec.seasons[1].start;
    assert!(examples.iter().all(|e| e.target_date >= second));
    let rows: std::collections::BTreeSet<u32> = examples.iter().map(|e| e.row_id).collect();
    assert_eq!(rows.len(), spec.n_rows as usize);
}
