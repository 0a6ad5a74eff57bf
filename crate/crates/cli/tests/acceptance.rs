//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::Days;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtt_core::dataset::{build_examples, PreparedDataset};
use mtt_core::ensemble::{aggregate, audit_isolation, build_row_subsets, train_ensemble};
use mtt_core::fixtures::random_example;
use mtt_core::model::{
    multi_head_attention, ModelConfig, ModelSettings, MttParams, PositionalEncodingTable,
};
use mtt_core::pipeline::{
    downsample, forward_fill, midnight, synchronize, CellState, ColumnKey, FeatureRange,
    NormalizationParams, RawStream, Source, SplitConfig, TriExample, WindowSpec, DEFAULT_TEST_ROWS,
    DEFAULT_TRAIN_ROWS, SYNC_INTERVAL_SECS,
};
use mtt_core::suite::{gradient_suite, GRADIENT_TOLERANCE};
use mtt_core::synth::{generate, SyntheticSiteSpec};
use mtt_core::tensor::{Mask, Tape, Tensor};
use mtt_core::train::{
    adam_step, baseline_rows, evaluate, fan, fit, kaiming_std, kaiming_uniform_init, report,
    AdamConfig, AdamState, Exec, FanMode, FitData, InitSpec, TrainConfig,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64, what: &str) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || {
        format!(
            "{what} took {:.1}s, limit {limit_s}s",
            elapsed.as_secs_f64()
        )
    })
}

fn gradient_suite_passes() -> Check {
    let t = Instant::now();
    let results = gradient_suite(0).map_err(|e| e.to_string())?;
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .ok_or("empty suite")?;
    let failed: Vec<_> = results
        .iter()
        .filter(|r| r.max_rel_error >= GRADIENT_TOLERANCE)
        .collect();
    ensure(failed.is_empty(), || format!("failing checks: {failed:?}"))?;
    within(t.elapsed(), 60, "gradient suite")?;
    Ok(format!(
        "{} checks, worst {:.2e} ({}), {:.1}s",
        results.len(),
        worst.max_rel_error,
        worst.name,
        t.elapsed().as_secs_f64()
    ))
}

fn analytic_oracles() -> Check {
    // Sinusoidal table against exp/ln evaluation of the same angle.
    let (len, d) = (600, 16);
    let table = PositionalEncodingTable::new(len, d).map_err(|e| e.to_string())?;
    let mut pe_err: f64 = 0.0;
    for pos in 0..len {
        for col in 0..d {
            let i = (col / 2) as f64;
            let angle = pos as f64 * (-(2.0 * i / d as f64) * 10000f64.ln()).exp();
            let want = if col % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            };
            pe_err = pe_err.max((table.row(pos)[col] - want).abs());
        }
    }
    ensure(pe_err < 1e-9, || {
        format!("positional encoding off by {pe_err:e}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rt_err: f64 = 0.0;
    for (a, b) in [(0.0, 1.0), (-1.0, 1.0)] {
        let p = NormalizationParams {
            a,
            b,
            features: BTreeMap::new(),
            target: FeatureRange { min: 0.0, max: 1.0 },
        };
        for _ in 0..10_000 {
            let lo: f64 = rng.random_range(-500.0..500.0);
            let r = FeatureRange {
                min: lo,
                max: lo + rng.random_range(0.1..5000.0),
            };
            let x = rng.random_range(r.min..=r.max);
            rt_err = rt_err.max((p.denormalize(p.normalize(x, &r), &r) - x).abs());
        }
    }
    ensure(rt_err < 1e-9, || {
        format!("normalize round trip off by {rt_err:e}")
    })?;

    let mut params = MttParams::new(ModelConfig::miniature([3, 3, 2]), InitSpec::default())
        .map_err(|e| e.to_string())?;
    let before = params.store.flatten();
    let grads: Vec<Option<Tensor>> = params
        .store
        .tensors()
        .iter()
        .map(|t| Some(Tensor::new(t.shape(), vec![1.0; t.len()]).unwrap()))
        .collect();
    let mut st = AdamState::new(&params.store, AdamConfig::default());
    adam_step(&mut params.store, &grads, &mut st).map_err(|e| e.to_string())?;
    let m_hat = st.m[0][0] / (1.0 - 0.9);
    let v_hat = st.v[0][0] / (1.0 - 0.999);
    ensure(
        (m_hat - 1.0).abs() < 1e-12 && (v_hat - 1.0).abs() < 1e-12,
        || format!("m̂ {m_hat}, v̂ {v_hat}"),
    )?;
    let step = 1e-3 / (1.0 + 1e-8);
    let adam_err = before
        .iter()
        .zip(params.store.flatten())
        .map(|(a, b)| ((a - b) - step).abs())
        .fold(0.0, f64::max);
    ensure(adam_err < 1e-12, || {
        format!("Adam first step off by {adam_err:e}")
    })?;

    let std = kaiming_std(
        -0.01,
        fan(&[64, 32], FanMode::FanIn).map_err(|e| e.to_string())?,
    );
    ensure((std - 0.176768).abs() < 1e-6, || {
        format!("Kaiming std {std}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = kaiming_uniform_init(&[256, 256], -0.01, FanMode::FanIn, &mut rng)
        .map_err(|e| e.to_string())?;
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let emp = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let want = kaiming_std(-0.01, 256);
    let rel = (emp / want - 1.0).abs();
    ensure(rel < 0.05, || format!("empirical std {emp} vs {want}"))?;

    Ok(format!(
        "PE {pe_err:.1e}, round trip {rt_err:.1e}, Adam {adam_err:.1e}, Kaiming {std:.6} (empirical {:.2}% off)",
        rel * 100.0
    ))
}

/// Coarse synthetic site used where training quality does not matter.
fn quick_site(seed: u64) -> SyntheticSiteSpec {
    SyntheticSiteSpec {
        seed,
        irrigation_cadence_min: 60,
        ..Default::default()
    }
}

fn quick_examples(seed: u64) -> Result<Vec<TriExample>, String> {
    let data = generate(&quick_site(seed)).map_err(|e| e.to_string())?;
    build_examples(&data.streams, 86_400, &WindowSpec::default()).map_err(|e| e.to_string())
}

fn leakage() -> Check {
    // Causal attention: output row t ignores rows after t, bit for bit.
    let params = MttParams::new(
        ModelConfig::miniature([3, 3, 2]),
        InitSpec {
            seed: 4,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let attn = &params.branches[0].decoder[0].self_attention;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let len = 6;
    let base: Vec<f64> = (0..len * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |x: &[f64]| -> Vec<f64> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let xv = tape.constant(Tensor::new(&[len, 4], x.to_vec()).unwrap());
        let y =
            multi_head_attention(&mut tape, xv, xv, attn, &vars, Some(&Mask::causal(len))).unwrap();
        tape.value(y).data().to_vec()
    };
    let y0 = run(&base);
    for t in 0..len - 1 {
        for _ in 0..5 {
            let mut x = base.clone();
            for v in &mut x[(t + 1) * 4..] {
                *v += rng.random_range(-10.0..10.0);
            }
            let y = run(&x);
            for i in 0..=(t * 4 + 3) {
                ensure(y[i].to_bits() == y0[i].to_bits(), || {
                    format!("row {t} changed after perturbing later rows")
                })?;
            }
        }
    }

    // Test rows never reach a training or validation batch, single model or ensemble.
    let raw = quick_examples(2)?;
    let data =
        PreparedDataset::new(raw.clone(), &SplitConfig::default()).map_err(|e| e.to_string())?;
    let leaked = data
        .plan
        .train_indices()
        .chain(data.plan.validation_indices())
        .filter(|&i| DEFAULT_TEST_ROWS.contains(&data.raw[i].row_id))
        .count();
    ensure(leaked == 0, || {
        format!("{leaked} test-row examples in training batches")
    })?;
    let spec = build_row_subsets(&DEFAULT_TRAIN_ROWS, 0).map_err(|e| e.to_string())?;
    for rows in &spec.member_row_sets {
        ensure(rows.iter().all(|r| !DEFAULT_TEST_ROWS.contains(r)), || {
            format!("member rows {rows:?} include a test row")
        })?;
    }

    // Every window stays at or before its target day.
    for ex in &raw {
        let day_end = midnight(ex.target_date + Days::new(1));
        ensure(ex.premonition.end() <= day_end, || {
            format!("{}: premonition ends after the target date", ex.id)
        })?;
        ensure(
            ex.present.end() <= midnight(ex.issue_date + Days::new(1)),
            || format!("{}: present window ends after issue", ex.id),
        )?;
        ensure(ex.past.end() <= day_end, || {
            format!("{}: past window ends late", ex.id)
        })?;
    }
    Ok(format!(
        "causal mask bitwise stable, {} train / {} validation / {} test examples, {} windows checked",
        data.plan.train_indices().count(),
        data.plan.validation_indices().count(),
        data.plan.test.len(),
        raw.len() * 3
    ))
}

/// Seeded streams spanning 1000 cells of 15 minutes, with gaps and NaNs.
fn pipeline_fixture() -> Vec<RawStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let t0 = 1_614_556_800 + 3 * 3600 + 7 * 60;
    let span = 1000 * SYNC_INTERVAL_SECS - 3 * 3600 - 7 * 60 - 1;
    let times = |mean_gap: i64, rng: &mut ChaCha8Rng| {
        let mut out = Vec::new();
        let mut t = t0;
        while t < t0 + span {
            out.push(t);
            t += rng.random_range(1..2 * mean_gap);
            if rng.random_bool(0.02) {
                t += rng.random_range(3600..6 * 3600);
            }
        }
        out
    };
    let mut streams = Vec::new();
    let mut env = RawStream::new(Source::Environment);
    for t in times(900, &mut rng) {
        let vals: Vec<f64> = (0..env.features.len())
            .map(|_| {
                if rng.random_bool(0.05) {
                    f64::NAN
                } else {
                    rng.random_range(-5.0..35.0)
                }
            })
            .collect();
        env.push(t, None, &vals);
    }
    streams.push(env);
    let mut irr = RawStream::new(Source::Irrigation);
    let mut recs = Vec::new();
    for row in [1, 2, 3] {
        for t in times(420, &mut rng) {
            recs.push((t, row));
        }
    }
    recs.sort();
    for (t, row) in recs {
        let vals: Vec<f64> = (0..irr.features.len())
            .map(|_| {
                if rng.random_bool(0.05) {
                    f64::NAN
                } else {
                    rng.random_range(0.0..3.0)
                }
            })
            .collect();
        irr.push(t, Some(row), &vals);
    }
    streams.push(irr);
    let mut yields = RawStream::new(Source::Yield);
    for row in [1, 2, 3] {
        for day in 0..10 {
            if rng.random_bool(0.4) {
                let t = t0 - 3 * 3600 - 7 * 60 + day * 86_400 + rng.random_range(0..86_400);
                yields.push(
                    t,
                    Some(row),
                    &[
                        rng.random_range(50.0..400.0),
                        1.0 + rng.random_range(0..3) as f64,
                    ],
                );
            }
        }
    }
    streams.push(yields);
    streams
}

struct BruteColumn {
    values: Vec<f64>,
    states: Vec<CellState>,
}

/// Direct per-cell evaluation of sync, fill and downsample.
fn brute_force(streams: &[RawStream], interval: i64) -> BTreeMap<ColumnKey, BruteColumn> {
    let all_ts: Vec<i64> = streams
        .iter()
        .flat_map(|s| s.timestamps.iter().copied())
        .collect();
    let start = all_ts.iter().min().unwrap().div_euclid(86_400) * 86_400;
    let end = *all_ts.iter().max().unwrap();
    let cells = ((end - start) / SYNC_INTERVAL_SECS + 1) as usize;
    let per = (interval / SYNC_INTERVAL_SECS) as usize;
    let coarse = cells.div_ceil(per);
    let mut out = BTreeMap::new();
    for s in streams {
        let mut rows: Vec<Option<u32>> = s.row_ids.clone();
        rows.sort();
        rows.dedup();
        for row in rows {
            for (j, feature) in s.features.iter().enumerate() {
                let summed = s.source == Source::Yield && feature == "weight_g";
                let mut fine: Vec<Option<f64>> = Vec::with_capacity(cells);
                for c in 0..cells {
                    let lo = start + c as i64 * SYNC_INTERVAL_SECS;
                    let hits: Vec<f64> = (0..s.len())
                        .map(|i| s.record(i))
                        .filter(|(ts, r, v)| {
                            *r == row
                                && *ts >= lo
                                && *ts < lo + SYNC_INTERVAL_SECS
                                && !v[j].is_nan()
                        })
                        .map(|(_, _, v)| v[j])
                        .collect();
                    fine.push(if hits.is_empty() {
                        None
                    } else {
                        let mut sum = 0.0;
                        for h in &hits {
                            sum += h;
                        }
                        Some(if summed { sum } else { sum / hits.len() as f64 })
                    });
                }
                let filled: Vec<(f64, CellState)> = (0..cells)
                    .map(|c| match fine[c] {
                        Some(v) => (v, CellState::Observed),
                        None if s.source == Source::Yield => (f64::NAN, CellState::Missing),
                        None => match (0..c).rev().find_map(|k| fine[k]) {
                            Some(v) => (v, CellState::Filled),
                            None => (
                                fine.iter().flatten().next().copied().unwrap(),
                                CellState::Backfilled,
                            ),
                        },
                    })
                    .collect();
                let mut values = Vec::new();
                let mut states = Vec::new();
                for b in 0..coarse {
                    let part: Vec<&(f64, CellState)> = filled[b * per..((b + 1) * per).min(cells)]
                        .iter()
                        .filter(|(_, st)| *st != CellState::Missing)
                        .collect();
                    let mut sum = 0.0;
                    for (v, _) in &part {
                        sum += v;
                    }
                    values.push(match part.len() {
                        0 => f64::NAN,
                        _ if summed => sum,
                        n => sum / n as f64,
                    });
                    let has = |st: CellState| part.iter().any(|(_, s)| *s == st);
                    states.push(if has(CellState::Observed) {
                        CellState::Observed
                    } else if has(CellState::Filled) {
                        CellState::Filled
                    } else if has(CellState::Backfilled) {
                        CellState::Backfilled
                    } else {
                        CellState::Missing
                    });
                }
                out.insert(
                    ColumnKey {
                        source: s.source,
                        feature: feature.clone(),
                        row_id: row,
                    },
                    BruteColumn { values, states },
                );
            }
        }
    }
    out
}

fn pipeline_oracle() -> Check {
    let streams = pipeline_fixture();
    let interval = 4 * 3600;
    let synced = synchronize(&streams).map_err(|e| e.to_string())?;
    let fine_cells = synced.len();
    let frame = downsample(&forward_fill(&synced).map_err(|e| e.to_string())?, interval)
        .map_err(|e| e.to_string())?;
    let oracle = brute_force(&streams, interval);
    ensure(frame.columns().len() == oracle.len(), || {
        format!(
            "{} columns vs {} in the oracle",
            frame.columns().len(),
            oracle.len()
        )
    })?;
    let mut compared = 0;
    for col in frame.columns() {
        let want = oracle
            .get(&col.key)
            .ok_or_else(|| format!("unexpected column {}", col.key))?;
        ensure(col.states == want.states, || {
            format!("{}: states differ", col.key)
        })?;
        for (i, (a, b)) in col.values.iter().zip(&want.values).enumerate() {
            ensure(
                a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()),
                || format!("{} cell {i}: {a} vs {b}", col.key),
            )?;
            compared += 1;
        }
        ensure(col.values.len() == want.values.len(), || {
            format!("{}: length differs", col.key)
        })?;
    }
    ensure(fine_cells == 1000, || {
        format!("fixture spans {fine_cells} cells, expected 1000")
    })?;
    Ok(format!(
        "{fine_cells} sync cells, {compared} output cells identical"
    ))
}

fn capacity() -> Check {
    let t = Instant::now();
    let p = MttParams::new(
        ModelConfig::miniature([3, 3, 2]),
        InitSpec {
            seed: 1,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let examples = vec![random_example(&p.config, 2, 42); 8];
    let all: Vec<usize> = (0..8).collect();
    let data = FitData {
        examples: &examples,
        train_batches: vec![all.clone()],
        validation: all,
        test: vec![],
    };
    let cfg = TrainConfig {
        max_epochs: 500,
        patience: 500,
        seed: 3,
        adam: AdamConfig::default(),
    };
    let out = fit(p, &data, &cfg, Exec::default()).map_err(|e| e.to_string())?;
    let hit = out
        .history
        .iter()
        .find(|m| m.train_mse < 1e-3)
        .map(|m| m.epoch);
    let epoch =
        hit.ok_or_else(|| format!("final train mse {}", out.history.last().unwrap().train_mse))?;
    within(t.elapsed(), 300, "overfit")?;
    Ok(format!(
        "train MSE < 1e-3 at epoch {epoch}, {:.1}s",
        t.elapsed().as_secs_f64()
    ))
}

fn learning_signal() -> Check {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3u64 {
        let site = generate(&SyntheticSiteSpec {
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let raw = build_examples(&site.streams, 86_400, &WindowSpec::default())
            .map_err(|e| e.to_string())?;
        let data = PreparedDataset::new(
            raw,
            &SplitConfig {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let config = ModelConfig::for_example(ModelSettings::default(), &data.normalized[0])
            .map_err(|e| e.to_string())?;
        let params = MttParams::new(
            config,
            InitSpec {
                seed,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        let out = fit(
            params,
            &FitData::from_plan(&data.normalized, &data.plan),
            &cfg,
            Exec::default(),
        )
        .map_err(|e| e.to_string())?;
        let test = data.normalized_refs(&data.plan.test);
        let model = evaluate(&out.params, &test, &data.normalizer, Exec::default())
            .map_err(|e| e.to_string())?;
        let base =
            report(baseline_rows(&data.raw_refs(&data.plan.test))).map_err(|e| e.to_string())?;
        let (m, b) = (model.pct_of_mean.unwrap(), base.pct_of_mean.unwrap());
        let rel = 1.0 - m / b;
        lines.push(format!(
            "seed {seed}: {m:.1}% vs {b:.1}% ({:+.0}%)",
            rel * 100.0
        ));
        if rel < 0.2 {
            failures.push(seed);
        }
    }
    within(t.elapsed(), 1200, "three training runs")?;
    ensure(failures.is_empty(), || {
        format!("seeds {failures:?} below 20%: {}", lines.join("; "))
    })?;
    Ok(format!(
        "{}; {:.0}s",
        lines.join("; "),
        t.elapsed().as_secs_f64()
    ))
}

fn ensemble_algebra() -> Check {
    let a = aggregate(&[100.0, 100.0, 100.0]).map_err(|e| e.to_string())?;
    ensure(
        (a.average, a.median, a.spread) == (100.0, 100.0, 0.0),
        || format!("{a:?}"),
    )?;
    let b = aggregate(&[90.0, 100.0, 140.0]).map_err(|e| e.to_string())?;
    ensure(
        (b.average, b.median, b.spread) == (110.0, 100.0, 50.0),
        || format!("{b:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for _ in 0..1000 {
        let x: [f64; 3] = [(); 3].map(|_| rng.random_range(0.0..500.0));
        let base = aggregate(&x).unwrap();
        for p in PERMS {
            let y = aggregate(&[x[p[0]], x[p[1]], x[p[2]]]).unwrap();
            ensure(y.median == base.median && y.spread == base.spread, || {
                format!("permutation {p:?} of {x:?} changed the result")
            })?;
            ensure(
                (y.average - base.average).abs() <= 1e-12 * base.average.abs(),
                || format!("average of {x:?} depends on order"),
            )?;
        }
    }

    let raw = quick_examples(6)?;
    let spec = build_row_subsets(&DEFAULT_TRAIN_ROWS, 6).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        max_epochs: 2,
        ..Default::default()
    };
    let members = train_ensemble(
        &spec,
        &raw,
        &ModelSettings::default(),
        &SplitConfig::default(),
        &cfg,
        Exec::default(),
    )
    .map_err(|e| e.to_string())?;
    for m in &members {
        audit_isolation(&m.rows, &m.seen_ids, &m.seen_digest).map_err(|e| e.to_string())?;
        let mut tampered = m.seen_ids.clone();
        tampered.push(raw.iter().find(|e| e.row_id == 1).unwrap().id.clone());
        ensure(
            audit_isolation(&m.rows, &tampered, &m.seen_digest).is_err()
                && audit_isolation(
                    &m.rows,
                    &tampered,
                    &mtt_core::ensemble::ids_digest(&tampered),
                )
                .is_err(),
            || "audit accepted a foreign example".into(),
        )?;
    }
    Ok(format!(
        "hand examples exact, 6000 permutations invariant, {} members audited ({} seen ids)",
        members.len(),
        members.iter().map(|m| m.seen_ids.len()).sum::<usize>()
    ))
}

fn mtt(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mtt"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "mtt {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn end_to_end_determinism() -> Check {
    let config = r#"{"seed": 7, "data": {"model_interval": "24h"}, "train": {"max_epochs": 3},
                     "synth": {"irrigation_cadence_min": 60}}"#;
    let run = || -> Result<Vec<u8>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::write(dir.path().join("run.json"), config).map_err(|e| e.to_string())?;
        let c = ["--config", "run.json"];
        mtt(&[&c[..], &["synth", "--out", "data"]].concat(), dir.path())?;
        mtt(
            &[&c[..], &["prepare", "--data", "data", "--out", "bundle"]].concat(),
            dir.path(),
        )?;
        mtt(
            &[&c[..], &["train", "--bundle", "bundle", "--out", "model"]].concat(),
            dir.path(),
        )?;
        mtt(
            &[
                "predict",
                "--bundle",
                "bundle",
                "--model",
                "model",
                "--out",
                "forecasts.csv",
            ],
            dir.path(),
        )?;
        std::fs::read(dir.path().join("forecasts.csv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    ensure(lines > 1, || "forecasts CSV is empty".into())?;
    ensure(a == b, || "forecasts differ between runs".into())?;
    Ok(format!(
        "{} forecast rows byte-identical across two runs",
        lines - 1
    ))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient suite", gradient_suite_passes),
        ("analytic oracles", analytic_oracles),
        ("leakage", leakage),
        ("pipeline oracle", pipeline_oracle),
        ("capacity", capacity),
        ("learning signal", learning_signal),
        ("ensemble algebra", ensemble_algebra),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
