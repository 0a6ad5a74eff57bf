//! Three members trained on overlapping row windows, aggregated per example.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::model::{ModelConfig, ModelSettings, MttParams};
use crate::pipeline::{
    example_row, fit_normalizer, plan_split, NormalizationParams, SplitConfig, TriExample,
};
use crate::train::{fit, EpochMetrics, Exec, FitData, InitSpec, TrainConfig};

pub const MEMBERS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub member_row_sets: Vec<Vec<u32>>,
    pub seeds: Vec<u64>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.member_row_sets.len() != MEMBERS || self.seeds.len() != MEMBERS {
            return Err(Error::Config(format!(
                "an ensemble has exactly {MEMBERS} members, got {} row sets and {} seeds",
                self.member_row_sets.len(),
                self.seeds.len()
            )));
        }
        for (i, pair) in self.member_row_sets.windows(2).enumerate() {
            let shared = pair[0].iter().filter(|r| pair[1].contains(r)).count();
            if shared != 1 {
                return Err(Error::Config(format!(
                    "members {} and {} share {shared} rows, expected 1",
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(())
    }
}

/// Splits ordered training rows into three consecutive windows that share
/// one row at each junction, e.g. `2,3,4,6,7,8,10` → `{2,3,4} {4,6,7} {7,8,10}`.
///
/// Member `i` gets seed `base_seed + i + 1`.
pub fn build_row_subsets(train_rows: &[u32], base_seed: u64) -> Result<EnsembleSpec> {
    let n = train_rows.len();
    if n < 7 {
        return Err(Error::Config(format!(
            "{n} training rows are too few for three overlapping members (need 7)"
        )));
    }
    let distinct: BTreeSet<_> = train_rows.iter().collect();
    if distinct.len() != n {
        return Err(Error::Config("training rows contain duplicates".into()));
    }
    // Three windows over n + 2 slots, as even as possible.
    let slots = n + 2;
    let sizes = [0, 1, 2].map(|i| slots / 3 + usize::from(i < slots % 3));
    let mut sets = Vec::with_capacity(MEMBERS);
    let mut start = 0;
    for size in sizes {
        sets.push(train_rows[start..start + size].to_vec());
        start += size - 1;
    }
    let spec = EnsembleSpec {
        member_row_sets: sets,
        seeds: (0..MEMBERS as u64)
            .map(|i| base_seed.wrapping_add(i + 1))
            .collect(),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub member_preds: [f64; 3],
    pub average: f64,
    pub median: f64,
    /// `max − min` of the member forecasts.
    pub spread: f64,
}

pub fn aggregate(preds: &[f64]) -> Result<EnsemblePrediction> {
    let member_preds: [f64; 3] = preds.try_into().map_err(|_| {
        Error::Config(format!(
            "expected {MEMBERS} member forecasts, got {}",
            preds.len()
        ))
    })?;
    let mut sorted = member_preds;
    sorted.sort_by(f64::total_cmp);
    Ok(EnsemblePrediction {
        member_preds,
        average: sorted.iter().sum::<f64>() / 3.0,
        median: sorted[1],
        spread: sorted[2] - sorted[0],
    })
}

/// A member's fitted weights and the normalizer fitted on its own rows.
#[derive(Clone, Debug)]
pub struct TrainedMember {
    pub index: usize,
    pub rows: Vec<u32>,
    pub seed: u64,
    pub params: MttParams,
    pub normalizer: NormalizationParams,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Sorted ids of every example used for training or validation.
    pub seen_ids: Vec<String>,
    pub seen_digest: String,
}

pub fn ids_digest(ids: &[String]) -> String {
    sha256_hex(ids.join("\n").as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    index: usize,
    rows: &[u32],
    seed: u64,
    raw: &[TriExample],
    settings: &ModelSettings,
    split: &SplitConfig,
    train: &TrainConfig,
    exec: Exec,
) -> Result<TrainedMember> {
    let own: Vec<&TriExample> = raw.iter().filter(|e| rows.contains(&e.row_id)).collect();
    if own.is_empty() {
        return Err(Error::Data(format!("no examples for rows {rows:?}")));
    }
    let own_owned: Vec<TriExample> = own.iter().map(|e| (*e).clone()).collect();
    let normalizer = fit_normalizer(&own_owned)?;
    let pool: Vec<TriExample> = raw
        .iter()
        .filter(|e| rows.contains(&e.row_id) || split.test_rows.contains(&e.row_id))
        .map(|e| normalizer.normalize_example(e))
        .collect::<Result<_>>()?;
    let cfg = SplitConfig {
        train_rows: rows.to_vec(),
        seed,
        ..split.clone()
    };
    let plan = plan_split(&pool, &cfg)?;
    let mut seen_ids: Vec<String> = plan
        .train_indices()
        .chain(plan.validation_indices())
        .map(|i| pool[i].id.clone())
        .collect();
    seen_ids.sort();
    let config = ModelConfig::for_example(settings.clone(), &pool[0])?;
    let params = MttParams::new(
        config,
        InitSpec {
            seed,
            ..Default::default()
        },
    )?;
    let tc = TrainConfig {
        seed,
        ..train.clone()
    };
    let out = fit(params, &FitData::from_plan(&pool, &plan), &tc, exec)?;
    log::info!(
        "member {}: rows {rows:?}, best epoch {} (val {:.6})",
        index + 1,
        out.best_epoch,
        out.best_val_mse
    );
    Ok(TrainedMember {
        index,
        rows: rows.to_vec(),
        seed,
        params: out.params,
        normalizer,
        history: out.history,
        best_epoch: out.best_epoch,
        seen_digest: ids_digest(&seen_ids),
        seen_ids,
    })
}

/// Trains every member independently on its own rows.
///
/// `raw` holds unnormalized examples; `split.train_rows` is ignored in favour
/// of each member's set, while `split.test_rows` still supply test metrics.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    raw: &[TriExample],
    settings: &ModelSettings,
    split: &SplitConfig,
    train: &TrainConfig,
    exec: Exec,
) -> Result<Vec<TrainedMember>> {
    spec.validate()?;
    let idx: Vec<usize> = (0..MEMBERS).collect();
    exec.map(&idx, |&i| {
        train_member(
            i,
            &spec.member_row_sets[i],
            spec.seeds[i],
            raw,
            settings,
            split,
            train,
            exec,
        )
        .map_err(|e| Error::Member {
            member: i + 1,
            source: Box::new(e),
        })
    })
}

/// Denormalized member forecasts for one raw example, aggregated.
pub fn predict_ensemble(
    members: &[(&MttParams, &NormalizationParams)],
    raw: &TriExample,
) -> Result<EnsemblePrediction> {
    if members.len() != MEMBERS {
        return Err(Error::Config(format!(
            "expected {MEMBERS} members, got {}",
            members.len()
        )));
    }
    let preds = members
        .iter()
        .map(|(p, n)| Ok(n.denormalize_target(p.predict(&n.normalize_example(raw)?)?)))
        .collect::<Result<Vec<f64>>>()?;
    aggregate(&preds)
}

/// Checks each member's recorded ids against its digest and its row set.
pub fn audit_isolation(rows: &[u32], seen_ids: &[String], digest: &str) -> Result<()> {
    if ids_digest(seen_ids) != digest {
        return Err(Error::Data(
            "seen-id digest does not match the recorded ids".into(),
        ));
    }
    for id in seen_ids {
        match example_row(id) {
            Some(r) if rows.contains(&r) => {}
            _ => {
                return Err(Error::Data(format!(
                    "example {id} lies outside member rows {rows:?}"
                )))
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub index: usize,
    pub rows: Vec<u32>,
    pub seed: u64,
    pub checkpoint: String,
    pub normalizer: NormalizationParams,
    pub best_epoch: usize,
    pub seen_digest: String,
    pub seen_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub members: Vec<MemberEntry>,
}

pub const ENSEMBLE_FORMAT: &str = "mtt-ensemble/1";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_rows() {
        let spec = build_row_subsets(&[2, 3, 4, 6, 7, 8, 10], 0).unwrap();
        assert_eq!(
            spec.member_row_sets,
            vec![vec![2, 3, 4], vec![4, 6, 7], vec![7, 8, 10]]
        );
        assert_eq!(spec.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn larger_row_lists_keep_single_overlaps() {
        for n in 7..20u32 {
            let rows: Vec<u32> = (1..=n).collect();
            let spec = build_row_subsets(&rows, 9).unwrap();
            let covered: BTreeSet<u32> = spec.member_row_sets.iter().flatten().copied().collect();
            assert_eq!(covered.len(), n as usize);
            assert!(spec.member_row_sets[0]
                .iter()
                .all(|r| !spec.member_row_sets[2].contains(r)));
        }
    }

    #[test]
    fn too_few_rows() {
        assert!(build_row_subsets(&[1, 2, 3, 4, 5], 0).is_err());
        assert!(build_row_subsets(&[1, 2, 3, 4, 5, 6], 0).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let p = aggregate(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!((p.average, p.median, p.spread), (100.0, 100.0, 0.0));
        let p = aggregate(&[90.0, 140.0, 100.0]).unwrap();
        assert_eq!((p.average, p.median, p.spread), (110.0, 100.0, 50.0));
        assert!(aggregate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn audit_catches_foreign_rows() {
        let ids = vec!["r02-2021-06-01".to_string(), "r04-2021-06-04".to_string()];
        let d = ids_digest(&ids);
        audit_isolation(&[2, 3, 4], &ids, &d).unwrap();
        assert!(audit_isolation(&[2, 3], &ids, &d).is_err());
        assert!(audit_isolation(&[2, 3, 4], &ids[..1], &d).is_err());
    }

    proptest! {
        #[test]
        fn aggregates_are_permutation_invariant_and_bounded(
            a in -1e4f64..1e4, b in -1e4f64..1e4, c in -1e4f64..1e4
        ) {
            let base = aggregate(&[a, b, c]).unwrap();
            for perm in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                let p = aggregate(&perm).unwrap();
                prop_assert_eq!(p.median.to_bits(), base.median.to_bits());
                prop_assert_eq!(p.average.to_bits(), base.average.to_bits());
                prop_assert_eq!(p.spread.to_bits(), base.spread.to_bits());
            }
            let (lo, hi) = (a.min(b).min(c), a.max(b).max(c));
            prop_assert!(lo <= base.median && base.median <= hi);
            prop_assert!(lo <= base.average && base.average <= hi);
            prop_assert!(base.spread >= 0.0);
        }
    }
}
