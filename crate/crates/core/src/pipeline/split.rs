use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::windows::TriExample;
use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_ROWS: [u32; 7] = [2, 3, 4, 6, 7, 8, 10];
pub const DEFAULT_TEST_ROWS: [u32; 3] = [1, 5, 9];
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_rows: Vec<u32>,
    pub test_rows: Vec<u32>,
    pub batch_size: usize,
    pub validation_batches: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_rows: DEFAULT_TRAIN_ROWS.to_vec(),
            test_rows: DEFAULT_TEST_ROWS.to_vec(),
            batch_size: DEFAULT_BATCH_SIZE,
            validation_batches: 2,
            seed: 0,
        }
    }
}

/// Row-disjoint split with the training rows cut into shuffled batches.
///
/// Batches hold indices into the example slice the plan was built from. The
/// last `validation_batches` shuffled batches form a fixed validation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub config: SplitConfig,
    /// Number of shuffled training-row batches, validation included.
    pub k: usize,
    pub train_batches: Vec<Vec<usize>>,
    pub validation_batches: Vec<Vec<usize>>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn train_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train_batches.iter().flatten().copied()
    }

    pub fn validation_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.validation_batches.iter().flatten().copied()
    }
}

pub fn plan_split(examples: &[TriExample], config: &SplitConfig) -> Result<SplitPlan> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if let Some(r) = config
        .train_rows
        .iter()
        .find(|r| config.test_rows.contains(r))
    {
        return Err(Error::Config(format!(
            "row {r} is in both train and test sets"
        )));
    }
    let mut train: Vec<usize> = Vec::new();
    let mut test = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if config.test_rows.contains(&ex.row_id) {
            test.push(i);
        } else if config.train_rows.contains(&ex.row_id) {
            train.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    train.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = train
        .chunks(config.batch_size)
        .map(|c| c.to_vec())
        .collect();
    let k = batches.len();
    let min_batches = config.validation_batches + 1;
    if k < min_batches.max(3) {
        return Err(Error::TooFewBatches(k));
    }
    let validation_batches = batches.split_off(k - config.validation_batches);
    Ok(SplitPlan {
        config: config.clone(),
        k,
        train_batches: batches,
        validation_batches,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::windows::Window;
    use chrono::NaiveDate;

    fn dummy(row: u32, n: usize) -> Vec<TriExample> {
        let w = Window {
            start: 0,
            interval: 86_400,
            steps: 1,
            width: 1,
            values: vec![0.0],
        };
        (0..n)
            .map(|i| TriExample {
                id: format!("{row}-{i}"),
                row_id: row,
                issue_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
                target_date: NaiveDate::from_ymd_opt(2021, 1, 22).unwrap(),
                past: w.clone(),
                present: w.clone(),
                premonition: w.clone(),
                target_yield: i as f64,
            })
            .collect()
    }

    fn fixture(per_row: usize) -> Vec<TriExample> {
        (1..=10).flat_map(|r| dummy(r, per_row)).collect()
    }

    #[test]
    fn ten_batches_eight_plus_two() {
        // 7 training rows x 46 = 322 would give 11 batches; use an exact 320.
        let mut ex = fixture(46);
        let mut dropped = 0;
        ex.retain(|e| {
            if e.row_id == 2 && dropped < 2 {
                dropped += 1;
                false
            } else {
                true
            }
        });
        let plan = plan_split(&ex, &SplitConfig::default()).unwrap();
        assert_eq!(
            plan.train_indices().count() + plan.validation_indices().count(),
            320
        );
        assert_eq!(plan.k, 10);
        assert_eq!(plan.train_batches.len(), 8);
        assert_eq!(plan.validation_batches.len(), 2);
    }

    #[test]
    fn test_rows_never_train() {
        let ex = fixture(20);
        let plan = plan_split(&ex, &SplitConfig::default()).unwrap();
        for i in plan.train_indices().chain(plan.validation_indices()) {
            assert!(![1, 5, 9].contains(&ex[i].row_id));
        }
        assert!(plan.test.iter().all(|&i| [1, 5, 9].contains(&ex[i].row_id)));
        assert_eq!(plan.test.len(), 60);
    }

    #[test]
    fn deterministic_per_seed() {
        let ex = fixture(20);
        let cfg = SplitConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(
            plan_split(&ex, &cfg).unwrap(),
            plan_split(&ex, &cfg).unwrap()
        );
        let other = SplitConfig {
            seed: 12,
            ..Default::default()
        };
        assert_ne!(
            plan_split(&ex, &cfg).unwrap().train_batches,
            plan_split(&ex, &other).unwrap().train_batches
        );
    }

    #[test]
    fn too_few_batches() {
        let ex = fixture(5); // 35 training examples -> 2 batches
        assert!(matches!(
            plan_split(&ex, &SplitConfig::default()),
            Err(Error::TooFewBatches(2))
        ));
    }
}
