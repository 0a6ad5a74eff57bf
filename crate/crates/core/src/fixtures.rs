//! Small seeded examples for tests, benches and gradient checks.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BranchShape, ModelConfig};
use crate::pipeline::{example_id, Timeline, TriExample, Window};

/// Random example with window values in `[-1, 1]` matching `config`'s branch shapes.
pub fn random_example(config: &ModelConfig, row_id: u32, seed: u64) -> TriExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_date = NaiveDate::from_ymd_opt(2021, 6, 1).unwrap() + Days::new(seed % 60);
    let mut window = |shape: BranchShape| Window {
        start: 0,
        interval: 86_400,
        steps: shape.steps,
        width: shape.features,
        values: (0..shape.steps * shape.features)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    };
    let past = window(config.branches[Timeline::Past as usize]);
    let present = window(config.branches[Timeline::Present as usize]);
    let premonition = window(config.branches[Timeline::Premonition as usize]);
    TriExample {
        id: example_id(row_id, target_date),
        row_id,
        issue_date: target_date - Days::new(21),
        target_date,
        past,
        present,
        premonition,
        target_yield: rng.random_range(-1.0..1.0),
    }
}

/// Branch widths of the real pipeline: 13 history channels, 6 weather channels.
pub const PIPELINE_WIDTHS: [usize; 3] = [13, 13, 6];
