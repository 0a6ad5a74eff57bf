use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::batch::{batch_gradient, dataset_mse, Exec};
use crate::error::{Error, Result};
use crate::model::MttParams;
use crate::pipeline::{SplitPlan, TriExample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: Option<f64>,
    pub wall_time_s: f64,
}

/// Normalized examples with batch and hold-out index lists.
#[derive(Clone, Debug)]
pub struct FitData<'a> {
    pub examples: &'a [TriExample],
    pub train_batches: Vec<Vec<usize>>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl<'a> FitData<'a> {
    pub fn from_plan(examples: &'a [TriExample], plan: &SplitPlan) -> Self {
        FitData {
            examples,
            train_batches: plan.train_batches.clone(),
            validation: plan.validation_indices().collect(),
            test: plan.test.clone(),
        }
    }

    fn refs(&self, idx: &[usize]) -> Vec<&'a TriExample> {
        idx.iter().map(|&i| &self.examples[i]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: MttParams,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Adam over shuffled batches with best-validation snapshotting and patience.
pub fn fit(
    mut params: MttParams,
    data: &FitData<'_>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if data.train_batches.iter().all(|b| b.is_empty()) {
        return Err(Error::Data("no training batches".into()));
    }
    if data.validation.is_empty() {
        return Err(Error::Data("no validation examples".into()));
    }
    let batches: Vec<Vec<&TriExample>> = data
        .train_batches
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| data.refs(b))
        .collect();
    let validation = data.refs(&data.validation);
    let test = data.refs(&data.test);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&params.store, cfg.adam);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut stale = 0;
    let mut history = Vec::new();
    let clock = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, &b) in order.iter().enumerate() {
            let g =
                batch_gradient(&params, &batches[b], exec).map_err(|e| diverged(e, epoch, bi))?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss: g.loss,
                });
            }
            sum += g.loss * batches[b].len() as f64;
            count += batches[b].len();
            adam_step(&mut params.store, &g.grads, &mut state)?;
        }
        let val_mse = dataset_mse(&params, &validation, exec).map_err(|e| diverged(e, epoch, 0))?;
        let test_mse = if test.is_empty() {
            None
        } else {
            Some(dataset_mse(&params, &test, exec).map_err(|e| diverged(e, epoch, 0))?)
        };
        let m = EpochMetrics {
            epoch,
            train_mse: sum / count as f64,
            val_mse,
            test_mse,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6}{}",
            m.train_mse,
            m.val_mse,
            m.test_mse
                .map(|t| format!(" test {t:.6}"))
                .unwrap_or_default()
        );
        history.push(m);

        if val_mse < best.1 {
            best = (params.clone(), val_mse, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("no validation improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (params, best_val_mse, best_epoch) = best;
    Ok(FitOutcome {
        params,
        history,
        best_epoch,
        best_val_mse,
    })
}

/// `epoch,train_mse,val_mse,test_mse,wall_time_s`
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,test_mse,wall_time_s\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            m.epoch,
            m.train_mse,
            m.val_mse,
            m.test_mse.map(|t| t.to_string()).unwrap_or_default(),
            m.wall_time_s
        ));
    }
    out
}
