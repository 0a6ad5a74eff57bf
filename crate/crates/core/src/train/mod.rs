//! Initialization, loss, optimizer and the training loop.

mod adam;
mod batch;
mod evaluate;
mod fit;
mod init;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::{batch_gradient, dataset_mse, example_gradient, predict_all, BatchGradient, Exec};
pub use evaluate::{
    baseline_rows, evaluate, forecast_rows, forecasts_csv, order_rows, prior_year_baseline, report,
    EvaluationReport, ForecastRow,
};
pub use fit::{fit, metrics_csv, EpochMetrics, FitData, FitOutcome, TrainConfig};
pub use init::{fan, kaiming_std, kaiming_uniform_init, FanMode, InitSpec};
pub use loss::{mse, mse_loss};
