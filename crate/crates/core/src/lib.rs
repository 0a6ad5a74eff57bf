//! Multi-timeline transformer yield forecasting.
//!
//! Three transformer branches read the prior-year window, the trailing
//! observation window and a forward weather window, and a linear head merges
//! their summaries into one yield forecast.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod suite;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
