use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FanMode {
    FanIn,
    FanOut,
}

/// Kaiming-uniform settings for a leaky-ReLU network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// Negative slope of the rectifier that follows the layer.
    pub a: f64,
    pub mode: FanMode,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            a: -0.01,
            mode: FanMode::FanIn,
            seed: 0,
        }
    }
}

/// Fan of a rank-2 shape: dim 0 for fan-in, dim 1 for fan-out.
pub fn fan(shape: &[usize], mode: FanMode) -> Result<usize> {
    if shape.len() != 2 {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(match mode {
        FanMode::FanIn => shape[0],
        FanMode::FanOut => shape[1],
    })
}

/// `std = sqrt(2 / ((1 + a²) · fan))`
pub fn kaiming_std(a: f64, fan: usize) -> f64 {
    (2.0 / ((1.0 + a * a) * fan as f64)).sqrt()
}

/// Draws `U(−√3·std, √3·std)`, which has standard deviation `std`.
pub fn kaiming_uniform_init<R: Rng + ?Sized>(
    shape: &[usize],
    a: f64,
    mode: FanMode,
    rng: &mut R,
) -> Result<Tensor> {
    let std = kaiming_std(a, fan(shape, mode)?);
    let bound = 3f64.sqrt() * std;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data)
}
