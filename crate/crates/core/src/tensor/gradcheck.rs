use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Config(format!(
            "finite-difference eps must be > 0, got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let loss = f(&mut tape, leaf)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(leaf)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(probe);
        let out = f(&mut tape, leaf)?;
        let v = tape
            .value(out)
            .item()
            .ok_or_else(|| Error::NonScalarLoss(tape.value(out).shape().to_vec()))?;
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_difference_check"));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
