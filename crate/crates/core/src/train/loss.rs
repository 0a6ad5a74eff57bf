use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `Σ(y − ŷ)² / N` on the tape.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (p, t) = (tape.value(pred), tape.value(target));
    if p.len() != t.len() {
        return Err(Error::Dimension {
            op: "mse_loss",
            left: p.shape().to_vec(),
            right: t.shape().to_vec(),
        });
    }
    let target = if p.shape() == t.shape() {
        target
    } else {
        let shape = p.shape().to_vec();
        tape.reshape(target, &shape)?
    };
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Plain MSE over slices.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "mse",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Data("mse of zero values".into()));
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(s / pred.len() as f64)
}
