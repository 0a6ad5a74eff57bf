use crate::error::Result;
use crate::model::{mtt_forward, MttParams};
use crate::pipeline::TriExample;
use crate::tensor::{Tape, Tensor};

use super::loss::mse_loss;

/// How per-example work inside a batch is scheduled.
///
/// Both modes reduce in example order, so results are bit-identical.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Maps `f` over `items`, keeping input order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Mean loss and gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: Vec<Option<Tensor>>,
}

/// Squared error and per-parameter gradients of one example.
pub fn example_gradient(params: &MttParams, ex: &TriExample) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let y = mtt_forward(&mut tape, params, &vars, ex)?;
    let target = tape.constant(Tensor::new(&[1, 1], vec![ex.target_yield])?);
    let loss = mse_loss(&mut tape, y, target)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    Ok((value, vars.iter().map(|v| tape.grad(*v).cloned()).collect()))
}

/// Batch MSE gradient: per-example tapes, summed in batch order.
pub fn batch_gradient(
    params: &MttParams,
    batch: &[&TriExample],
    exec: Exec,
) -> Result<BatchGradient> {
    let parts = exec.map(batch, |ex| example_gradient(params, ex))?;
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; params.store.len()];
    for (l, g) in parts {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            let Some(gi) = gi else { continue };
            match acc {
                Some(a) => a.iter_mut().zip(gi.data()).for_each(|(x, y)| *x += y),
                None => *acc = Some(gi.into_data()),
            }
        }
    }
    let grads = grads
        .into_iter()
        .zip(params.store.tensors())
        .map(|(g, t)| {
            g.map(|mut v| {
                v.iter_mut().for_each(|x| *x /= n);
                Tensor::new(t.shape(), v)
            })
            .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchGradient {
        loss: loss / n,
        grads,
    })
}

/// Normalized-space predictions, in input order.
pub fn predict_all(params: &MttParams, examples: &[&TriExample], exec: Exec) -> Result<Vec<f64>> {
    exec.map(examples, |ex| params.predict(ex))
}

/// MSE in normalized space over `examples`.
pub fn dataset_mse(params: &MttParams, examples: &[&TriExample], exec: Exec) -> Result<f64> {
    let pred = predict_all(params, examples, exec)?;
    let truth: Vec<f64> = examples.iter().map(|e| e.target_yield).collect();
    super::loss::mse(&pred, &truth)
}
