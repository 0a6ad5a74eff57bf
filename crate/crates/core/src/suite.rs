//! Finite-difference gradient checks over every differentiable op and the
//! miniature model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fixtures::{random_example, PIPELINE_WIDTHS};
use crate::model::{
    apply_positional_encoding, decoder_forward, encoder_forward, merge_forward, mtt_forward,
    multi_head_attention, scaled_dot_product_attention, LayerOptions, ModelConfig, MttParams,
    PositionalEncodingTable,
};
use crate::pipeline::Timeline;
use crate::tensor::{finite_difference_check, Mask, Tape, Tensor, Var, DEFAULT_FD_EPS};
use crate::train::{mse_loss, InitSpec};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Probe = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// Values bounded away from zero so kinks and degenerate norms stay out of reach.
fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Scalar `Σ y ⊙ w` with fixed random `w`, so every output coordinate matters.
fn weighted_sum(t: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = t.constant(w.clone().reshaped(&shape)?);
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn op_probe<F>(rng: &mut ChaCha8Rng, out_len: usize, f: F) -> Probe
where
    F: Fn(&mut Tape, Var) -> Result<Var> + 'static,
{
    let w = random_tensor(rng, &[out_len]);
    Box::new(move |t, x| {
        let y = f(t, x)?;
        weighted_sum(t, y, &w)
    })
}

fn model_checks(seed: u64) -> Result<Vec<(String, Tensor, Probe)>> {
    let params = MttParams::new(
        ModelConfig::miniature(PIPELINE_WIDTHS),
        InitSpec {
            seed,
            ..Default::default()
        },
    )?;
    let ex = random_example(&params.config, 2, seed);
    let flat = Tensor::vector(params.store.flatten())?;
    let mut out: Vec<(String, Tensor, Probe)> = Vec::new();

    let p = params.clone();
    let e = ex.clone();
    out.push((
        "mtt_forward (all parameters, MSE)".into(),
        flat.clone(),
        Box::new(move |t, x| {
            let vars = p.bind_flat(t, x)?;
            let y = mtt_forward(t, &p, &vars, &e)?;
            let target = t.constant(Tensor::new(&[1, 1], vec![e.target_yield])?);
            mse_loss(t, y, target)
        }),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let d = params.config.settings.d_model;
    let w = random_tensor(&mut rng, &[3 * d]);
    let p = params.clone();
    let x_present = Tensor::new(&[3, 13], ex.present.values.clone())?;
    out.push((
        "encoder_forward (input)".into(),
        x_present.clone(),
        Box::new(move |t, x| {
            let vars = p.bind(t, false);
            let tl = Timeline::Present;
            let y = encoder_forward(
                t,
                x,
                p.branch(tl),
                &vars,
                p.positional(tl),
                LayerOptions::of(&p),
            )?;
            weighted_sum(t, y, &w)
        }),
    ));

    let w = random_tensor(&mut rng, &[d]);
    let p = params.clone();
    let memory = random_tensor(&mut rng, &[3, d]);
    out.push((
        "decoder_forward (memory)".into(),
        memory,
        Box::new(move |t, m| {
            let vars = p.bind(t, false);
            let tl = Timeline::Past;
            let y = decoder_forward(
                t,
                m,
                p.branch(tl),
                &vars,
                p.positional(tl),
                LayerOptions::of(&p),
            )?;
            weighted_sum(t, y, &w)
        }),
    ));

    let w = random_tensor(&mut rng, &[3 * d]);
    let p = params.clone();
    out.push((
        "multi_head_attention (input)".into(),
        random_tensor(&mut rng, &[3, d]),
        Box::new(move |t, x| {
            let vars = p.bind(t, false);
            let ap = &p.branch(Timeline::Present).encoder[0].attention;
            let y = multi_head_attention(t, x, x, ap, &vars, Some(&Mask::causal(3)))?;
            weighted_sum(t, y, &w)
        }),
    ));

    let p = params.clone();
    let others = [
        random_tensor(&mut rng, &[1, d]),
        random_tensor(&mut rng, &[1, d]),
    ];
    out.push((
        "merge_forward (summary)".into(),
        random_tensor(&mut rng, &[1, d]),
        Box::new(move |t, a| {
            let vars = p.bind(t, false);
            let b = t.constant(others[0].clone());
            let c = t.constant(others[1].clone());
            let y = merge_forward(t, [a, b, c], &p.merge, &vars)?;
            t.sum(y)
        }),
    ));
    Ok(out)
}

/// Every check, in a fixed order.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let b = random_tensor(r, &[4, 2]);
    let a = random_tensor(r, &[2, 3]);
    let c34 = random_tensor(r, &[3, 4]);
    let row = random_tensor(r, &[1, 4]);
    let k = random_tensor(r, &[4, 2]);
    let v = random_tensor(r, &[4, 3]);
    let extra = random_tensor(r, &[3, 2]);
    let table = PositionalEncodingTable::new(8, 4)?;

    let mut checks: Vec<(String, Tensor, Probe)> = Vec::new();
    let mut add = |name: &str, x: Tensor, p: Probe| checks.push((name.to_string(), x, p));

    let bb = b.clone();
    add(
        "matmul (left)",
        random_tensor(r, &[3, 4]),
        op_probe(r, 6, move |t, x| {
            let c = t.constant(bb.clone());
            t.matmul(x, c)
        }),
    );
    let aa = a.clone();
    add(
        "matmul (right)",
        random_tensor(r, &[3, 4]),
        op_probe(r, 8, move |t, x| {
            let c = t.constant(aa.clone());
            t.matmul(c, x)
        }),
    );
    let cc = c34.clone();
    add(
        "add",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, move |t, x| {
            let c = t.constant(cc.clone());
            t.add(x, c)
        }),
    );
    let cc = c34.clone();
    add(
        "add (row broadcast)",
        row.clone(),
        op_probe(r, 12, move |t, x| {
            let c = t.constant(cc.clone());
            t.add(c, x)
        }),
    );
    let cc = c34.clone();
    add(
        "sub",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, move |t, x| {
            let c = t.constant(cc.clone());
            let y = t.sub(c, x)?;
            t.sub(y, x)
        }),
    );
    let cc = c34.clone();
    add(
        "mul",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, move |t, x| {
            let c = t.constant(cc.clone());
            let y = t.mul(x, c)?;
            t.mul(y, x)
        }),
    );
    let cc = c34.clone();
    add(
        "mul (row broadcast)",
        row,
        op_probe(r, 12, move |t, x| {
            let c = t.constant(cc.clone());
            t.mul(c, x)
        }),
    );
    add(
        "scale",
        random_tensor(r, &[2, 3]),
        op_probe(r, 6, |t, x| t.scale(x, -2.5)),
    );
    add(
        "square",
        random_tensor(r, &[2, 3]),
        op_probe(r, 6, |t, x| t.square(x)),
    );
    add(
        "transpose",
        random_tensor(r, &[2, 3]),
        op_probe(r, 6, |t, x| t.transpose(x)),
    );
    add(
        "reshape",
        random_tensor(r, &[2, 3]),
        op_probe(r, 6, |t, x| t.reshape(x, &[3, 2])),
    );
    let ee = extra.clone();
    add(
        "concat",
        random_tensor(r, &[3, 4]),
        op_probe(r, 30, move |t, x| {
            let c = t.constant(ee.clone());
            t.concat(&[c, x, x])
        }),
    );
    add(
        "slice_rows",
        random_tensor(r, &[4, 3]),
        op_probe(r, 6, |t, x| t.slice_rows(x, 1, 3)),
    );
    add(
        "sum",
        random_tensor(r, &[2, 3]),
        Box::new(|t, x| {
            let s = t.square(x)?;
            t.sum(s)
        }),
    );
    add(
        "mean",
        random_tensor(r, &[2, 3]),
        Box::new(|t, x| {
            let s = t.square(x)?;
            t.mean(s)
        }),
    );
    add(
        "softmax_rows",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, |t, x| t.softmax_rows(x, None)),
    );
    add(
        "softmax_rows (causal mask)",
        random_tensor(r, &[4, 4]),
        op_probe(r, 16, |t, x| t.softmax_rows(x, Some(&Mask::causal(4)))),
    );
    add(
        "leaky_relu",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, |t, x| t.leaky_relu(x, 0.01)),
    );
    add(
        "layer_norm_rows",
        random_tensor(r, &[3, 4]),
        op_probe(r, 12, |t, x| t.layer_norm_rows(x, 1e-9)),
    );
    let target = random_tensor(r, &[3, 4]);
    add(
        "mse_loss",
        random_tensor(r, &[3, 4]),
        Box::new(move |t, x| {
            let c = t.constant(target.clone());
            mse_loss(t, x, c)
        }),
    );
    add(
        "positional_encoding",
        random_tensor(r, &[5, 4]),
        op_probe(r, 20, move |t, x| apply_positional_encoding(t, x, &table)),
    );
    let (kk, vv) = (k.clone(), v.clone());
    add(
        "scaled_dot_product_attention (Q)",
        random_tensor(r, &[3, 2]),
        op_probe(r, 9, move |t, q| {
            let k = t.constant(kk.clone());
            let v = t.constant(vv.clone());
            scaled_dot_product_attention(t, q, k, v, None)
        }),
    );
    let q = random_tensor(r, &[3, 2]);
    let vv = v.clone();
    add(
        "scaled_dot_product_attention (K)",
        k.clone(),
        op_probe(r, 9, move |t, k| {
            let q = t.constant(q.clone());
            let v = t.constant(vv.clone());
            scaled_dot_product_attention(t, q, k, v, None)
        }),
    );
    let q = random_tensor(r, &[4, 2]);
    let kk = k;
    add(
        "scaled_dot_product_attention (V, masked)",
        v,
        op_probe(r, 12, move |t, v| {
            let q = t.constant(q.clone());
            let k = t.constant(kk.clone());
            scaled_dot_product_attention(t, q, k, v, Some(&Mask::causal(4)))
        }),
    );

    checks.extend(model_checks(seed)?);

    checks
        .into_iter()
        .map(|(name, x, probe)| {
            let err = finite_difference_check(probe, &x, DEFAULT_FD_EPS)?;
            Ok(CheckResult {
                name,
                max_rel_error: err,
                passed: err < GRADIENT_TOLERANCE,
            })
        })
        .collect()
}
