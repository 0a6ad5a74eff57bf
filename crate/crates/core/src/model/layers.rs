use super::params::{
    AttentionParams, BranchParams, DecoderLayerParams, EncoderLayerParams, FeedForwardParams,
    MergeHead, MttParams, NormParams,
};
use super::positional::{apply_positional_encoding, PositionalEncodingTable};
use crate::error::{Error, Result};
use crate::pipeline::{Timeline, TriExample};
use crate::tensor::{Mask, Tape, Tensor, Var};

/// `softmax(QKᵀ/√d_k, mask) · V`
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Mask>,
) -> Result<Var> {
    let d_k = tape.value(k).cols();
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled, mask)?;
    tape.matmul(weights, v)
}

/// Per-head projections, scaled dot-product attention, concat, output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    p: &AttentionParams,
    vars: &[Var],
    mask: Option<&Mask>,
) -> Result<Var> {
    let mut heads = Vec::with_capacity(p.heads.len());
    for h in &p.heads {
        let q = tape.matmul(x_q, vars[h.query.index()])?;
        let k = tape.matmul(x_kv, vars[h.key.index()])?;
        let v = tape.matmul(x_kv, vars[h.value.index()])?;
        heads.push(scaled_dot_product_attention(tape, q, k, v, mask)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat(&heads)?
    };
    let out = tape.matmul(cat, vars[p.out.index()])?;
    tape.add(out, vars[p.out_bias.index()])
}

fn add_and_norm(
    tape: &mut Tape,
    x: Var,
    residual: Var,
    p: &NormParams,
    vars: &[Var],
    eps: f64,
) -> Result<Var> {
    let sum = tape.add(x, residual)?;
    let normed = tape.layer_norm_rows(sum, eps)?;
    let scaled = tape.mul(normed, vars[p.gain.index()])?;
    tape.add(scaled, vars[p.bias.index()])
}

fn feed_forward(
    tape: &mut Tape,
    x: Var,
    p: &FeedForwardParams,
    vars: &[Var],
    slope: f64,
) -> Result<Var> {
    let h = tape.matmul(x, vars[p.w1.index()])?;
    let h = tape.add(h, vars[p.b1.index()])?;
    let h = tape.leaky_relu(h, slope)?;
    let o = tape.matmul(h, vars[p.w2.index()])?;
    tape.add(o, vars[p.b2.index()])
}

/// Shared layer settings threaded through a branch.
#[derive(Clone, Copy, Debug)]
pub struct LayerOptions {
    pub leaky_slope: f64,
    pub eps: f64,
}

impl LayerOptions {
    pub fn of(params: &MttParams) -> Self {
        LayerOptions {
            leaky_slope: params.config.settings.leaky_slope,
            eps: params.config.settings.layer_norm_eps,
        }
    }
}

fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    p: &EncoderLayerParams,
    vars: &[Var],
    opt: LayerOptions,
) -> Result<Var> {
    let attn = multi_head_attention(tape, x, x, &p.attention, vars, None)?;
    let x = add_and_norm(tape, attn, x, &p.norm1, vars, opt.eps)?;
    let ff = feed_forward(tape, x, &p.ff, vars, opt.leaky_slope)?;
    add_and_norm(tape, ff, x, &p.norm2, vars, opt.eps)
}

/// Input projection, positional encoding, then the post-norm encoder stack.
pub fn encoder_forward(
    tape: &mut Tape,
    x: Var,
    branch: &BranchParams,
    vars: &[Var],
    table: &PositionalEncodingTable,
    opt: LayerOptions,
) -> Result<Var> {
    let proj_shape = tape.value(vars[branch.input.index()]).shape().to_vec();
    let in_shape = tape.value(x).shape().to_vec();
    if in_shape.len() != 2 || in_shape[1] != proj_shape[0] {
        return Err(Error::Dimension {
            op: "encoder_forward",
            left: in_shape,
            right: proj_shape,
        });
    }
    let h = tape.matmul(x, vars[branch.input.index()])?;
    let h = tape.add(h, vars[branch.input_bias.index()])?;
    let mut h = apply_positional_encoding(tape, h, table)?;
    for layer in &branch.encoder {
        h = encoder_layer(tape, h, layer, vars, opt)?;
    }
    Ok(h)
}

fn decoder_layer(
    tape: &mut Tape,
    x: Var,
    memory: Var,
    p: &DecoderLayerParams,
    vars: &[Var],
    opt: LayerOptions,
) -> Result<Var> {
    let len = tape.value(x).rows();
    let causal = Mask::causal(len);
    let attn = multi_head_attention(tape, x, x, &p.self_attention, vars, Some(&causal))?;
    let x = add_and_norm(tape, attn, x, &p.norm1, vars, opt.eps)?;
    let cross = multi_head_attention(tape, x, memory, &p.cross_attention, vars, None)?;
    let x = add_and_norm(tape, cross, x, &p.norm2, vars, opt.eps)?;
    let ff = feed_forward(tape, x, &p.ff, vars, opt.leaky_slope)?;
    add_and_norm(tape, ff, x, &p.norm3, vars, opt.eps)
}

/// Runs the learned query token through the decoder stack against `memory`,
/// giving the `1 × D` branch summary.
pub fn decoder_forward(
    tape: &mut Tape,
    memory: Var,
    branch: &BranchParams,
    vars: &[Var],
    table: &PositionalEncodingTable,
    opt: LayerOptions,
) -> Result<Var> {
    if tape.value(memory).rank() != 2 {
        return Err(Error::Dimension {
            op: "decoder_forward",
            left: tape.value(memory).shape().to_vec(),
            right: vec![],
        });
    }
    let mut x = apply_positional_encoding(tape, vars[branch.query.index()], table)?;
    for layer in &branch.decoder {
        x = decoder_layer(tape, x, memory, layer, vars, opt)?;
    }
    Ok(x)
}

/// `ŷ = a_t·W_t + a_n·W_n + a_f·W_f (+ bias)`, no output nonlinearity.
pub fn merge_forward(
    tape: &mut Tape,
    summaries: [Var; 3],
    head: &MergeHead,
    vars: &[Var],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (a, t) in summaries.into_iter().zip(Timeline::ALL) {
        let term = tape.matmul(a, vars[head.weight(t).index()])?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let y = total.expect("three terms");
    match head.bias {
        Some(b) => tape.add(y, vars[b.index()]),
        None => Ok(y),
    }
}

/// Encoder then decoder for one timeline.
pub fn branch_forward(
    tape: &mut Tape,
    params: &MttParams,
    vars: &[Var],
    timeline: Timeline,
    input: Var,
) -> Result<Var> {
    let opt = LayerOptions::of(params);
    let branch = params.branch(timeline);
    let table = params.positional(timeline);
    let memory = encoder_forward(tape, input, branch, vars, table, opt)?;
    decoder_forward(tape, memory, branch, vars, table, opt)
}

fn window_tensor(params: &MttParams, ex: &TriExample, t: Timeline) -> Result<Tensor> {
    let w = ex.window(t);
    let expected = params.config.branches[t as usize];
    if w.steps != expected.steps || w.width != expected.features {
        return Err(Error::Dimension {
            op: "mtt_forward",
            left: vec![w.steps, w.width],
            right: vec![expected.steps, expected.features],
        });
    }
    Tensor::new(&[w.steps, w.width], w.values.clone())
}

/// Full forward pass for a normalized example; returns a `1 × 1` prediction
/// in normalized target space.
pub fn mtt_forward(
    tape: &mut Tape,
    params: &MttParams,
    vars: &[Var],
    example: &TriExample,
) -> Result<Var> {
    let mut summaries = [None; 3];
    for t in Timeline::ALL {
        let x = tape.constant(window_tensor(params, example, t)?);
        summaries[t as usize] = Some(branch_forward(tape, params, vars, t, x)?);
    }
    merge_forward(
        tape,
        summaries.map(|s| s.expect("set")),
        &params.merge,
        vars,
    )
}

impl MttParams {
    /// Inference without gradient bookkeeping.
    pub fn predict(&self, example: &TriExample) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let y = mtt_forward(&mut tape, self, &vars, example)?;
        Ok(tape.value(y).data()[0])
    }

    /// Branch summaries `[a_past, a_present, a_premonition]`.
    pub fn summaries(&self, example: &TriExample) -> Result<[Tensor; 3]> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut out = Vec::with_capacity(3);
        for t in Timeline::ALL {
            let x = tape.constant(window_tensor(self, example, t)?);
            let s = branch_forward(&mut tape, self, &vars, t, x)?;
            out.push(tape.value(s).clone());
        }
        Ok(out.try_into().expect("three summaries"))
    }
}
