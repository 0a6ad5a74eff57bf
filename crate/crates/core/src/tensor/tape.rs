use super::{matmul_a_bt, matmul_at_b, matmul_raw, transpose_raw, Mask, Tensor};
use crate::error::{Error, Result};

/// Additive score applied to masked positions before the softmax.
const MASK_FILL: f64 = -1e30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LeakyRelu(Var, f64),
    LayerNorm { input: Var, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Wengert list of recorded operations.
///
/// Nodes are appended in execution order, so the list is topologically sorted
/// by construction. `backward` may run once; afterwards the tape only serves
/// values and gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by `backward`; `None` when `v` does not influence the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulRow(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Scale(a, _)
            | Op::Square(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SliceRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Softmax(a)
            | Op::LeakyRelu(a, _)
            | Op::LayerNorm { input: a, .. } => self.requires_grad(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(Error::Dimension {
                op,
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Checks that `b` holds exactly one row matching the last axis of `a`.
    fn row_broadcastable(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.len() != ta.cols() || tb.rows() != 1 {
            return Err(Error::Dimension {
                op,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let c = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(&[m, n], c)?, Op::MatMul(a, b), "matmul")
    }

    /// Elementwise sum of equal shapes, or `a + b` with a single-row `b`
    /// broadcast across the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
            let shape = sa.to_vec();
            return self.push(Tensor::new(&shape, data)?, Op::Add(a, b), "add");
        }
        self.row_broadcastable(a, b, "add")?;
        let ta = self.value(a);
        let row = self.value(b).data();
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + row[i % n])
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(&shape, data)?, Op::AddRow(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Sub(a, b), "sub")
    }

    /// Elementwise product of equal shapes, or row-broadcast of a single-row `b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
            let shape = sa.to_vec();
            return self.push(Tensor::new(&shape, data)?, Op::Mul(a, b), "mul");
        }
        self.row_broadcastable(a, b, "mul")?;
        let ta = self.value(a);
        let row = self.value(b).data();
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * row[i % n])
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(&shape, data)?, Op::MulRow(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Scale(a, s), "scale")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * x).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, data)?, Op::Square(a), "square")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let data = transpose_raw(self.value(a).data(), m, n);
        self.push(Tensor::new(&[n, m], data)?, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Concatenates along the last axis; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Dimension {
            op: "concat",
            left: vec![],
            right: vec![],
        })?;
        let lead = self.value(first).shape()[..self.value(first).rank() - 1].to_vec();
        for p in &parts[1..] {
            let s = self.value(*p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Dimension {
                    op: "concat",
                    left: self.value(first).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        let rows = self.value(first).rows();
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        self.push(
            Tensor::new(&shape, data)?,
            Op::Concat(parts.to_vec()),
            "concat",
        )
    }

    /// Slices `start..end` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let outer = t.shape()[0];
        if start >= end || end > outer {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let inner = t.len() / outer;
        let data = t.data()[start * inner..end * inner].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        self.push(
            Tensor::new(&shape, data)?,
            Op::SliceRows(a, start),
            "slice_rows",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Row-wise softmax. Masked positions get an additive large negative score
    /// and are then set to exactly zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "softmax_rows")?;
        if let Some(mask) = mask {
            if mask.shape() != [m, n] {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    left: vec![m, n],
                    right: mask.shape().to_vec(),
                });
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let allowed = |j: usize| mask.is_none_or(|mk| mk.allowed()[r * n + j]);
            if !(0..n).any(allowed) {
                return Err(Error::FullyMasked { row: r });
            }
            let row = &x[r * n..(r + 1) * n];
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    if allowed(j) {
                        row[j]
                    } else {
                        row[j] + MASK_FILL
                    }
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * n..(r + 1) * n];
            for j in 0..n {
                o[j] = if allowed(j) {
                    (scores[j] - max).exp()
                } else {
                    0.0
                };
            }
            let total: f64 = o.iter().sum();
            o.iter_mut().for_each(|v| *v /= total);
        }
        self.push(Tensor::new(&[m, n], out)?, Op::Softmax(a), "softmax_rows")
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(&shape, data)?,
            Op::LeakyRelu(a, slope),
            "leaky_relu",
        )
    }

    /// Normalizes each row to zero mean and unit (population) variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let rows = t.rows();
        let mut out = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            out.extend(row.iter().map(|x| (x - mean) * is));
        }
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm { input: a, inv_std },
            "layer_norm_rows",
        )
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g.map(|g| Tensor::new(node.value.shape(), g).expect("grad shape"));
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.requires_grad(*a) {
                    send(*a, matmul_a_bt(g, tb.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    send(*b, matmul_at_b(ta.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRow(a, b) => {
                send(*a, g.to_vec());
                send(*b, column_sums(g, self.value(*b).len()));
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(tb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(ta).map(|(g, x)| g * x).collect());
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let n = tb.len();
                send(
                    *a,
                    g.iter().enumerate().map(|(j, g)| g * tb[j % n]).collect(),
                );
                let prod: Vec<f64> = g.iter().zip(ta).map(|(g, x)| g * x).collect();
                send(*b, column_sums(&prod, n));
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect()),
            Op::Square(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect());
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                send(*a, transpose_raw(g, m, n));
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let width = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let mut piece = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        piece.extend_from_slice(&g[r * width + offset..r * width + offset + w]);
                    }
                    send(*p, piece);
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let inner = src.len() / src.shape()[0];
                let mut full = vec![0.0; src.len()];
                full[start * inner..start * inner + g.len()].copy_from_slice(g);
                send(*a, full);
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..node.value.rows() {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        dx[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                send(*a, dx);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= 0.0 { *g } else { slope * g })
                        .collect(),
                );
            }
            Op::LayerNorm { input, inv_std } => {
                let xhat = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; xhat.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let xs = &xhat[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let mean_g = gs.iter().sum::<f64>() / n as f64;
                    let mean_gx = gs.iter().zip(xs).map(|(g, x)| g * x).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[r * n + j] = is * (gs[j] - mean_g - xs[j] * mean_gx);
                    }
                }
                send(*input, dx);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect()
}

fn column_sums(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (j, v) in g.iter().enumerate() {
        out[j % n] += v;
    }
    out
}
