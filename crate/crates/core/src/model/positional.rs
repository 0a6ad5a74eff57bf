use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Precomputed sinusoidal positional encodings, `max_len × d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncodingTable {
    max_len: usize,
    d_model: usize,
    values: Vec<f64>,
}

impl PositionalEncodingTable {
    /// `PE[pos, 2i] = sin(pos / 10000^(2i/D))`, `PE[pos, 2i+1] = cos(pos / 10000^(2i/D))`.
    ///
    /// With odd `d_model` the last (sine) column has no cosine partner.
    pub fn new(max_len: usize, d_model: usize) -> Result<Self> {
        if max_len == 0 || d_model == 0 {
            return Err(Error::Config(format!(
                "positional encoding needs positive sizes, got {max_len}x{d_model}"
            )));
        }
        let mut values = vec![0.0; max_len * d_model];
        for pos in 0..max_len {
            for col in 0..d_model {
                let pair = (col / 2) as f64;
                let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
                values[pos * d_model + col] = if col % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                };
            }
        }
        Ok(PositionalEncodingTable {
            max_len,
            d_model,
            values,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First `len` rows as a tensor.
    pub fn rows(&self, len: usize) -> Result<Tensor> {
        if len > self.max_len {
            return Err(Error::Dimension {
                op: "positional_encoding",
                left: vec![len, self.d_model],
                right: vec![self.max_len, self.d_model],
            });
        }
        Tensor::new(
            &[len, self.d_model],
            self.values[..len * self.d_model].to_vec(),
        )
    }
}

/// `y[t] = x[t] + PE[t]`.
pub fn apply_positional_encoding(
    tape: &mut Tape,
    x: Var,
    table: &PositionalEncodingTable,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 2 || shape[1] != table.d_model() {
        return Err(Error::Dimension {
            op: "apply_positional_encoding",
            left: shape,
            right: vec![table.max_len(), table.d_model()],
        });
    }
    let pe = tape.constant(table.rows(shape[0])?);
    tape.add(x, pe)
}
