use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array64;
use crate::diff::{Real, Tape, Var};
use crate::error::{Error, Result};

/// Fully connected predictor with tanh hidden units and a linear output.
/// Parameters are laid out per layer as `W` (fan_in × fan_out, row-major)
/// followed by `b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self { input_dim, hidden, output_dim }
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Splits `φ` into per-layer `(W, b)`.
    pub fn unflatten(&self, phi: &Array64) -> Result<Vec<(Array64, Array64)>> {
        if phi.len() != self.param_count() {
            return Err(Error::shape("predictor parameters", &[self.param_count()], phi.shape()));
        }
        let data = phi.data();
        let mut off = 0;
        let mut out = Vec::new();
        for (i, o) in self.layer_dims() {
            let w = Array64::from_parts(vec![i, o], data[off..off + i * o].to_vec());
            off += i * o;
            let b = Array64::from_parts(vec![o], data[off..off + o].to_vec());
            off += o;
            out.push((w, b));
        }
        Ok(out)
    }

    pub fn flatten(&self, layers: &[(Array64, Array64)]) -> Result<Array64> {
        let dims = self.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "predictor has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for ((w, b), (i, o)) in layers.iter().zip(dims) {
            if w.shape() != [i, o] {
                return Err(Error::shape("layer weights", &[i, o], w.shape()));
            }
            if b.shape() != [o] {
                return Err(Error::shape("layer bias", &[o], b.shape()));
            }
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        Array64::vector(out)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Array64 {
        let mut out = Vec::with_capacity(self.param_count());
        for (i, o) in self.layer_dims() {
            let lim = (6.0 / (i + o) as f64).sqrt();
            out.extend((0..i * o).map(|_| rng.random_range(-lim..lim)));
            out.extend(std::iter::repeat_n(0.0, o));
        }
        Array64::from_parts(vec![out.len()], out)
    }

    /// Records the forward pass for a batch `x` of shape `n × input_dim`.
    pub(crate) fn forward<T: Real>(&self, tape: &mut Tape<T>, phi: Var, x: Var) -> Var {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let mut off = 0;
        let mut a = x;
        for (l, (i, o)) in dims.into_iter().enumerate() {
            let w = tape.slice(phi, off, &[i, o]);
            off += i * o;
            let b = tape.slice(phi, off, &[o]);
            off += o;
            let pre = tape.matmul(a, w);
            let pre = tape.add_row(pre, b);
            a = if l == last { pre } else { tape.tanh(pre) };
        }
        a
    }

    /// Plain `f64` forward pass, returning `n × output_dim` outputs.
    pub fn predict(&self, phi: &Array64, x: &Array64) -> Result<Array64> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::shape("predictor inputs", &[x.rows(), self.input_dim], x.shape()));
        }
        let layers = self.unflatten(phi)?;
        let last = layers.len() - 1;
        let mut a = x.as_dmatrix();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = &a * w.as_dmatrix();
            for mut row in z.row_iter_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += b.data()[j];
                }
            }
            a = if l == last { z } else { z.map(f64::tanh) };
        }
        Array64::checked(vec![a.nrows(), a.ncols()], Array64::from_dmatrix(&a).into_data(), "predict")
    }
}
