use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::gemm;
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Fully connected layer `activation(W·x + b)` with `W: out×in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias has {} entries, weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self { weights, bias, activation })
    }

    pub fn zeros(out: usize, inp: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(out, inp),
            bias: vec![0.0; out],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weights.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v = self.activation.apply(*v + b);
        }
        Ok(y)
    }

    /// Batched forward. Returns `(pre_activation, output)`, both `batch×out`.
    pub(crate) fn forward_batch(&self, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let mut z = vec![0.0; batch * out];
        for row in z.chunks_exact_mut(out) {
            row.copy_from_slice(&self.bias);
        }
        gemm::affine_nt(batch, inp, out, x, inp, self.weights.as_slice(), &mut z, true);
        let mut y = z.clone();
        self.activation.apply_in_place(&mut y);
        (z, y)
    }

    /// Batched backward. `dy` is the gradient w.r.t. the layer output;
    /// accumulates into `grad` and returns the gradient w.r.t. the input.
    pub(crate) fn backward_batch(
        &self,
        x: &[f64],
        z: &[f64],
        y: &[f64],
        dy: &[f64],
        batch: usize,
        grad: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let dz: Vec<f64> = if self.activation == Activation::Identity {
            dy.to_vec()
        } else {
            dy.iter()
                .zip(z.iter().zip(y))
                .map(|(d, (zz, yy))| d * self.activation.derivative(*zz, *yy))
                .collect()
        };
        gemm::accumulate_weight_grad(batch, out, inp, &dz, x, inp, grad.weights.as_mut_slice());
        gemm::accumulate_bias_grad(batch, out, &dz, &mut grad.bias);
        need_input_grad.then(|| {
            let mut dx = vec![0.0; batch * inp];
            gemm::backprop_input(batch, out, inp, &dz, self.weights.as_slice(), &mut dx, false);
            dx
        })
    }
}
