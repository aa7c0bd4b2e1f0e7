use serde::{Deserialize, Serialize};

use super::head::{min_abs, HeadCache, RegressionHead};
use crate::nncore::{gemm, relu_derivative, relu_scalar, Matrix};

/// `h_t = relu(W_rec·h_{t−1} + W_x·x_t)` followed by the regression head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// `[U × C]`
    pub w_x: Matrix,
    /// `[U × U]`
    pub w_rec: Matrix,
    pub head: RegressionHead,
}

/// One step of the simple recurrent layer.
pub fn rnn_cell(params: &RnnParams, h_prev: &[f64], x: &[f64]) -> crate::Result<Vec<f64>> {
    let rec = params.w_rec.matvec(h_prev)?;
    let inp = params.w_x.matvec(x)?;
    Ok(rec.iter().zip(&inp).map(|(a, b)| relu_scalar(a + b)).collect())
}

pub(crate) struct RnnCache {
    /// Pre-activations per step, `W × [B × U]`.
    zs: Vec<Vec<f64>>,
    /// Hidden states including the zero initial state, `(W + 1) × [B × U]`.
    hs: Vec<Vec<f64>>,
    head: HeadCache,
}

impl RnnParams {
    pub fn hidden(&self) -> usize {
        self.w_rec.rows()
    }

    pub(crate) fn forward_batch(&self, x: &[f64], batch: usize, steps: usize) -> (Vec<f64>, RnnCache) {
        let (u, c) = (self.hidden(), self.w_x.cols());
        let row = steps * c;
        let mut hs = vec![vec![0.0; batch * u]];
        let mut zs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut z = vec![0.0; batch * u];
            gemm::affine_nt(batch, c, u, &x[t * c..], row, self.w_x.as_slice(), &mut z, false);
            gemm::affine_nt(batch, u, u, &hs[t], u, self.w_rec.as_slice(), &mut z, true);
            hs.push(z.iter().copied().map(relu_scalar).collect());
            zs.push(z);
        }
        let (y, head) = self.head.forward_batch(&hs[steps], batch);
        (y, RnnCache { zs, hs, head })
    }

    pub(crate) fn backward_batch(
        &self,
        x: &[f64],
        batch: usize,
        steps: usize,
        cache: &RnnCache,
        dy: &[f64],
        g: &mut RnnParams,
    ) {
        let (u, c) = (self.hidden(), self.w_x.cols());
        let row = steps * c;
        let mut dh = self.head.backward_batch(&cache.hs[steps], batch, &cache.head, dy, &mut g.head);
        for t in (0..steps).rev() {
            let dz: Vec<f64> = dh.iter().zip(&cache.zs[t]).map(|(d, z)| d * relu_derivative(*z)).collect();
            gemm::accumulate_weight_grad(batch, u, u, &dz, &cache.hs[t], u, g.w_rec.as_mut_slice());
            gemm::accumulate_weight_grad(batch, u, c, &dz, &x[t * c..], row, g.w_x.as_mut_slice());
            if t > 0 {
                gemm::backprop_input(batch, u, u, &dz, self.w_rec.as_slice(), &mut dh, false);
            }
        }
    }

    pub(crate) fn relu_margin(cache: &RnnCache) -> f64 {
        cache.zs.iter().map(|z| min_abs(z)).fold(RegressionHead::relu_margin(&cache.head), f64::min)
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.w_x.as_slice(), self.w_rec.as_slice()];
        v.extend(self.head.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.w_x.as_mut_slice(), self.w_rec.as_mut_slice()];
        v.extend(self.head.tensors_mut());
        v
    }
}
