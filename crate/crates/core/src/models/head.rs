use serde::{Deserialize, Serialize};

use crate::nncore::DenseLayer;

/// Dense ReLU layer followed by the identity output layer; shared by the
/// three recurrent architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

pub(crate) struct HeadCache {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
}

impl RegressionHead {
    pub(crate) fn empty_cache() -> HeadCache {
        HeadCache {
            z1: Vec::new(),
            a1: Vec::new(),
            z2: Vec::new(),
        }
    }

    pub(crate) fn forward_batch(&self, h: &[f64], batch: usize) -> (Vec<f64>, HeadCache) {
        let (z1, a1) = self.hidden.forward_batch(h, batch);
        let (z2, y) = self.out.forward_batch(&a1, batch);
        (y, HeadCache { z1, a1, z2 })
    }

    pub(crate) fn backward_batch(
        &self,
        h: &[f64],
        batch: usize,
        cache: &HeadCache,
        dy: &[f64],
        grad: &mut RegressionHead,
    ) -> Vec<f64> {
        let da1 = self
            .out
            .backward_batch(&cache.a1, &cache.z2, &cache.z2, dy, batch, &mut grad.out, true)
            .expect("input grad requested");
        self.hidden
            .backward_batch(h, &cache.z1, &cache.a1, &da1, batch, &mut grad.hidden, true)
            .expect("input grad requested")
    }

    pub(crate) fn relu_margin(cache: &HeadCache) -> f64 {
        min_abs(&cache.z1)
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [
            self.hidden.weights.as_slice(),
            &self.hidden.bias,
            self.out.weights.as_slice(),
            &self.out.bias,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.hidden.weights.as_mut_slice(),
            &mut self.hidden.bias,
            self.out.weights.as_mut_slice(),
            &mut self.out.bias,
        ]
    }
}

pub(crate) fn min_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}
