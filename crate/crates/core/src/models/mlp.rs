use serde::{Deserialize, Serialize};

use super::head::min_abs;
use crate::nncore::DenseLayer;

/// Two ReLU hidden layers over the flattened window, then a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
    pub out: DenseLayer,
}

pub(crate) struct MlpCache {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
}

impl MlpParams {
    pub(crate) fn forward_batch(&self, x: &[f64], batch: usize) -> (Vec<f64>, MlpCache) {
        let (z1, a1) = self.layer1.forward_batch(x, batch);
        let (z2, a2) = self.layer2.forward_batch(&a1, batch);
        let (z3, y) = self.out.forward_batch(&a2, batch);
        (y, MlpCache { z1, a1, z2, a2, z3 })
    }

    pub(crate) fn backward_batch(&self, x: &[f64], batch: usize, c: &MlpCache, dy: &[f64], g: &mut MlpParams) {
        let da2 = self
            .out
            .backward_batch(&c.a2, &c.z3, &c.z3, dy, batch, &mut g.out, true)
            .expect("input grad requested");
        let da1 = self
            .layer2
            .backward_batch(&c.a1, &c.z2, &c.a2, &da2, batch, &mut g.layer2, true)
            .expect("input grad requested");
        self.layer1.backward_batch(x, &c.z1, &c.a1, &da1, batch, &mut g.layer1, false);
    }

    pub(crate) fn relu_margin(c: &MlpCache) -> f64 {
        min_abs(&c.z1).min(min_abs(&c.z2))
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.layer1.weights.as_slice(),
            &self.layer1.bias,
            self.layer2.weights.as_slice(),
            &self.layer2.bias,
            self.out.weights.as_slice(),
            &self.out.bias,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.layer1.weights.as_mut_slice(),
            &mut self.layer1.bias,
            self.layer2.weights.as_mut_slice(),
            &mut self.layer2.bias,
            self.out.weights.as_mut_slice(),
            &mut self.out.bias,
        ]
    }
}
