use serde::{Deserialize, Serialize};

use super::head::{min_abs, HeadCache, RegressionHead};
use super::{ActivationMode, UpdateGate};
use crate::nncore::{gemm, sigmoid_scalar, Activation, Matrix};

/// GRU layer. `update_reset` stacks `[W_z; W_r]` (each `U × (U + C)`) acting
/// on `[h_{n−1}, x_n]`; `candidate` is `W` acting on `[r ⊙ h_{n−1}, x_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub update_reset: Matrix,
    pub update_reset_bias: Vec<f64>,
    pub candidate: Matrix,
    pub candidate_bias: Vec<f64>,
    pub head: RegressionHead,
}

/// `h_n = (1 − z) ⊙ h_{n−1} + z ⊙ h̃`.
pub fn gru_update(z: &[f64], h_prev: &[f64], h_tilde: &[f64]) -> Vec<f64> {
    (0..h_prev.len()).map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * h_tilde[k]).collect()
}

/// Activation of the update gate `z`.
pub(crate) fn update_activation(gate: UpdateGate) -> Activation {
    match gate {
        UpdateGate::Sigmoid => Activation::Sigmoid,
        UpdateGate::Relu => Activation::Relu,
    }
}

/// One GRU step.
pub fn gru_cell(
    params: &GruParams,
    h_prev: &[f64],
    x: &[f64],
    mode: ActivationMode,
    gate: UpdateGate,
) -> crate::Result<Vec<f64>> {
    let u = params.hidden();
    let v = [h_prev, x].concat();
    let mut a = params.update_reset.matvec(&v)?;
    for (av, b) in a.iter_mut().zip(&params.update_reset_bias) {
        *av += b;
    }
    let zact = update_activation(gate);
    let z: Vec<f64> = a[..u].iter().map(|v| zact.apply(*v)).collect();
    let r: Vec<f64> = a[u..].iter().copied().map(sigmoid_scalar).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut ah = params.candidate.matvec(&[rh.as_slice(), x].concat())?;
    let act = mode.candidate();
    for (av, b) in ah.iter_mut().zip(&params.candidate_bias) {
        *av = act.apply(*av + b);
    }
    Ok(gru_update(&z, h_prev, &ah))
}

pub(crate) struct GruCache {
    vs: Vec<Vec<f64>>,
    us: Vec<Vec<f64>>,
    /// `[a_z, a_r]` pre-activations, `W × [B × 2U]`.
    pre_zr: Vec<Vec<f64>>,
    /// `[z, r]`, `W × [B × 2U]`.
    zr: Vec<Vec<f64>>,
    pre_h: Vec<Vec<f64>>,
    h_tilde: Vec<Vec<f64>>,
    /// Hidden states including the zero initial state.
    hs: Vec<Vec<f64>>,
    hidden: usize,
    head: HeadCache,
}

impl GruParams {
    pub fn hidden(&self) -> usize {
        self.candidate.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.candidate.cols() - self.hidden()
    }

    pub(crate) fn forward_batch(
        &self,
        x: &[f64],
        batch: usize,
        steps: usize,
        mode: ActivationMode,
        gate: UpdateGate,
    ) -> (Vec<f64>, GruCache) {
        let (u, c) = (self.hidden(), self.input_dim());
        let k = u + c;
        let (act, zact) = (mode.candidate(), update_activation(gate));
        let mut cache = GruCache {
            vs: Vec::with_capacity(steps),
            us: Vec::with_capacity(steps),
            pre_zr: Vec::with_capacity(steps),
            zr: Vec::with_capacity(steps),
            pre_h: Vec::with_capacity(steps),
            h_tilde: Vec::with_capacity(steps),
            hs: vec![vec![0.0; batch * u]],
            hidden: u,
            head: RegressionHead::empty_cache(),
        };
        for t in 0..steps {
            let h_prev = &cache.hs[t];
            let mut v = vec![0.0; batch * k];
            for b in 0..batch {
                v[b * k..b * k + u].copy_from_slice(&h_prev[b * u..(b + 1) * u]);
                let xs = b * steps * c + t * c;
                v[b * k + u..(b + 1) * k].copy_from_slice(&x[xs..xs + c]);
            }
            let mut a = vec![0.0; batch * 2 * u];
            for row in a.chunks_exact_mut(2 * u) {
                row.copy_from_slice(&self.update_reset_bias);
            }
            gemm::affine_nt(batch, k, 2 * u, &v, k, self.update_reset.as_slice(), &mut a, true);
            let mut zr = a.clone();
            for row in zr.chunks_exact_mut(2 * u) {
                for (j, g) in row.iter_mut().enumerate() {
                    *g = if j < u { zact.apply(*g) } else { sigmoid_scalar(*g) };
                }
            }
            let mut uin = v.clone();
            for b in 0..batch {
                for j in 0..u {
                    uin[b * k + j] = zr[b * 2 * u + u + j] * h_prev[b * u + j];
                }
            }
            let mut ah = vec![0.0; batch * u];
            for row in ah.chunks_exact_mut(u) {
                row.copy_from_slice(&self.candidate_bias);
            }
            gemm::affine_nt(batch, k, u, &uin, k, self.candidate.as_slice(), &mut ah, true);
            let ht: Vec<f64> = ah.iter().map(|z| act.apply(*z)).collect();
            let mut h = vec![0.0; batch * u];
            for b in 0..batch {
                for j in 0..u {
                    let idx = b * u + j;
                    let z = zr[b * 2 * u + j];
                    h[idx] = (1.0 - z) * h_prev[idx] + z * ht[idx];
                }
            }
            cache.vs.push(v);
            cache.us.push(uin);
            cache.pre_zr.push(a);
            cache.zr.push(zr);
            cache.pre_h.push(ah);
            cache.h_tilde.push(ht);
            cache.hs.push(h);
        }
        let (y, head) = self.head.forward_batch(&cache.hs[steps], batch);
        cache.head = head;
        (y, cache)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_batch(
        &self,
        batch: usize,
        steps: usize,
        mode: ActivationMode,
        gate: UpdateGate,
        cache: &GruCache,
        dy: &[f64],
        g: &mut GruParams,
    ) {
        let (u, c) = (self.hidden(), self.input_dim());
        let k = u + c;
        let (act, zact) = (mode.candidate(), update_activation(gate));
        let mut dh = self.head.backward_batch(&cache.hs[steps], batch, &cache.head, dy, &mut g.head);
        let mut dah = vec![0.0; batch * u];
        let mut dazr = vec![0.0; batch * 2 * u];
        let mut du = vec![0.0; batch * k];
        let mut dv = vec![0.0; batch * k];
        for t in (0..steps).rev() {
            let (h_prev, zr, pre_zr) = (&cache.hs[t], &cache.zr[t], &cache.pre_zr[t]);
            let (ht, pre_h) = (&cache.h_tilde[t], &cache.pre_h[t]);
            let mut dh_prev = vec![0.0; batch * u];
            for b in 0..batch {
                for j in 0..u {
                    let idx = b * u + j;
                    let z = zr[b * 2 * u + j];
                    let d = dh[idx];
                    dazr[b * 2 * u + j] = d * (ht[idx] - h_prev[idx]) * zact.derivative(pre_zr[b * 2 * u + j], z);
                    dah[idx] = d * z * act.derivative(pre_h[idx], ht[idx]);
                    dh_prev[idx] = d * (1.0 - z);
                }
            }
            gemm::accumulate_weight_grad(batch, u, k, &dah, &cache.us[t], k, g.candidate.as_mut_slice());
            gemm::accumulate_bias_grad(batch, u, &dah, &mut g.candidate_bias);
            gemm::backprop_input(batch, u, k, &dah, self.candidate.as_slice(), &mut du, false);
            for b in 0..batch {
                for j in 0..u {
                    let idx = b * u + j;
                    let r = zr[b * 2 * u + u + j];
                    let drh = du[b * k + j];
                    dazr[b * 2 * u + u + j] = drh * h_prev[idx] * r * (1.0 - r);
                    dh_prev[idx] += drh * r;
                }
            }
            gemm::accumulate_weight_grad(batch, 2 * u, k, &dazr, &cache.vs[t], k, g.update_reset.as_mut_slice());
            gemm::accumulate_bias_grad(batch, 2 * u, &dazr, &mut g.update_reset_bias);
            if t > 0 {
                gemm::backprop_input(batch, 2 * u, k, &dazr, self.update_reset.as_slice(), &mut dv, false);
                for b in 0..batch {
                    for j in 0..u {
                        dh_prev[b * u + j] += dv[b * k + j];
                    }
                }
                dh = dh_prev;
            }
        }
    }

    pub(crate) fn relu_margin(cache: &GruCache, mode: ActivationMode, gate: UpdateGate) -> f64 {
        let mut m = RegressionHead::relu_margin(&cache.head);
        if mode == ActivationMode::Relu {
            m = cache.pre_h.iter().map(|a| min_abs(a)).fold(m, f64::min);
        }
        if gate == UpdateGate::Relu {
            let u = cache.hidden;
            for a in &cache.pre_zr {
                for row in a.chunks_exact(2 * u) {
                    m = m.min(min_abs(&row[..u]));
                }
            }
        }
        m
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            self.update_reset.as_slice(),
            &self.update_reset_bias,
            self.candidate.as_slice(),
            &self.candidate_bias,
        ];
        v.extend(self.head.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.update_reset.as_mut_slice(),
            &mut self.update_reset_bias,
            self.candidate.as_mut_slice(),
            &mut self.candidate_bias,
        ];
        v.extend(self.head.tensors_mut());
        v
    }
}
