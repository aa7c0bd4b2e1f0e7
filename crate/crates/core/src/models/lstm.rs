use serde::{Deserialize, Serialize};

use super::head::{min_abs, HeadCache, RegressionHead};
use super::{ActivationMode, RecurrentState};
use crate::nncore::{gemm, sigmoid_scalar, Activation, Matrix};

/// Gate order inside [`LstmParams::gates`].
pub const LSTM_GATES: [&str; 4] = ["f", "i", "c", "o"];

/// LSTM layer over `[h_{n−1}, x_n]` with the four gate matrices stacked
/// row-wise as `[W_f; W_i; W_c; W_o]`, each `U × (U + C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub gates: Matrix,
    pub gate_bias: Vec<f64>,
    pub head: RegressionHead,
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGates {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

/// `C_n = f ⊙ C_{n−1} + i ⊙ C̃`, `h_n = o ⊙ squash(C_n)`.
pub fn lstm_update(gates: &LstmGates, c_prev: &[f64], squash: Activation) -> RecurrentState {
    let c: Vec<f64> = (0..c_prev.len())
        .map(|k| gates.forget[k] * c_prev[k] + gates.input[k] * gates.candidate[k])
        .collect();
    let h = c.iter().zip(&gates.output).map(|(cv, o)| o * squash.apply(*cv)).collect();
    RecurrentState { h, c: Some(c) }
}

/// One step: sigmoid gates `f, i, o`, candidate and squash from `mode`.
pub fn lstm_cell(params: &LstmParams, state: &RecurrentState, x: &[f64], mode: ActivationMode) -> crate::Result<RecurrentState> {
    let u = params.hidden();
    let v = [state.h.as_slice(), x].concat();
    let mut a = params.gates.matvec(&v)?;
    for (av, b) in a.iter_mut().zip(&params.gate_bias) {
        *av += b;
    }
    let act = mode.candidate();
    let gates = LstmGates {
        forget: a[..u].iter().copied().map(sigmoid_scalar).collect(),
        input: a[u..2 * u].iter().copied().map(sigmoid_scalar).collect(),
        candidate: a[2 * u..3 * u].iter().map(|z| act.apply(*z)).collect(),
        output: a[3 * u..].iter().copied().map(sigmoid_scalar).collect(),
    };
    let zeros = vec![0.0; u];
    let c_prev = state.c.as_deref().unwrap_or(&zeros);
    Ok(lstm_update(&gates, c_prev, act))
}

pub(crate) struct LstmCache {
    /// `[h_{t−1}, x_t]` per step, `W × [B × (U + C)]`.
    vs: Vec<Vec<f64>>,
    /// Gate pre-activations, `W × [B × 4U]`.
    pre: Vec<Vec<f64>>,
    /// Gate activations, `W × [B × 4U]`.
    gates: Vec<Vec<f64>>,
    /// Cell states including the zero initial state, `(W + 1) × [B × U]`.
    cs: Vec<Vec<f64>>,
    /// `squash(C_t)`, `W × [B × U]`.
    squashed: Vec<Vec<f64>>,
    h_last: Vec<f64>,
    hidden: usize,
    head: HeadCache,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.gates.rows() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.gates.cols() - self.hidden()
    }

    /// Rows of gate `g` (0 = f, 1 = i, 2 = c, 3 = o) as a `U × (U + C)` block.
    pub fn gate_block(&self, g: usize) -> &[f64] {
        let (u, k) = (self.hidden(), self.gates.cols());
        &self.gates.as_slice()[g * u * k..(g + 1) * u * k]
    }

    pub(crate) fn forward_batch(&self, x: &[f64], batch: usize, steps: usize, mode: ActivationMode) -> (Vec<f64>, LstmCache) {
        let (u, c) = (self.hidden(), self.input_dim());
        let k = u + c;
        let act = mode.candidate();
        let mut vs = Vec::with_capacity(steps);
        let mut pres = Vec::with_capacity(steps);
        let mut gates = Vec::with_capacity(steps);
        let mut cs = vec![vec![0.0; batch * u]];
        let mut squashed = Vec::with_capacity(steps);
        let mut h = vec![0.0; batch * u];
        for t in 0..steps {
            let mut v = vec![0.0; batch * k];
            for b in 0..batch {
                v[b * k..b * k + u].copy_from_slice(&h[b * u..(b + 1) * u]);
                let xs = b * steps * c + t * c;
                v[b * k + u..(b + 1) * k].copy_from_slice(&x[xs..xs + c]);
            }
            let mut a = vec![0.0; batch * 4 * u];
            for row in a.chunks_exact_mut(4 * u) {
                row.copy_from_slice(&self.gate_bias);
            }
            gemm::affine_nt(batch, k, 4 * u, &v, k, self.gates.as_slice(), &mut a, true);
            let mut gv = a.clone();
            for row in gv.chunks_exact_mut(4 * u) {
                for (j, g) in row.iter_mut().enumerate() {
                    *g = if (2 * u..3 * u).contains(&j) { act.apply(*g) } else { sigmoid_scalar(*g) };
                }
            }
            let c_prev = &cs[t];
            let mut c_new = vec![0.0; batch * u];
            let mut sq = vec![0.0; batch * u];
            for b in 0..batch {
                let g = &gv[b * 4 * u..(b + 1) * 4 * u];
                for j in 0..u {
                    let idx = b * u + j;
                    let cv = g[j] * c_prev[idx] + g[u + j] * g[2 * u + j];
                    c_new[idx] = cv;
                    sq[idx] = act.apply(cv);
                    h[idx] = g[3 * u + j] * sq[idx];
                }
            }
            vs.push(v);
            pres.push(a);
            gates.push(gv);
            cs.push(c_new);
            squashed.push(sq);
        }
        let (y, head) = self.head.forward_batch(&h, batch);
        let cache = LstmCache {
            vs,
            pre: pres,
            gates,
            cs,
            squashed,
            h_last: h,
            hidden: u,
            head,
        };
        (y, cache)
    }

    pub(crate) fn backward_batch(
        &self,
        batch: usize,
        steps: usize,
        mode: ActivationMode,
        cache: &LstmCache,
        dy: &[f64],
        g: &mut LstmParams,
    ) {
        let (u, c) = (self.hidden(), self.input_dim());
        let k = u + c;
        let act = mode.candidate();
        let mut dh = self.head.backward_batch(&cache.h_last, batch, &cache.head, dy, &mut g.head);
        let mut dc = vec![0.0; batch * u];
        let mut da = vec![0.0; batch * 4 * u];
        let mut dv = vec![0.0; batch * k];
        for t in (0..steps).rev() {
            let (gv, pre, sq) = (&cache.gates[t], &cache.pre[t], &cache.squashed[t]);
            let (c_prev, c_cur) = (&cache.cs[t], &cache.cs[t + 1]);
            for b in 0..batch {
                let gr = &gv[b * 4 * u..(b + 1) * 4 * u];
                let pr = &pre[b * 4 * u..(b + 1) * 4 * u];
                let dar = &mut da[b * 4 * u..(b + 1) * 4 * u];
                for j in 0..u {
                    let idx = b * u + j;
                    let (f, i, ct, o) = (gr[j], gr[u + j], gr[2 * u + j], gr[3 * u + j]);
                    let d_o = dh[idx] * sq[idx];
                    let dcell = dc[idx] + dh[idx] * o * act.derivative(c_cur[idx], sq[idx]);
                    dar[j] = dcell * c_prev[idx] * f * (1.0 - f);
                    dar[u + j] = dcell * ct * i * (1.0 - i);
                    dar[2 * u + j] = dcell * i * act.derivative(pr[2 * u + j], ct);
                    dar[3 * u + j] = d_o * o * (1.0 - o);
                    dc[idx] = dcell * f;
                }
            }
            gemm::accumulate_weight_grad(batch, 4 * u, k, &da, &cache.vs[t], k, g.gates.as_mut_slice());
            gemm::accumulate_bias_grad(batch, 4 * u, &da, &mut g.gate_bias);
            if t > 0 {
                gemm::backprop_input(batch, 4 * u, k, &da, self.gates.as_slice(), &mut dv, false);
                for b in 0..batch {
                    dh[b * u..(b + 1) * u].copy_from_slice(&dv[b * k..b * k + u]);
                }
            }
        }
    }

    pub(crate) fn relu_margin(cache: &LstmCache, mode: ActivationMode) -> f64 {
        let mut m = RegressionHead::relu_margin(&cache.head);
        if mode == ActivationMode::Relu {
            let u = cache.hidden;
            for a in &cache.pre {
                for row in a.chunks_exact(4 * u) {
                    m = m.min(min_abs(&row[2 * u..3 * u]));
                }
            }
            // Cell entries that are identically zero (empty candidate history)
            // stay zero under any small perturbation, so they are not kinks.
            for cs in &cache.cs[1..] {
                m = cs.iter().filter(|v| **v != 0.0).fold(m, |m, v| m.min(v.abs()));
            }
        }
        m
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.gates.as_slice(), &self.gate_bias];
        v.extend(self.head.tensors());
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.gates.as_mut_slice(), &mut self.gate_bias];
        v.extend(self.head.tensors_mut());
        v
    }
}
