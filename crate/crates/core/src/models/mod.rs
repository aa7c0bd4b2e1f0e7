//! The four force-regression architectures.
//!
//! Every model maps a window of `W` timesteps of `C` normalized EMG channels
//! to `output_dim` normalized force values. Recurrent models start each
//! window from a zero state, run their cell over the window, and feed the
//! last hidden state through a dense ReLU head and a linear output layer.

mod checkpoint;
mod gru;
mod head;
mod lstm;
mod mlp;
mod rnn;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{flatten_for_mlp, Sample};
use crate::error::{Error, Result};
use crate::nncore::{glorot_uniform, Activation, DenseLayer, Matrix};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use gru::{gru_cell, gru_update, GruParams};
pub use head::RegressionHead;
pub use lstm::{lstm_cell, lstm_update, LstmGates, LstmParams, LSTM_GATES};
pub use mlp::MlpParams;
pub use rnn::{rnn_cell, RnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Rnn,
    Lstm,
    Gru,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Architecture::Mlp, Architecture::Rnn, Architecture::Lstm, Architecture::Gru];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Rnn => "rnn",
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != Architecture::Mlp
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown architecture '{s}' (expected one of mlp, rnn, lstm, gru)")))
    }
}

/// Nonlinearity used for the LSTM/GRU candidate and the LSTM cell squash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationMode {
    #[default]
    Relu,
    Tanh,
}

impl ActivationMode {
    pub fn candidate(self) -> Activation {
        match self {
            ActivationMode::Relu => Activation::Relu,
            ActivationMode::Tanh => Activation::Tanh,
        }
    }
}

/// Activation of the GRU update gate `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateGate {
    #[default]
    Sigmoid,
    /// ReLU, so `z` is unbounded above.
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    /// Cell state; `Some` only for the LSTM.
    pub c: Option<Vec<f64>>,
}

impl RecurrentState {
    pub fn zeros(units: usize, with_cell: bool) -> Self {
        Self {
            h: vec![0.0; units],
            c: with_cell.then(|| vec![0.0; units]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub window_len: usize,
    pub channels: usize,
    /// Recurrent hidden size `U`.
    pub hidden: usize,
    /// Width of the dense head after the recurrent layer.
    pub head: usize,
    pub mlp_layers: [usize; 2],
    pub output_dim: usize,
    #[serde(default)]
    pub activations: ActivationMode,
    #[serde(default)]
    pub update_gate: UpdateGate,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, window_len: usize) -> Self {
        Self {
            architecture,
            window_len,
            channels: crate::signals::EMG_CHANNELS,
            hidden: 50,
            head: 100,
            mlp_layers: [200, 80],
            output_dim: 1,
            activations: ActivationMode::Relu,
            update_gate: UpdateGate::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("window_len", self.window_len),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("head", self.head),
            ("mlp layer 1", self.mlp_layers[0]),
            ("mlp layer 2", self.mlp_layers[1]),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (u, c, o) = (self.hidden, self.channels, self.output_dim);
        let head = self.head * u + self.head + self.head * o + o;
        match self.architecture {
            Architecture::Mlp => {
                let [l1, l2] = self.mlp_layers;
                let inp = self.window_len * c;
                inp * l1 + l1 + l1 * l2 + l2 + l2 * o + o
            }
            Architecture::Rnn => u * c + u * u + head,
            Architecture::Lstm => 4 * (u * (u + c) + u) + head,
            Architecture::Gru => 3 * (u * (u + c) + u) + head,
        }
    }

    fn input_len(&self) -> usize {
        self.window_len * self.channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Network {
    Mlp(MlpParams),
    Rnn(RnnParams),
    Lstm(LstmParams),
    Gru(GruParams),
}

/// Flat access to every trainable tensor in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::shape(format!("expected {n} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    network: Network,
}

fn stacked(blocks: usize, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut data = Vec::with_capacity(blocks * rows * cols);
    for _ in 0..blocks {
        data.extend(glorot_uniform(rows, cols, rng).into_vec());
    }
    Matrix::new(blocks * rows, cols, data).expect("glorot draws are finite")
}

fn dense(out: usize, inp: usize, act: Activation, rng: Option<&mut ChaCha8Rng>) -> DenseLayer {
    match rng {
        Some(r) => DenseLayer {
            weights: glorot_uniform(out, inp, r),
            bias: vec![0.0; out],
            activation: act,
        },
        None => DenseLayer::zeros(out, inp, act),
    }
}

impl Model {
    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::build(config, None)
    }

    /// Glorot-uniform weights and zero biases drawn from a ChaCha8 stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, Some(&mut rng))
    }

    fn build(config: ModelConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        config.validate()?;
        let (u, c, o) = (config.hidden, config.channels, config.output_dim);
        let k = u + c;
        let mut mat = |blocks: usize, rows: usize, cols: usize| match rng.as_deref_mut() {
            Some(r) => stacked(blocks, rows, cols, r),
            None => Matrix::zeros(blocks * rows, cols),
        };
        let network = match config.architecture {
            Architecture::Mlp => {
                let [l1, l2] = config.mlp_layers;
                Network::Mlp(MlpParams {
                    layer1: dense(l1, config.input_len(), Activation::Relu, rng.as_deref_mut()),
                    layer2: dense(l2, l1, Activation::Relu, rng.as_deref_mut()),
                    out: dense(o, l2, Activation::Identity, rng.as_deref_mut()),
                })
            }
            Architecture::Rnn => {
                let w_x = mat(1, u, c);
                let w_rec = mat(1, u, u);
                Network::Rnn(RnnParams { w_x, w_rec, head: Self::head(&config, rng.as_deref_mut()) })
            }
            Architecture::Lstm => {
                let gates = mat(4, u, k);
                Network::Lstm(LstmParams {
                    gates,
                    gate_bias: vec![0.0; 4 * u],
                    head: Self::head(&config, rng.as_deref_mut()),
                })
            }
            Architecture::Gru => {
                let update_reset = mat(2, u, k);
                let candidate = mat(1, u, k);
                Network::Gru(GruParams {
                    update_reset,
                    update_reset_bias: vec![0.0; 2 * u],
                    candidate,
                    candidate_bias: vec![0.0; u],
                    head: Self::head(&config, rng.as_deref_mut()),
                })
            }
        };
        Ok(Self { config, network })
    }

    fn head(config: &ModelConfig, mut rng: Option<&mut ChaCha8Rng>) -> RegressionHead {
        RegressionHead {
            hidden: dense(config.head, config.hidden, Activation::Relu, rng.as_deref_mut()),
            out: dense(config.output_dim, config.head, Activation::Identity, rng),
        }
    }

    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(config: ModelConfig, network: Network) -> Result<Self> {
        let reference = Self::zeros(config.clone())?;
        let arch_ok = matches!(
            (&network, config.architecture),
            (Network::Mlp(_), Architecture::Mlp)
                | (Network::Rnn(_), Architecture::Rnn)
                | (Network::Lstm(_), Architecture::Lstm)
                | (Network::Gru(_), Architecture::Gru)
        );
        if !arch_ok {
            return Err(Error::shape(format!("parameters do not match architecture {}", config.architecture)));
        }
        let model = Self { config, network };
        let (want, got) = (reference.tensors(), model.tensors());
        for (i, (w, g)) in want.iter().zip(&got).enumerate() {
            if w.len() != g.len() {
                return Err(Error::shape(format!("tensor {i} has {} entries, expected {}", g.len(), w.len())));
            }
        }
        if !model.shapes_match(&reference) {
            return Err(Error::shape("tensor dimensions do not match the configuration"));
        }
        Ok(model)
    }

    fn shapes_match(&self, other: &Model) -> bool {
        fn d(l: &DenseLayer) -> (usize, usize, usize, Activation) {
            (l.weights.rows(), l.weights.cols(), l.bias.len(), l.activation)
        }
        fn m(x: &Matrix) -> (usize, usize) {
            (x.rows(), x.cols())
        }
        fn h(x: &RegressionHead) -> [(usize, usize, usize, Activation); 2] {
            [d(&x.hidden), d(&x.out)]
        }
        match (&self.network, &other.network) {
            (Network::Mlp(a), Network::Mlp(b)) => {
                d(&a.layer1) == d(&b.layer1) && d(&a.layer2) == d(&b.layer2) && d(&a.out) == d(&b.out)
            }
            (Network::Rnn(a), Network::Rnn(b)) => m(&a.w_x) == m(&b.w_x) && m(&a.w_rec) == m(&b.w_rec) && h(&a.head) == h(&b.head),
            (Network::Lstm(a), Network::Lstm(b)) => {
                m(&a.gates) == m(&b.gates) && a.gate_bias.len() == b.gate_bias.len() && h(&a.head) == h(&b.head)
            }
            (Network::Gru(a), Network::Gru(b)) => {
                m(&a.update_reset) == m(&b.update_reset)
                    && a.update_reset_bias.len() == b.update_reset_bias.len()
                    && m(&a.candidate) == m(&b.candidate)
                    && a.candidate_bias.len() == b.candidate_bias.len()
                    && h(&a.head) == h(&b.head)
            }
            _ => false,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// A zero-valued model with the same configuration, used as a gradient buffer.
    pub fn zeros_like(&self) -> Model {
        Self::zeros(self.config.clone()).expect("config already validated")
    }

    fn check_inputs(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(Error::invalid("batch must be non-empty"));
        }
        let want = batch * self.config.input_len();
        if inputs.len() != want {
            return Err(Error::shape(format!(
                "expected {batch} windows of {}×{} values ({want}), got {}",
                self.config.window_len,
                self.config.channels,
                inputs.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input value {i} is {}", inputs[i])));
        }
        Ok(())
    }

    fn check_sample(&self, s: &Sample<'_>) -> Result<()> {
        if s.window_len != self.config.window_len || s.channels != self.config.channels {
            return Err(Error::shape(format!(
                "sample window is {}×{}, model expects {}×{}",
                s.window_len, s.channels, self.config.window_len, self.config.channels
            )));
        }
        Ok(())
    }

    /// Batched prediction over `batch` row-major `W × C` windows laid end to end.
    /// Returns `batch × output_dim` values.
    pub fn predict_batch(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_inputs(inputs, batch)?;
        Ok(self.forward_cached(inputs, batch).0)
    }

    pub fn predict(&self, sample: &Sample<'_>) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        self.predict_batch(sample.input, 1)
    }

    fn forward_cached(&self, x: &[f64], batch: usize) -> (Vec<f64>, Cache) {
        let steps = self.config.window_len;
        let cfg = &self.config;
        match &self.network {
            Network::Mlp(p) => {
                let (y, c) = p.forward_batch(x, batch);
                (y, Cache::Mlp(c))
            }
            Network::Rnn(p) => {
                let (y, c) = p.forward_batch(x, batch, steps);
                (y, Cache::Rnn(c))
            }
            Network::Lstm(p) => {
                let (y, c) = p.forward_batch(x, batch, steps, cfg.activations);
                (y, Cache::Lstm(c))
            }
            Network::Gru(p) => {
                let (y, c) = p.forward_batch(x, batch, steps, cfg.activations, cfg.update_gate);
                (y, Cache::Gru(c))
            }
        }
    }

    /// Mean squared error over all `batch × output_dim` entries and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &[f64], targets: &[f64], batch: usize) -> Result<(f64, Model)> {
        self.check_inputs(inputs, batch)?;
        let n = batch * self.config.output_dim;
        if targets.len() != n {
            return Err(Error::shape(format!("expected {n} targets, got {}", targets.len())));
        }
        let (y, cache) = self.forward_cached(inputs, batch);
        let loss = y.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {loss}")));
        }
        let dy: Vec<f64> = y.iter().zip(targets).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        let mut g = self.zeros_like();
        let steps = self.config.window_len;
        let cfg = &self.config;
        match (&self.network, &mut g.network, &cache) {
            (Network::Mlp(p), Network::Mlp(gp), Cache::Mlp(c)) => p.backward_batch(inputs, batch, c, &dy, gp),
            (Network::Rnn(p), Network::Rnn(gp), Cache::Rnn(c)) => p.backward_batch(inputs, batch, steps, c, &dy, gp),
            (Network::Lstm(p), Network::Lstm(gp), Cache::Lstm(c)) => {
                p.backward_batch(batch, steps, cfg.activations, c, &dy, gp)
            }
            (Network::Gru(p), Network::Gru(gp), Cache::Gru(c)) => {
                p.backward_batch(batch, steps, cfg.activations, cfg.update_gate, c, &dy, gp)
            }
            _ => unreachable!("gradient buffer mirrors the model"),
        }
        Ok((loss, g))
    }

    /// Smallest `|pre-activation|` over every ReLU (and every other point
    /// where the model is not differentiable) reached by these inputs.
    pub fn relu_margin(&self, inputs: &[f64], batch: usize) -> Result<f64> {
        self.check_inputs(inputs, batch)?;
        let (_, cache) = self.forward_cached(inputs, batch);
        let cfg = &self.config;
        Ok(match cache {
            Cache::Mlp(c) => MlpParams::relu_margin(&c),
            Cache::Rnn(c) => RnnParams::relu_margin(&c),
            Cache::Lstm(c) => LstmParams::relu_margin(&c, cfg.activations),
            Cache::Gru(c) => GruParams::relu_margin(&c, cfg.activations, cfg.update_gate),
        })
    }
}

enum Cache {
    Mlp(mlp::MlpCache),
    Rnn(rnn::RnnCache),
    Lstm(lstm::LstmCache),
    Gru(gru::GruCache),
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        match &self.network {
            Network::Mlp(p) => p.tensors(),
            Network::Rnn(p) => p.tensors(),
            Network::Lstm(p) => p.tensors(),
            Network::Gru(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.network {
            Network::Mlp(p) => p.tensors_mut(),
            Network::Rnn(p) => p.tensors_mut(),
            Network::Lstm(p) => p.tensors_mut(),
            Network::Gru(p) => p.tensors_mut(),
        }
    }
}

/// Single-sample forward pass built directly from the cell functions.
pub fn model_forward(model: &Model, sample: &Sample<'_>) -> Result<Vec<f64>> {
    model.check_sample(sample)?;
    let cfg = &model.config;
    let run_head = |head: &RegressionHead, h: &[f64]| head.out.forward(&head.hidden.forward(h)?);
    match &model.network {
        Network::Mlp(p) => {
            let x = flatten_for_mlp(sample);
            p.out.forward(&p.layer2.forward(&p.layer1.forward(&x)?)?)
        }
        Network::Rnn(p) => {
            let mut h = vec![0.0; cfg.hidden];
            for t in 0..sample.window_len {
                h = rnn_cell(p, &h, sample.timestep(t))?;
            }
            run_head(&p.head, &h)
        }
        Network::Lstm(p) => {
            let mut s = RecurrentState::zeros(cfg.hidden, true);
            for t in 0..sample.window_len {
                s = lstm_cell(p, &s, sample.timestep(t), cfg.activations)?;
            }
            run_head(&p.head, &s.h)
        }
        Network::Gru(p) => {
            let mut h = vec![0.0; cfg.hidden];
            for t in 0..sample.window_len {
                h = gru_cell(p, &h, sample.timestep(t), cfg.activations, cfg.update_gate)?;
            }
            run_head(&p.head, &h)
        }
    }
}

/// Batch loss and gradients for a slice of samples.
pub fn model_backward(model: &Model, samples: &[Sample<'_>]) -> Result<(Model, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("batch must be non-empty"));
    }
    let mut x = Vec::with_capacity(samples.len() * model.config.input_len());
    let mut t = Vec::with_capacity(samples.len() * model.config.output_dim);
    for s in samples {
        model.check_sample(s)?;
        if s.targets.len() != model.config.output_dim {
            return Err(Error::shape(format!(
                "sample has {} targets, model outputs {}",
                s.targets.len(),
                model.config.output_dim
            )));
        }
        x.extend_from_slice(s.input);
        t.extend_from_slice(s.targets);
    }
    let (loss, g) = model.loss_and_grad(&x, &t, samples.len())?;
    Ok((g, loss))
}
