//! Mini-batch Adam on mean squared error, deterministic under a seed.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SplitPolicy, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{ActivationMode, Architecture, Model, ModelConfig, Parameters, UpdateGate};

/// Losses above this count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Predictions per forward call when scoring a dataset.
const SCORING_BATCH: usize = 256;

/// Mean of squared differences.
pub fn mse_loss(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse of empty vectors"));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Fails unless the moments mirror a parameter vector of length `n`.
    pub fn check_shape(&self, n: usize) -> Result<()> {
        if self.m.len() != n || self.v.len() != n {
            return Err(Error::shape(format!(
                "optimizer state has {}/{} moments for {n} parameters",
                self.m.len(),
                self.v.len()
            )));
        }
        Ok(())
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    state.check_shape(params.len())?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub window_len: usize,
    pub horizon: usize,
    pub multi_horizon: bool,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_fraction: f64,
    pub split_policy: SplitPolicy,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub activations: ActivationMode,
    pub update_gate: UpdateGate,
    /// Return the epoch with the lowest eval loss instead of the last one.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            architecture: Architecture::Gru,
            window_len: 20,
            horizon: 1,
            multi_horizon: false,
            hidden: 50,
            epochs: 60,
            batch_size: 32,
            eval_fraction: 0.15,
            split_policy: SplitPolicy::Tail,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            activations: ActivationMode::Relu,
            update_gate: UpdateGate::Sigmoid,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.window_len == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(Error::invalid("window length, horizon and hidden size must be at least 1"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::invalid(format!("eval fraction must lie in (0, 1), got {}", self.eval_fraction)));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate and epsilon must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn model_config(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            channels,
            hidden: self.hidden,
            output_dim: if self.multi_horizon { self.horizon } else { 1 },
            activations: self.activations,
            update_gate: self.update_gate,
            ..ModelConfig::new(self.architecture, self.window_len)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Empty when trained without an eval set.
    pub eval_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub learning_rate: f64,
    pub seed: u64,
    /// 1-based epoch of the returned parameters.
    pub selected_epoch: usize,
    pub final_checkpoint: Option<String>,
}

impl TrainHistory {
    pub fn epochs_completed(&self) -> usize {
        self.train_loss.len()
    }
}

/// Predictions for every sample of `ds`, in sample order.
pub fn predict_dataset(model: &Model, ds: &WindowedDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.len() * model.config().output_dim);
    let mut buf = Vec::new();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(SCORING_BATCH) {
        ds.gather_inputs(chunk, &mut buf);
        out.extend(model.predict_batch(&buf, chunk.len())?);
    }
    Ok(out)
}

/// Mean squared error of `model` over all targets of `ds`.
pub fn dataset_loss(model: &Model, ds: &WindowedDataset) -> Result<f64> {
    mse_loss(&predict_dataset(model, ds)?, &ds.flat_targets())
}

fn check_divergence(epoch: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

pub fn train(train_ds: &WindowedDataset, eval_ds: Option<&WindowedDataset>, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with(train_ds, eval_ds, config, |_, _, _| Ok(()))
}

/// Trains a freshly initialized model. `on_epoch(epoch, model, history)` runs
/// after every epoch with 1-based `epoch`.
pub fn train_with<F>(
    train_ds: &WindowedDataset,
    eval_ds: Option<&WindowedDataset>,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Model, TrainHistory)>
where
    F: FnMut(usize, &Model, &TrainHistory) -> Result<()>,
{
    config.validate()?;
    if train_ds.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let model_cfg = config.model_config(train_ds.channels());
    if train_ds.window_len() != config.window_len || train_ds.output_dim() != model_cfg.output_dim {
        return Err(Error::shape(format!(
            "dataset has W={} and {} outputs, config expects W={} and {}",
            train_ds.window_len(),
            train_ds.output_dim(),
            config.window_len,
            model_cfg.output_dim
        )));
    }
    if let Some(e) = eval_ds {
        if e.is_empty() || e.window_len() != train_ds.window_len() || e.output_dim() != train_ds.output_dim() {
            return Err(Error::shape("eval set is empty or shaped differently from the training set"));
        }
    }
    let mut model = Model::init(model_cfg, config.seed)?;
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len());
    let adam_cfg = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(config.epochs),
        eval_loss: Vec::new(),
        epoch_seconds: Vec::with_capacity(config.epochs),
        learning_rate: config.learning_rate,
        seed: config.seed,
        selected_epoch: 0,
        final_checkpoint: None,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let (mut xb, mut tb) = (Vec::new(), Vec::new());
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            train_ds.gather_inputs(batch, &mut xb);
            train_ds.gather_targets(batch, &mut tb);
            let (loss, grad) = match model.loss_and_grad(&xb, &tb, batch.len()) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            check_divergence(epoch, loss)?;
            weighted += loss * batch.len() as f64;
            adam_step(&mut params, &grad.to_flat(), &mut adam, &adam_cfg)
                .map_err(|_| Error::Divergence { epoch, loss: f64::NAN })?;
            model.set_flat(&params)?;
        }
        let epoch_loss = weighted / train_ds.len() as f64;
        check_divergence(epoch, epoch_loss)?;
        history.train_loss.push(epoch_loss);
        if let Some(e) = eval_ds {
            let l = dataset_loss(&model, e)?;
            check_divergence(epoch, l)?;
            history.eval_loss.push(l);
            if config.keep_best && best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, params.clone()));
                history.selected_epoch = epoch;
            }
        }
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}/{}: train {epoch_loss:.6e}{}",
            config.epochs,
            history.eval_loss.last().map(|l| format!(", eval {l:.6e}")).unwrap_or_default()
        );
        on_epoch(epoch, &model, &history)?;
    }
    match best {
        Some((_, p)) => model.set_flat(&p)?,
        None => history.selected_epoch = config.epochs,
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::dataset::{make_windows, split_train_eval};
    use crate::signals::{Segment, Table};

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse_loss(&[0.1, 0.3], &[0.2, 0.1]).unwrap() - 0.025).abs() <= 1e-12);
        assert!(matches!(mse_loss(&[0.0], &[0.0, 1.0]), Err(Error::Shape(_))));
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = vec![0.5, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.m, vec![0.0; 2]);
        assert_eq!(s.v, vec![0.0; 2]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_matches_formula() {
        let cfg = AdamConfig::default();
        let g = [1.0, -3.0, 2e-6, 0.25];
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m̂ = g and v̂ = g² at t = 1.
            let want = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((pi - want).abs() <= 1e-15, "{pi} vs {want}");
        }
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_direction_is_scale_invariant() {
        let cfg = AdamConfig { epsilon: 1e-12, ..AdamConfig::default() };
        let g = [0.3, -0.7, 1.1];
        let run = |scale: f64| {
            let mut p = vec![0.0; 3];
            let mut s = AdamState::new(3);
            for k in 0..5 {
                let gk: Vec<f64> = g.iter().map(|v| v * scale * (1.0 + 0.1 * k as f64)).collect();
                adam_step(&mut p, &gk, &mut s, &cfg).unwrap();
            }
            p
        };
        let (a, b) = (run(1.0), run(50.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 5.0 * cfg.learning_rate * cfg.epsilon / 0.3, "{x} vs {y}");
        }
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut s = AdamState::new(2);
        let cfg = AdamConfig::default();
        assert!(matches!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, &cfg), Err(Error::Shape(_))));
        assert!(matches!(adam_step(&mut [0.0; 2], &[f64::NAN, 0.0], &mut s, &cfg), Err(Error::NonFinite(_))));
        assert!(matches!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, &cfg), Err(Error::Shape(_))));
        assert_eq!(s.t, 0);
    }

    /// Table whose force at row `r` is a fixed linear map of the mean of the
    /// EMG window ending `h` rows earlier, plus Gaussian noise.
    fn linear_task(rows: usize, w: usize, h: usize, seed: u64) -> (Table, [f64; 9]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef = [0.25, -0.15, 0.1, 0.3, -0.2, 0.05, 0.15, -0.1, 0.45];
        let noise = Normal::new(0.0, 0.01).unwrap();
        let emg: Vec<[f64; 8]> = (0..rows).map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0))).collect();
        let mut data = Vec::with_capacity(rows * 9);
        for r in 0..rows {
            data.extend_from_slice(&emg[r]);
            let f = if r + 1 >= w + h {
                let lo = r + 1 - w - h;
                let mut v = coef[8];
                for c in 0..8 {
                    v += coef[c] * (lo..lo + w).map(|k| emg[k][c]).sum::<f64>() / w as f64;
                }
                v + noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push(f);
        }
        let seg = vec![Segment { id: "linear".into(), start: 0, len: rows }];
        (Table::new(9, 200.0, data, seg).unwrap(), coef)
    }

    /// Residual MSE of the ordinary least-squares fit on window means.
    fn least_squares_floor(ds: &WindowedDataset) -> f64 {
        let feats: Vec<[f64; 9]> = ds
            .iter()
            .map(|s| {
                let mut f = [0.0; 9];
                for t in 0..s.window_len {
                    for c in 0..8 {
                        f[c] += s.timestep(t)[c] / s.window_len as f64;
                    }
                }
                f[8] = 1.0;
                f
            })
            .collect();
        let y = ds.targets();
        let mut a = [[0.0; 10]; 9];
        for (f, yv) in feats.iter().zip(&y) {
            for i in 0..9 {
                for j in 0..9 {
                    a[i][j] += f[i] * f[j];
                }
                a[i][9] += f[i] * yv;
            }
        }
        for col in 0..9 {
            let piv = (col..9).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..9 {
                if r != col {
                    let k = a[r][col] / a[col][col];
                    for c in col..10 {
                        a[r][c] -= k * a[col][c];
                    }
                }
            }
        }
        let beta: Vec<f64> = (0..9).map(|i| a[i][9] / a[i][i]).collect();
        let pred: Vec<f64> = feats.iter().map(|f| f.iter().zip(&beta).map(|(x, b)| x * b).sum()).collect();
        mse_loss(&pred, &y).unwrap()
    }

    fn quick_config(arch: Architecture, w: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            architecture: arch,
            window_len: w,
            hidden: 8,
            epochs,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mlp_learns_linear_task() {
        let (table, _) = linear_task(2400, 5, 1, 3);
        let ds = make_windows(&table, 5, 1).unwrap();
        let (tr, ev) = split_train_eval(&ds, 0.15, 0, SplitPolicy::Tail).unwrap();
        let floor = least_squares_floor(&ev);
        assert!(floor < 2e-4, "noise floor {floor}");
        let (_, hist) = train(&tr, Some(&ev), &quick_config(Architecture::Mlp, 5, 60)).unwrap();
        let eval = *hist.eval_loss.last().unwrap();
        assert!(eval <= 5e-4, "eval mse {eval} (floor {floor})");
        assert!(hist.train_loss[59] * 10.0 <= hist.train_loss[0], "{:?}", hist.train_loss);
        assert_eq!(hist.epochs_completed(), 60);
        assert_eq!(hist.eval_loss.len(), 60);
        assert_eq!(hist.selected_epoch, 60);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (table, _) = linear_task(300, 4, 2, 5);
        let ds = make_windows(&table, 4, 2).unwrap();
        for arch in Architecture::ALL {
            let cfg = quick_config(arch, 4, 2);
            let (a, ha) = train(&ds, None, &cfg).unwrap();
            let (b, hb) = train(&ds, None, &cfg).unwrap();
            assert_eq!(a.to_flat(), b.to_flat(), "{arch}");
            assert_eq!(ha.train_loss, hb.train_loss);
            let (c, _) = train(&ds, None, &TrainConfig { seed: 8, ..cfg }).unwrap();
            assert_ne!(a.to_flat(), c.to_flat());
        }
    }

    #[test]
    fn epoch_loss_weights_ragged_batches() {
        let (table, _) = linear_task(60, 3, 1, 2);
        let ds = make_windows(&table, 3, 1).unwrap();
        // 57 windows → batches of 32 and 25; with lr tiny the parameters barely move,
        // so the epoch loss is the sample-weighted mean of the two batch losses.
        let cfg = TrainConfig { learning_rate: 1e-300, ..quick_config(Architecture::Rnn, 3, 1) };
        let (model, hist) = train(&ds, None, &cfg).unwrap();
        let full = dataset_loss(&model, &ds).unwrap();
        assert!((hist.train_loss[0] - full).abs() <= 1e-12 * full);
    }

    #[test]
    fn keep_best_selects_lowest_eval_epoch() {
        let (table, _) = linear_task(400, 4, 1, 9);
        let ds = make_windows(&table, 4, 1).unwrap();
        let (tr, ev) = split_train_eval(&ds, 0.2, 0, SplitPolicy::Tail).unwrap();
        let cfg = TrainConfig { keep_best: true, learning_rate: 0.01, ..quick_config(Architecture::Mlp, 4, 6) };
        let (model, hist) = train(&tr, Some(&ev), &cfg).unwrap();
        let best = hist.eval_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(hist.eval_loss[hist.selected_epoch - 1], best);
        assert_eq!(dataset_loss(&model, &ev).unwrap(), best);
    }

    #[test]
    fn divergence_is_reported() {
        let (table, _) = linear_task(200, 3, 1, 1);
        let ds = make_windows(&table, 3, 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e6, ..quick_config(Architecture::Rnn, 3, 30) };
        assert!(matches!(train(&ds, None, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (table, _) = linear_task(50, 3, 1, 1);
        let ds = make_windows(&table, 3, 1).unwrap();
        let base = quick_config(Architecture::Mlp, 3, 1);
        for bad in [
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { eval_fraction: 1.0, ..base.clone() },
            TrainConfig { learning_rate: -1.0, ..base.clone() },
            TrainConfig { beta2: 1.0, ..base.clone() },
        ] {
            assert!(matches!(train(&ds, None, &bad), Err(Error::InvalidArgument(_))), "{bad:?}");
        }
        let wrong_w = TrainConfig { window_len: 4, ..base };
        assert!(matches!(train(&ds, None, &wrong_w), Err(Error::Shape(_))));
    }

    #[test]
    fn defaults_match_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.eval_fraction), (60, 32, 0.15));
        assert_eq!((c.learning_rate, c.beta1, c.beta2, c.epsilon), (1e-3, 0.9, 0.999, 1e-8));
        let parsed: TrainConfig = toml::from_str("epochs = 5\narchitecture = \"lstm\"").unwrap();
        assert_eq!(parsed.epochs, 5);
        assert_eq!(parsed.architecture, Architecture::Lstm);
        assert_eq!(parsed.batch_size, 32);
        assert!(toml::from_str::<TrainConfig>("epoch = 5").is_err());
    }
}
