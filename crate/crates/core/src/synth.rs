//! Synthetic grip recordings with a known EMG → force relationship.
//!
//! Per subject `s` with peak force `P_s ~ U[30, 70]` N:
//!
//! * `d(t) ∈ [0, 1]`: normalized force envelope. Rest, raised-cosine ramp
//!   up, hold at a random level, ramp down, repeated; a 3–12 Hz tremor
//!   component is added and the result is clamped to `[0, 1]`.
//! * `F(t) = P_s · d(t)`.
//! * `e(t) = (k ∗ d)(t)`: EMG amplitude envelope, the force envelope through
//!   the critically damped causal kernel `k(τ) ∝ τ·exp(−τ/τ_k)` with unit DC
//!   gain.
//! * `EMG_c(t) = (P_s / 50) · g_{s,c} · (ε + e(t)) · n_c(t) + σ·w_c(t)
//!   + A·sin(2π·50·t + φ_c) + drift_c(t)`, where `n_c` is unit-variance
//!   Gaussian noise band-limited to 30–80 Hz, `w_c` is white noise, the
//!   50 Hz term mimics mains pickup, and `drift_c` is a slow baseline wander.
//!
//! Force is recoverable from the EMG amplitude over the recent past, which a
//! single EMG sample cannot reveal, and its future is only partly predictable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{apply_filter, design_bandpass, Recording, EMG_CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Envelope kernel time constant `τ_k` in seconds.
    pub kernel_s: f64,
    /// Tremor standard deviation relative to the current force level.
    pub tremor: f64,
    /// Residual carrier amplitude at rest, `ε`.
    pub rest_activity: f64,
    /// Standard deviation of the white measurement noise `σ`.
    pub white_noise: f64,
    /// Amplitude `A` of the 50 Hz component.
    pub powerline: f64,
    /// Peak amplitude of the baseline drift.
    pub drift: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subjects: 3,
            duration_s: 90.0,
            sample_rate_hz: 200.0,
            kernel_s: 0.01,
            tremor: 0.1,
            rest_activity: 0.05,
            white_noise: 0.01,
            powerline: 0.05,
            drift: 0.1,
        }
    }
}

/// Nominal per-channel electrode gains; each subject perturbs them by ±5 %.
const CHANNEL_GAINS: [f64; EMG_CHANNELS] = [1.0, 0.8, 0.6, 1.2, 0.9, 0.5, 0.7, 1.1];

/// Peak-force range of the generated subjects, in newtons.
pub const PEAK_FORCE_RANGE: (f64, f64) = (30.0, 70.0);

/// Values are written with this resolution.
const QUANTUM: f64 = 1e-4;

fn quantize(v: f64) -> f64 {
    let q = (v / QUANTUM).round() * QUANTUM;
    if q == 0.0 { 0.0 } else { q }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::invalid("at least one subject is required"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid(format!("duration must be positive, got {}", self.duration_s)));
        }
        if !(self.sample_rate_hz >= 200.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate must be at least 200 Hz for the 30–80 Hz carrier, got {}",
                self.sample_rate_hz
            )));
        }
        let nonneg = [self.tremor, self.rest_activity, self.white_noise, self.powerline, self.drift];
        if !(self.kernel_s > 0.0) || nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("noise and twitch parameters must be non-negative (kernel positive)"));
        }
        Ok(())
    }
}

/// Press/release drive in `[0, 1]`.
fn envelope(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut d = Vec::with_capacity(n);
    let mut level = 0.0;
    while d.len() < n {
        let rest = (rng.random_range(0.4..1.5) * fs) as usize;
        let up = (rng.random_range(0.3..0.9) * fs) as usize + 1;
        let hold = (rng.random_range(0.4..2.0) * fs) as usize;
        let down = (rng.random_range(0.3..0.9) * fs) as usize + 1;
        let peak: f64 = rng.random_range(0.25..1.0);
        d.extend(std::iter::repeat_n(level, rest));
        let start = level;
        for k in 0..up {
            let w = 0.5 - 0.5 * (std::f64::consts::PI * (k + 1) as f64 / up as f64).cos();
            d.push(start + (peak - start) * w);
        }
        d.extend(std::iter::repeat_n(peak, hold));
        // Occasionally release only partially before the next press.
        level = if rng.random_bool(0.3) { rng.random_range(0.0..0.3 * peak) } else { 0.0 };
        for k in 0..down {
            let w = 0.5 - 0.5 * (std::f64::consts::PI * (k + 1) as f64 / down as f64).cos();
            d.push(peak + (level - peak) * w);
        }
    }
    d.truncate(n);
    d
}

/// Causal convolution with the unit-gain kernel `τ·exp(−τ/τ_k)`, realized as
/// two cascaded one-pole smoothers.
fn smooth(d: &[f64], tau_s: f64, fs: f64) -> Vec<f64> {
    let p = (-1.0 / (tau_s * fs)).exp();
    let (mut s1, mut s2) = (0.0, 0.0);
    d.iter()
        .map(|&x| {
            s1 = p * s1 + (1.0 - p) * x;
            s2 = p * s2 + (1.0 - p) * s1;
            s2
        })
        .collect()
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

fn subject(cfg: &SynthConfig, index: usize) -> Result<Recording> {
    let fs = cfg.sample_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;
    if n == 0 {
        return Err(Error::invalid("duration is shorter than one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let peak = rng.random_range(PEAK_FORCE_RANGE.0..PEAK_FORCE_RANGE.1);
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let mut d = envelope(n, fs, &mut rng);
    let tremor_band = design_bandpass(3.0, 12.0, fs, 2)?;
    let raw: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
    let tremor = unit_rms(apply_filter(&tremor_band, &raw)?);
    for (v, t) in d.iter_mut().zip(&tremor) {
        *v = (*v * (1.0 + cfg.tremor * t)).clamp(0.0, 1.0);
    }
    let force: Vec<f64> = d.iter().map(|v| quantize(peak * v)).collect();
    let e = smooth(&d, cfg.kernel_s, fs);

    let band = design_bandpass(30.0, 80.0, fs, 4)?;
    let white = Normal::new(0.0, cfg.white_noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let scale = peak / 50.0;
    let mut emg = Vec::with_capacity(EMG_CHANNELS);
    for nominal in CHANNEL_GAINS.iter() {
        let gain = nominal * rng.random_range(0.95..1.05);
        let raw: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng)).collect();
        let carrier = unit_rms(apply_filter(&band, &raw)?);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let drift_hz = rng.random_range(0.1..0.4);
        let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let ch = (0..n)
            .map(|k| {
                let t = k as f64 / fs;
                let muscle = scale * gain * (cfg.rest_activity + e[k]) * carrier[k];
                let mains = cfg.powerline * (std::f64::consts::TAU * 50.0 * t + phase).sin();
                let wander = cfg.drift * (std::f64::consts::TAU * drift_hz * t + drift_phase).sin();
                let noise = if cfg.white_noise > 0.0 { white.sample(&mut rng) } else { 0.0 };
                quantize(muscle + mains + wander + noise)
            })
            .collect();
        emg.push(ch);
    }
    Recording::new(format!("subject{:02}", index + 1), fs, emg, force)
}

/// One recording per subject, fully determined by `cfg`.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    (0..cfg.subjects).map(|s| subject(cfg, s)).collect()
}

/// Peak force drawn for subject `index` (0-based).
pub fn subject_peak_force(cfg: &SynthConfig, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    rng.random_range(PEAK_FORCE_RANGE.0..PEAK_FORCE_RANGE.1)
}
