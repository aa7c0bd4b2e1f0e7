//! Butterworth band-pass/low-pass/high-pass and notch design as cascades of
//! second-order sections, plus a causal transposed direct-form II realization.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One biquad stage, `a0` normalized to 1:
/// `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn normalized(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
        }
    }

    /// Largest pole magnitude, i.e. the largest |root| of `z² + a1 z + a2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let r1 = (-self.a1 + disc) / 2.0;
        let r2 = (-self.a1 - disc) / 2.0;
        r1.norm().max(r2.norm())
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
}

impl FilterCoefficients {
    pub fn new(sections: Vec<Biquad>, sample_rate_hz: f64) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::invalid("filter needs at least one section"));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        let f = Self { sections, sample_rate_hz };
        if !f.is_stable() {
            return Err(Error::invalid("filter has a pole on or outside the unit circle"));
        }
        Ok(f)
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.pole_radius() < 1.0)
    }

    /// Complex frequency response `H(e^{jω})` at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    /// Cascade `self` followed by `other`.
    pub fn then(&self, other: &FilterCoefficients) -> Result<FilterCoefficients> {
        check_rate(self.sample_rate_hz, other.sample_rate_hz)?;
        let mut sections = self.sections.clone();
        sections.extend_from_slice(&other.sections);
        FilterCoefficients::new(sections, self.sample_rate_hz)
    }
}

pub(crate) fn check_rate(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
        return Err(Error::invalid(format!("sample-rate mismatch: {a} Hz vs {b} Hz")));
    }
    Ok(())
}

fn check_cutoff(name: &str, f: f64, fs: f64) -> Result<()> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::invalid(format!("sample rate must be positive, got {fs}")));
    }
    if !(f > 0.0 && f < fs / 2.0) {
        return Err(Error::invalid(format!(
            "{name} {f} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    Ok(())
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::invalid(format!("filter order must be even and positive, got {order}")));
    }
    Ok(())
}

/// Quality factors of the conjugate pole pairs of an even-order Butterworth prototype.
fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    (0..order / 2).map(move |k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin()))
}

#[derive(Clone, Copy)]
enum Edge {
    Low,
    High,
}

fn butterworth_sections(edge: Edge, cutoff: f64, fs: f64, order: usize) -> Vec<Biquad> {
    let w0 = 2.0 * PI * cutoff / fs;
    let (sin, cos) = w0.sin_cos();
    butterworth_qs(order)
        .map(|q| {
            let alpha = sin / (2.0 * q);
            let (a0, a1, a2) = (1.0 + alpha, -2.0 * cos, 1.0 - alpha);
            match edge {
                Edge::Low => Biquad::normalized((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0, a0, a1, a2),
                Edge::High => Biquad::normalized((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0, a0, a1, a2),
            }
        })
        .collect()
}

/// Butterworth low-pass of even `order`, bilinear transform prewarped at `cutoff_hz`.
pub fn design_lowpass(cutoff_hz: f64, fs_hz: f64, order: usize) -> Result<FilterCoefficients> {
    check_cutoff("cutoff", cutoff_hz, fs_hz)?;
    check_order(order)?;
    FilterCoefficients::new(butterworth_sections(Edge::Low, cutoff_hz, fs_hz, order), fs_hz)
}

/// Butterworth high-pass of even `order`, bilinear transform prewarped at `cutoff_hz`.
pub fn design_highpass(cutoff_hz: f64, fs_hz: f64, order: usize) -> Result<FilterCoefficients> {
    check_cutoff("cutoff", cutoff_hz, fs_hz)?;
    check_order(order)?;
    FilterCoefficients::new(butterworth_sections(Edge::High, cutoff_hz, fs_hz, order), fs_hz)
}

/// Band-pass built as an `order`-th order Butterworth high-pass at `low_hz`
/// cascaded with an `order`-th order Butterworth low-pass at `high_hz`
/// (`order/2` sections per edge).
pub fn design_bandpass(low_hz: f64, high_hz: f64, fs_hz: f64, order: usize) -> Result<FilterCoefficients> {
    check_cutoff("low cutoff", low_hz, fs_hz)?;
    check_cutoff("high cutoff", high_hz, fs_hz)?;
    if low_hz >= high_hz {
        return Err(Error::invalid(format!(
            "low cutoff {low_hz} Hz must be below high cutoff {high_hz} Hz"
        )));
    }
    check_order(order)?;
    let mut sections = butterworth_sections(Edge::High, low_hz, fs_hz, order);
    sections.extend(butterworth_sections(Edge::Low, high_hz, fs_hz, order));
    FilterCoefficients::new(sections, fs_hz)
}

/// Second-order notch with zeros on the unit circle at `center_hz` and
/// −3 dB bandwidth `center_hz / quality_q`.
pub fn design_notch(center_hz: f64, quality_q: f64, fs_hz: f64) -> Result<FilterCoefficients> {
    check_cutoff("notch center", center_hz, fs_hz)?;
    if !(quality_q > 0.0 && quality_q.is_finite()) {
        return Err(Error::invalid(format!("quality factor must be positive, got {quality_q}")));
    }
    let w0 = 2.0 * PI * center_hz / fs_hz;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * quality_q);
    let section = Biquad::normalized(1.0, -2.0 * cos, 1.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha);
    FilterCoefficients::new(vec![section], fs_hz)
}

/// Running state of a section cascade; feeding samples one at a time gives
/// exactly the same output as [`apply_filter`].
#[derive(Debug, Clone)]
pub struct FilterState {
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl FilterState {
    pub fn new(coeffs: &FilterCoefficients) -> Self {
        Self {
            sections: coeffs.sections.clone(),
            state: vec![[0.0; 2]; coeffs.sections.len()],
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b0 * v + st[0];
            st[0] = s.b1 * v - s.a1 * y + st[1];
            st[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }
}

/// Causal filtering with zero initial state.
pub fn apply_filter(coeffs: &FilterCoefficients, signal: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot filter an empty signal"));
    }
    let mut st = FilterState::new(coeffs);
    Ok(signal.iter().map(|&x| st.process(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// |H|² of an analog Butterworth low-pass mapped through the prewarped
    /// bilinear transform: independent of the biquad formulas.
    fn analog_lowpass_mag(f: f64, fc: f64, fs: f64, order: usize) -> f64 {
        let r = (PI * f / fs).tan() / (PI * fc / fs).tan();
        (1.0 / (1.0 + r.powi(2 * order as i32))).sqrt()
    }

    fn analog_highpass_mag(f: f64, fc: f64, fs: f64, order: usize) -> f64 {
        let r = (PI * fc / fs).tan() / (PI * f / fs).tan();
        (1.0 / (1.0 + r.powi(2 * order as i32))).sqrt()
    }

    #[test]
    fn lowpass_and_highpass_match_butterworth_magnitude() {
        let (fs, order) = (200.0, 4);
        let lp = design_lowpass(30.0, fs, order).unwrap();
        let hp = design_highpass(20.0, fs, order).unwrap();
        for f in [1.0, 5.0, 12.0, 20.0, 30.0, 47.0, 80.0, 99.0] {
            assert!((lp.magnitude(f) - analog_lowpass_mag(f, 30.0, fs, order)).abs() < 1e-10, "lp {f}");
            assert!((hp.magnitude(f) - analog_highpass_mag(f, 20.0, fs, order)).abs() < 1e-10, "hp {f}");
        }
        // −3 dB at the cutoff.
        assert!((lp.magnitude(30.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn default_bandpass_is_stable_and_flat_at_center() {
        let bp = design_bandpass(20.0, 95.0, 200.0, 4).unwrap();
        assert_eq!(bp.sections.len(), 4);
        assert!(bp.sections.iter().all(|s| s.pole_radius() < 1.0));
        let center = (20.0f64 * 95.0).sqrt();
        assert!(bp.magnitude_db(center).abs() <= 1.0);
    }

    #[test]
    fn bandpass_rejects_dc() {
        let bp = design_bandpass(20.0, 95.0, 200.0, 4).unwrap();
        let y = apply_filter(&bp, &vec![1.0; 2000]).unwrap();
        assert!(y[1500..].iter().all(|v| v.abs() < 1e-9));
        assert_eq!(bp.magnitude(0.0), 0.0);
    }

    #[test]
    fn invalid_designs_are_rejected() {
        assert!(design_bandpass(50.0, 40.0, 200.0, 4).is_err());
        assert!(design_bandpass(20.0, 100.0, 200.0, 4).is_err());
        assert!(design_bandpass(0.0, 40.0, 200.0, 4).is_err());
        assert!(design_bandpass(20.0, 95.0, 200.0, 3).is_err());
        assert!(design_notch(120.0, 30.0, 200.0).is_err());
        assert!(design_notch(100.0, 30.0, 200.0).is_err());
        assert!(design_notch(50.0, 0.0, 200.0).is_err());
    }

    #[test]
    fn notch_selectivity() {
        let n = design_notch(50.0, 30.0, 200.0).unwrap();
        assert_eq!(n.sections.len(), 1);
        assert!(n.magnitude_db(50.0) <= -30.0);
        let bw = 50.0 / 30.0;
        assert!(n.magnitude_db(50.0 - 3.0 * bw).abs() <= 1.0);
        assert!(n.magnitude_db(50.0 + 3.0 * bw).abs() <= 1.0);
        assert!(n.magnitude_db(10.0).abs() <= 1.0);
    }

    #[test]
    fn impulse_through_pure_gain() {
        let c = FilterCoefficients::new(
            vec![Biquad { b0: 0.5, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 }],
            200.0,
        )
        .unwrap();
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        assert_eq!(apply_filter(&c, &x).unwrap(), vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_difference_equation() {
        // y[n] = x[n] + 0.5 x[n-1] - 0.25 y[n-1]
        let c = FilterCoefficients::new(
            vec![Biquad { b0: 1.0, b1: 0.5, b2: 0.0, a1: 0.25, a2: 0.0 }],
            200.0,
        )
        .unwrap();
        let y = apply_filter(&c, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.25, -0.0625]);
    }

    #[test]
    fn zero_in_zero_out_and_empty_rejected() {
        let bp = design_bandpass(20.0, 95.0, 200.0, 4).unwrap();
        assert!(apply_filter(&bp, &[0.0; 64]).unwrap().iter().all(|v| *v == 0.0));
        assert!(apply_filter(&bp, &[]).is_err());
    }

    #[test]
    fn unstable_sections_rejected() {
        let bad = Biquad { b0: 1.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 1.0 };
        assert!(FilterCoefficients::new(vec![bad], 200.0).is_err());
        assert!(FilterCoefficients::new(vec![], 200.0).is_err());
    }

    #[test]
    fn streaming_matches_batch() {
        let bp = design_bandpass(20.0, 95.0, 200.0, 4).unwrap();
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.9).sin() + 0.3).collect();
        let batch = apply_filter(&bp, &x).unwrap();
        let mut st = FilterState::new(&bp);
        let stream: Vec<f64> = x.iter().map(|&v| st.process(v)).collect();
        assert_eq!(batch, stream);
    }
}
