//! Recording preprocessing: band-pass and notch filtering, subject merging and
//! min-max normalization.

mod filter;
mod recording;
mod scaler;

pub use filter::{
    apply_filter, design_bandpass, design_highpass, design_lowpass, design_notch, Biquad, FilterCoefficients,
    FilterState,
};
pub use recording::{csv_header, read_recording_csv, write_recording_csv, Recording, DEFAULT_SAMPLE_RATE_HZ, EMG_CHANNELS};
pub use scaler::{
    merge_and_fit_scaler, merge_recordings, minmax_apply, minmax_invert, read_table_csv, write_table_csv, ScalerParams,
    Segment, Table,
};

pub(crate) use recording::{parse_header, split_metadata};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the force channel is band-limited before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceFilter {
    /// Same band-pass as the EMG channels.
    SameAsEmg,
    Lowpass { cutoff_hz: f64, order: usize },
    Bandpass { low_hz: f64, high_hz: f64, order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub emg_low_hz: f64,
    pub emg_high_hz: f64,
    pub emg_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub force_filter: ForceFilter,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            emg_low_hz: 20.0,
            emg_high_hz: 95.0,
            emg_order: 4,
            notch_hz: 50.0,
            notch_q: 30.0,
            force_filter: ForceFilter::Lowpass {
                cutoff_hz: 10.0,
                order: 4,
            },
        }
    }
}

/// Designed filters for the EMG and force channels of one sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub emg_bandpass: FilterCoefficients,
    pub notch: FilterCoefficients,
    pub force_band: FilterCoefficients,
}

impl FilterBank {
    pub fn design(cfg: &PreprocessConfig, fs_hz: f64) -> Result<Self> {
        let emg_bandpass = design_bandpass(cfg.emg_low_hz, cfg.emg_high_hz, fs_hz, cfg.emg_order)?;
        let notch = design_notch(cfg.notch_hz, cfg.notch_q, fs_hz)?;
        let force_band = match cfg.force_filter {
            ForceFilter::SameAsEmg => emg_bandpass.clone(),
            ForceFilter::Lowpass { cutoff_hz, order } => design_lowpass(cutoff_hz, fs_hz, order)?,
            ForceFilter::Bandpass { low_hz, high_hz, order } => design_bandpass(low_hz, high_hz, fs_hz, order)?,
        };
        Ok(Self {
            emg_bandpass,
            notch,
            force_band,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.emg_bandpass.sample_rate_hz
    }
}

fn check_filter_rate(rec: &Recording, f: &FilterCoefficients) -> Result<()> {
    if (rec.sample_rate_hz() - f.sample_rate_hz).abs() > 1e-9 * rec.sample_rate_hz() {
        return Err(Error::invalid(format!(
            "filter designed for {} Hz applied to `{}` sampled at {} Hz",
            f.sample_rate_hz,
            rec.subject_id,
            rec.sample_rate_hz()
        )));
    }
    Ok(())
}

fn band_then_notch(band: &FilterCoefficients, notch: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    apply_filter(notch, &apply_filter(band, x)?)
}

/// Passes every EMG channel and the force channel through `bandpass` then `notch`.
pub fn preprocess_recording(
    rec: &Recording,
    bandpass: &FilterCoefficients,
    notch: &FilterCoefficients,
) -> Result<Recording> {
    preprocess_split(rec, bandpass, notch, bandpass)
}

/// Like [`preprocess_recording`] but with the bank's separate force filter.
pub fn preprocess_with_bank(rec: &Recording, bank: &FilterBank) -> Result<Recording> {
    preprocess_split(rec, &bank.emg_bandpass, &bank.notch, &bank.force_band)
}

fn preprocess_split(
    rec: &Recording,
    emg_band: &FilterCoefficients,
    notch: &FilterCoefficients,
    force_band: &FilterCoefficients,
) -> Result<Recording> {
    for f in [emg_band, notch, force_band] {
        check_filter_rate(rec, f)?;
    }
    let emg = rec
        .emg()
        .iter()
        .map(|ch| band_then_notch(emg_band, notch, ch))
        .collect::<Result<Vec<_>>>()?;
    let force = band_then_notch(force_band, notch, rec.force())?;
    Recording::new(rec.subject_id.clone(), rec.sample_rate_hz(), emg, force)
}

/// Sample-by-sample counterpart of [`preprocess_with_bank`] followed by
/// min-max scaling of the EMG columns.
#[derive(Debug, Clone)]
pub struct StreamingPreprocessor {
    emg: Vec<(FilterState, FilterState)>,
    force: (FilterState, FilterState),
}

impl StreamingPreprocessor {
    pub fn new(bank: &FilterBank, channels: usize) -> Self {
        let pair = |band: &FilterCoefficients| (FilterState::new(band), FilterState::new(&bank.notch));
        Self {
            emg: (0..channels).map(|_| pair(&bank.emg_bandpass)).collect(),
            force: pair(&bank.force_band),
        }
    }

    pub fn channels(&self) -> usize {
        self.emg.len()
    }

    /// Filters one row of raw EMG in place.
    pub fn push_emg(&mut self, row: &mut [f64]) {
        for (v, (band, notch)) in row.iter_mut().zip(self.emg.iter_mut()) {
            *v = notch.process(band.process(*v));
        }
    }

    pub fn push_force(&mut self, v: f64) -> f64 {
        self.force.1.process(self.force.0.process(v))
    }
}
