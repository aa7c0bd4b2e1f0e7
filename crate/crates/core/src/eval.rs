//! Metrics, inference timing, error distributions, and the architecture ×
//! horizon sweep.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{make_windows_with, split_train_eval, DatasetManifest, WindowSpec, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{model_forward, Architecture, Model};
use crate::signals::{ScalerParams, Table};
use crate::training::{mse_loss, predict_dataset, train, TrainConfig, TrainHistory};

/// Coefficient of determination with the mean taken over `actual`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    if actual.len() < 2 {
        return Err(Error::invalid("R² needs at least two samples"));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantActual);
    }
    let ss_res: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Quantile of sorted data by linear interpolation at position `q·(n − 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box-plot summary of per-sample squared errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme squared errors within `1.5·IQR` of the quartiles.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: usize,
}

pub fn squared_errors(pred: &[f64], actual: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != actual.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} actual values",
            pred.len(),
            actual.len()
        )));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).collect())
}

pub fn error_distribution(pred: &[f64], actual: &[f64]) -> Result<ErrorDistribution> {
    let se = squared_errors(pred, actual)?;
    if se.is_empty() {
        return Err(Error::invalid("error distribution of empty vectors"));
    }
    Ok(distribution_of(se))
}

/// Summary of values that are already errors.
pub fn distribution_of(mut values: Vec<f64>) -> ErrorDistribution {
    values.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&values, 0.25), quantile(&values, 0.5), quantile(&values, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = values.iter().filter(|v| **v >= lo_fence && **v <= hi_fence);
    let lower_whisker = inside.clone().copied().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside.copied().fold(f64::NEG_INFINITY, f64::max);
    ErrorDistribution {
        count: values.len(),
        min: values[0],
        q1,
        median,
        q3,
        max: values[values.len() - 1],
        lower_whisker,
        upper_whisker,
        outliers: values.iter().filter(|v| **v < lo_fence || **v > hi_fence).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpu: String,
    pub logical_cpus: usize,
}

impl Environment {
    pub fn detect() -> Self {
        let cpu = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".to_string());
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpu,
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

pub const TIMING_METHOD: &str = "sequential single-sample inference, one untimed warm-up pass, preprocessing excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestTiming {
    pub test_time_s: f64,
    pub predictions_per_second: f64,
    pub samples: usize,
    pub method: String,
    pub environment: Environment,
}

/// Wall-clock time of one sequential pass of single-sample forward calls.
pub fn measure_test_time(model: &Model, ds: &WindowedDataset) -> Result<TestTiming> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot time an empty eval set"));
    }
    let mut sink = 0.0;
    for s in ds.iter() {
        sink += model_forward(model, &s)?[0];
    }
    let start = Instant::now();
    for s in ds.iter() {
        sink += model_forward(model, &s)?[0];
    }
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    std::hint::black_box(sink);
    Ok(TestTiming {
        test_time_s: secs,
        predictions_per_second: ds.len() as f64 / secs,
        samples: ds.len(),
        method: TIMING_METHOD.to_string(),
        environment: Environment::detect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: Architecture,
    pub horizon: usize,
    /// Normalized units.
    pub mse: f64,
    pub r2: f64,
    /// Newtons², when a scaler was supplied.
    pub mse_physical: Option<f64>,
    pub samples: usize,
    pub distribution: ErrorDistribution,
    pub timing: Option<TestTiming>,
}

impl EvalReport {
    pub fn test_time_s(&self) -> Option<f64> {
        self.timing.as_ref().map(|t| t.test_time_s)
    }

    pub fn predictions_per_second(&self) -> Option<f64> {
        self.timing.as_ref().map(|t| t.predictions_per_second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { timing: true }
    }
}

/// Scores `model` on every target of `ds`.
pub fn evaluate(
    model: &Model,
    ds: &WindowedDataset,
    scaler: Option<&ScalerParams>,
    opts: EvalOptions,
) -> Result<(EvalReport, Vec<f64>)> {
    let pred = predict_dataset(model, ds)?;
    let actual = ds.flat_targets();
    let mse = mse_loss(&pred, &actual)?;
    let r2 = r_squared(&pred, &actual)?;
    let distribution = error_distribution(&pred, &actual)?;
    let mse_physical = match scaler {
        Some(s) => {
            let col = s.force_column();
            let p: Vec<f64> = pred.iter().map(|v| s.invert_value(col, *v)).collect();
            let a: Vec<f64> = actual.iter().map(|v| s.invert_value(col, *v)).collect();
            Some(mse_loss(&p, &a)?)
        }
        None => None,
    };
    let timing = if opts.timing { Some(measure_test_time(model, ds)?) } else { None };
    let report = EvalReport {
        model: model.architecture(),
        horizon: ds.horizon(),
        mse,
        r2,
        mse_physical,
        samples: actual.len(),
        distribution,
        timing,
    };
    Ok((report, squared_errors(&pred, &actual)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub architectures: Vec<Architecture>,
    pub horizons: Vec<usize>,
    /// Cells trained concurrently; results are ordered identically for any value.
    pub workers: usize,
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            architectures: Architecture::ALL.to_vec(),
            horizons: vec![1, 3, 5],
            workers: 1,
            timing: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() || self.horizons.is_empty() {
            return Err(Error::invalid("sweep needs at least one architecture and one horizon"));
        }
        if self.horizons.contains(&0) {
            return Err(Error::invalid("horizons must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    /// `(horizon, architecture)` pairs in report order.
    pub fn cells(&self) -> Vec<(usize, Architecture)> {
        self.horizons
            .iter()
            .flat_map(|&h| self.architectures.iter().map(move |&a| (h, a)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub report: EvalReport,
    pub history: TrainHistory,
    pub dataset: DatasetManifest,
    pub config: TrainConfig,
    #[serde(skip)]
    pub squared_errors: Vec<f64>,
    #[serde(skip)]
    pub model: Option<Model>,
}

/// Windows, splits, trains, and scores one cell.
pub fn run_cell(
    table: &Table,
    config: &TrainConfig,
    scaler: Option<&ScalerParams>,
    source_files: &[String],
    timing: bool,
) -> Result<SweepCell> {
    let spec = WindowSpec {
        window_len: config.window_len,
        horizon: config.horizon,
        multi_horizon: config.multi_horizon,
    };
    let full = make_windows_with(table, spec)?;
    let (tr, ev) = split_train_eval(&full, config.eval_fraction, config.seed, config.split_policy)?;
    let dataset = DatasetManifest::describe(
        &full,
        &tr,
        &ev,
        config.eval_fraction,
        config.split_policy,
        config.seed,
        source_files.to_vec(),
    );
    let (model, history) = train(&tr, Some(&ev), config)?;
    let (report, squared_errors) = evaluate(&model, &ev, scaler, EvalOptions { timing })?;
    log::info!("cell {} H={}: mse {:.6e}, r2 {:.6}", report.model, report.horizon, report.mse, report.r2);
    Ok(SweepCell {
        report,
        history,
        dataset,
        config: config.clone(),
        squared_errors,
        model: Some(model),
    })
}

/// Trains and evaluates every `(horizon, architecture)` cell from `base`.
pub fn horizon_sweep(
    table: &Table,
    sweep: &SweepConfig,
    base: &TrainConfig,
    scaler: Option<&ScalerParams>,
    source_files: &[String],
) -> Result<Vec<SweepCell>> {
    sweep.validate()?;
    let cells = sweep.cells();
    let config_for = |(h, a): (usize, Architecture)| TrainConfig {
        architecture: a,
        horizon: h,
        ..base.clone()
    };
    if sweep.workers == 1 {
        return cells
            .into_iter()
            .map(|c| run_cell(table, &config_for(c), scaler, source_files, sweep.timing))
            .collect();
    }
    let results: Vec<Mutex<Option<Result<SweepCell>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..sweep.workers.min(cells.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep queue");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(table, &config_for(cells[i]), scaler, source_files, sweep.timing);
                *results[i].lock().expect("sweep slot") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("sweep slot").expect("every cell ran"))
        .collect()
}

const METRIC_HEADER: &str = "model,horizon,mse,r2,samples,se_min,se_q1,se_median,se_q3,se_max,se_lower_whisker,se_upper_whisker,se_outliers";

fn metric_fields(r: &EvalReport) -> String {
    let d = &r.distribution;
    format!(
        "{},{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
        r.model, r.horizon, r.mse, r.r2, r.samples, d.min, d.q1, d.median, d.q3, d.max, d.lower_whisker, d.upper_whisker, d.outliers
    )
}

fn write_text(path: &Path, text: &[u8]) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deterministic metrics only: identical inputs and seeds give identical bytes.
pub fn write_metrics_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{METRIC_HEADER}").expect("write to Vec");
    for r in reports {
        writeln!(out, "{}", metric_fields(r)).expect("write to Vec");
    }
    write_text(path, &out)
}

/// Consolidated table including wall-clock timing columns.
pub fn write_table_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "model,horizon,mse,r2,test_time_s,pred_per_s,mse_physical,samples,se_min,se_q1,se_median,se_q3,se_max,se_lower_whisker,se_upper_whisker,se_outliers")
        .expect("write to Vec");
    for r in reports {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let d = &r.distribution;
        writeln!(
            out,
            "{},{},{:e},{:e},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.model,
            r.horizon,
            r.mse,
            r.r2,
            opt(r.test_time_s()),
            opt(r.predictions_per_second()),
            opt(r.mse_physical),
            r.samples,
            d.min,
            d.q1,
            d.median,
            d.q3,
            d.max,
            d.lower_whisker,
            d.upper_whisker,
            d.outliers
        )
        .expect("write to Vec");
    }
    write_text(path, &out)
}

pub fn write_table_json(reports: &[EvalReport], path: &Path) -> Result<()> {
    write_text(path, serde_json::to_string_pretty(reports)?.as_bytes())
}

/// Per-sample squared errors: `model,horizon,index,squared_error`.
pub fn write_plot_data(cells: &[(EvalReport, &[f64])], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "model,horizon,index,squared_error").expect("write to Vec");
    for (r, se) in cells {
        for (i, v) in se.iter().enumerate() {
            writeln!(out, "{},{},{i},{v:e}", r.model, r.horizon).expect("write to Vec");
        }
    }
    write_text(path, &out)
}
