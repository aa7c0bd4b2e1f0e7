//! Command-line front end: `gripforge <synth|preprocess|train|eval|sweep|predict>`.

use std::collections::{BTreeMap, VecDeque};
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{make_windows_with, split_train_eval, DatasetManifest, SplitPolicy, WindowSpec};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, horizon_sweep, write_metrics_csv, write_plot_data, write_table_csv, write_table_json, EvalOptions, EvalReport,
    SweepConfig,
};
use crate::models::{load_checkpoint, save_checkpoint, ActivationMode, Architecture, Checkpoint, UpdateGate};
use crate::signals::{
    merge_and_fit_scaler, minmax_apply, preprocess_with_bank, read_recording_csv, read_table_csv, write_recording_csv,
    write_table_csv as write_processed_csv, FilterBank, ForceFilter, PreprocessConfig, ScalerParams, StreamingPreprocessor,
    Table, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::signals::{parse_header, split_metadata};
use crate::synth::{synthesize, SynthConfig};
use crate::training::{train_with, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "GRIPFORGE_OUT";
const DEFAULT_OUT_DIR: &str = "gripforge-out";
pub const MANIFEST_FILE: &str = "manifest.json";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "gripforge", version, about = "EMG-driven grip force prediction")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic EMG/force recordings.
    Synth(SynthArgs),
    /// Filter and normalize recordings into one processed table.
    Preprocess(PreprocessArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate every architecture × horizon cell.
    Sweep(SweepArgs),
    /// Stream force predictions for a raw recording.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (default: $GRIPFORGE_OUT, else ./gripforge-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file with [synth], [preprocess], [train] and [sweep] tables.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ForceFilterKind {
    Lowpass,
    Bandpass,
    SameAsEmg,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    common: Common,
    /// Raw recordings (`t,emg1..emg8,force`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Sample rate for files without a `# sample_rate_hz=` line.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE_HZ)]
    fs: f64,
    #[arg(long)]
    emg_low_hz: Option<f64>,
    #[arg(long)]
    emg_high_hz: Option<f64>,
    #[arg(long)]
    emg_order: Option<usize>,
    #[arg(long)]
    notch_hz: Option<f64>,
    #[arg(long)]
    notch_q: Option<f64>,
    #[arg(long, value_enum)]
    force_filter: Option<ForceFilterKind>,
    #[arg(long)]
    force_cutoff_hz: Option<f64>,
    #[arg(long)]
    force_low_hz: Option<f64>,
    #[arg(long)]
    force_high_hz: Option<f64>,
    #[arg(long)]
    force_order: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Tail,
    Shuffle,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// Window length W.
    #[arg(long)]
    window: Option<usize>,
    /// Recurrent hidden size U.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// tanh instead of ReLU inside the LSTM/GRU cells.
    #[arg(long)]
    tanh_activations: bool,
    /// ReLU update gate for the GRU.
    #[arg(long)]
    relu_update_gate: bool,
    /// Keep the epoch with the lowest eval loss.
    #[arg(long)]
    keep_best: bool,
    /// Predict all H future force values instead of only the H-th.
    #[arg(long)]
    multi_horizon: bool,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Processed table written by `preprocess`.
    #[arg(long)]
    data: PathBuf,
    /// Scaler parameters (default: scaler.json next to the data).
    #[arg(long)]
    scaler: Option<PathBuf>,
    /// Preprocessing settings (default: preprocess.json next to the data).
    #[arg(long)]
    preprocess: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    flags: TrainFlags,
    /// Also write a checkpoint every K epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Score every window instead of the checkpoint's held-out split.
    #[arg(long)]
    all: bool,
    /// Skip the wall-clock inference timing.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated architectures.
    #[arg(long, value_delimiter = ',')]
    archs: Option<Vec<String>>,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw recording, or `-` for stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// Prediction CSV, or `-` for stdout.
    #[arg(long, default_value = "-")]
    output: String,
    /// Override the scaler stored in the checkpoint.
    #[arg(long)]
    scaler: Option<PathBuf>,
    /// Override the preprocessing settings stored in the checkpoint.
    #[arg(long)]
    preprocess: Option<PathBuf>,
    /// Abort on the first malformed row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

/// Sections of a `--config` file; each mirrors its config type's field names.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    synth: Option<SynthConfig>,
    preprocess: Option<PreprocessConfig>,
    train: Option<TrainConfig>,
    sweep: Option<SweepConfig>,
}

/// Filter settings together with the rate they were designed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub sample_rate_hz: f64,
    pub filters: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Accumulates a command's provenance and writes it last, atomically.
struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(command: &str, argv: &[String], out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        // A manifest from an earlier run must not vouch for this one.
        let stale = out_dir.join(MANIFEST_FILE);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        Ok(Self {
            out_dir,
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: argv.to_vec(),
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_s: unix_now(),
                finished_unix_s: 0.0,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(&path, e))?;
        Ok(self.output(path))
    }

    fn finish(mut self, config: serde_json::Value) -> Result<PathBuf> {
        self.manifest.config = config;
        self.manifest.inputs = hashes(&self.inputs)?;
        self.manifest.outputs = hashes(&self.outputs)?;
        self.manifest.finished_unix_s = unix_now();
        let path = self.out_dir.join(MANIFEST_FILE);
        let tmp = self.out_dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load_config(common: &Common) -> Result<ConfigFile> {
    match &common.config {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))
}

/// Explicit path, else `name` beside `data` if it exists.
fn sibling(explicit: &Option<PathBuf>, data: &Path, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| {
        let p = data.with_file_name(name);
        p.exists().then_some(p)
    })
}

struct LoadedData {
    table: Table,
    scaler: Option<ScalerParams>,
    preprocess: Option<PreprocessRecord>,
    files: Vec<PathBuf>,
}

fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let table = read_table_csv(&args.data)?;
    let mut files = vec![args.data.clone()];
    let scaler = match sibling(&args.scaler, &args.data, "scaler.json") {
        Some(p) => {
            let s: ScalerParams = read_json(&p)?;
            if s.columns() != table.columns() {
                return Err(Error::data(
                    p.display().to_string(),
                    format!("scaler has {} columns, data has {}", s.columns(), table.columns()),
                ));
            }
            files.push(p);
            Some(s)
        }
        None => None,
    };
    let preprocess = match sibling(&args.preprocess, &args.data, "preprocess.json") {
        Some(p) => {
            let r: PreprocessRecord = read_json(&p)?;
            files.push(p);
            Some(r)
        }
        None => None,
    };
    Ok(LoadedData {
        table,
        scaler,
        preprocess,
        files,
    })
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.window => c.window_len);
        set!(self.hidden => c.hidden);
        set!(self.epochs => c.epochs);
        set!(self.batch_size => c.batch_size);
        set!(self.eval_fraction => c.eval_fraction);
        set!(self.lr => c.learning_rate);
        set!(self.beta1 => c.beta1);
        set!(self.beta2 => c.beta2);
        set!(self.epsilon => c.epsilon);
        set!(self.seed => c.seed);
        if let Some(s) = self.split {
            c.split_policy = match s {
                SplitArg::Tail => SplitPolicy::Tail,
                SplitArg::Shuffle => SplitPolicy::Shuffle,
            };
        }
        if self.tanh_activations {
            c.activations = ActivationMode::Tanh;
        }
        if self.relu_update_gate {
            c.update_gate = UpdateGate::Relu;
        }
        c.keep_best |= self.keep_best;
        c.multi_horizon |= self.multi_horizon;
    }
}

fn cmd_synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    let mut cfg = load_config(&a.common)?.synth.unwrap_or_default();
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.subjects {
        cfg.subjects = v;
    }
    if let Some(v) = a.duration_s {
        cfg.duration_s = v;
    }
    if let Some(v) = a.fs {
        cfg.sample_rate_hz = v;
    }
    let recs = synthesize(&cfg)?;
    let mut run = Run::start("synth", argv, out_dir(&a.common))?;
    for rec in &recs {
        let p = run.path(&format!("{}.csv", rec.subject_id));
        write_recording_csv(rec, &p)?;
        run.output(p);
    }
    run.manifest.seeds.insert("synth".into(), cfg.seed);
    let path = run.finish(serde_json::to_value(&cfg)?)?;
    log::info!("wrote {} recordings; manifest {}", recs.len(), path.display());
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs, argv: &[String]) -> Result<()> {
    let mut cfg = load_config(&a.common)?.preprocess.unwrap_or_default();
    if let Some(v) = a.emg_low_hz {
        cfg.emg_low_hz = v;
    }
    if let Some(v) = a.emg_high_hz {
        cfg.emg_high_hz = v;
    }
    if let Some(v) = a.emg_order {
        cfg.emg_order = v;
    }
    if let Some(v) = a.notch_hz {
        cfg.notch_hz = v;
    }
    if let Some(v) = a.notch_q {
        cfg.notch_q = v;
    }
    let order = a.force_order.unwrap_or(match cfg.force_filter {
        ForceFilter::Lowpass { order, .. } | ForceFilter::Bandpass { order, .. } => order,
        ForceFilter::SameAsEmg => 4,
    });
    let kind = a.force_filter.or(match cfg.force_filter {
        _ if a.force_cutoff_hz.is_some() || a.force_order.is_some() => match cfg.force_filter {
            ForceFilter::Lowpass { .. } => Some(ForceFilterKind::Lowpass),
            ForceFilter::Bandpass { .. } => Some(ForceFilterKind::Bandpass),
            ForceFilter::SameAsEmg => None,
        },
        _ if a.force_low_hz.is_some() || a.force_high_hz.is_some() => Some(ForceFilterKind::Bandpass),
        _ => None,
    });
    match kind {
        Some(ForceFilterKind::SameAsEmg) => cfg.force_filter = ForceFilter::SameAsEmg,
        Some(ForceFilterKind::Lowpass) => {
            let prev = match cfg.force_filter {
                ForceFilter::Lowpass { cutoff_hz, .. } => cutoff_hz,
                _ => 10.0,
            };
            cfg.force_filter = ForceFilter::Lowpass {
                cutoff_hz: a.force_cutoff_hz.unwrap_or(prev),
                order,
            };
        }
        Some(ForceFilterKind::Bandpass) => {
            let (lo, hi) = match cfg.force_filter {
                ForceFilter::Bandpass { low_hz, high_hz, .. } => (low_hz, high_hz),
                _ => (0.5, 10.0),
            };
            cfg.force_filter = ForceFilter::Bandpass {
                low_hz: a.force_low_hz.unwrap_or(lo),
                high_hz: a.force_high_hz.unwrap_or(hi),
                order,
            };
        }
        None => {}
    }
    let recs = a.inputs.iter().map(|p| read_recording_csv(p, a.fs)).collect::<Result<Vec<_>>>()?;
    let fs_hz = recs[0].sample_rate_hz();
    let bank = FilterBank::design(&cfg, fs_hz)?;
    let filtered = recs.iter().map(|r| preprocess_with_bank(r, &bank)).collect::<Result<Vec<_>>>()?;
    let (table, scaler) = merge_and_fit_scaler(&filtered)?;
    let normalized = minmax_apply(&scaler, &table)?;
    let mut run = Run::start("preprocess", argv, out_dir(&a.common))?;
    run.inputs = a.inputs.clone();
    let p = run.path("processed.csv");
    write_processed_csv(&normalized, &p)?;
    run.output(p);
    run.write_json("scaler.json", &scaler)?;
    let record = PreprocessRecord {
        sample_rate_hz: fs_hz,
        filters: cfg,
    };
    run.write_json("preprocess.json", &record)?;
    run.finish(serde_json::to_value(&record)?)?;
    log::info!("preprocessed {} recordings ({} rows)", recs.len(), normalized.rows());
    Ok(())
}

fn train_config(common: &Common, flags: &TrainFlags) -> Result<(ConfigFile, TrainConfig)> {
    let file = load_config(common)?;
    let mut cfg = file.train.clone().unwrap_or_default();
    flags.apply(&mut cfg);
    Ok((file, cfg))
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let (_, mut cfg) = train_config(&a.common, &a.flags)?;
    if let Some(arch) = &a.arch {
        cfg.architecture = arch.parse()?;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if a.checkpoint_every == Some(0) {
        return Err(Error::invalid("--checkpoint-every must be at least 1"));
    }
    cfg.validate()?;
    let data = load_data(&a.data)?;
    let spec = WindowSpec {
        window_len: cfg.window_len,
        horizon: cfg.horizon,
        multi_horizon: cfg.multi_horizon,
    };
    let full = make_windows_with(&data.table, spec)?;
    let (tr, ev) = split_train_eval(&full, cfg.eval_fraction, cfg.seed, cfg.split_policy)?;
    let sources: Vec<String> = data.files.iter().map(|p| p.display().to_string()).collect();
    let dataset = DatasetManifest::describe(&full, &tr, &ev, cfg.eval_fraction, cfg.split_policy, cfg.seed, sources);
    let mut run = Run::start("train", argv, out_dir(&a.common))?;
    run.inputs = data.files.clone();
    let make_ckpt = |model: &crate::models::Model| {
        let mut ck = Checkpoint::from_model(model, cfg.horizon, cfg.seed);
        ck.sample_rate_hz = Some(data.table.sample_rate_hz());
        ck.preprocess = data.preprocess.as_ref().map(|p| p.filters.clone());
        ck.scaler = data.scaler.clone();
        ck.train = Some(cfg.clone());
        ck.dataset = Some(dataset.clone());
        ck
    };
    let mut periodic = Vec::new();
    let (model, mut history) = train_with(&tr, Some(&ev), &cfg, |epoch, model, _| {
        if let Some(k) = a.checkpoint_every {
            if epoch % k == 0 && epoch < cfg.epochs {
                let p = run.path(&format!("checkpoint_epoch{epoch:04}.json"));
                save_checkpoint(&p, &make_ckpt(model))?;
                periodic.push(p);
            }
        }
        Ok(())
    })?;
    for p in periodic {
        run.output(p);
    }
    let model_path = run.path("model.json");
    save_checkpoint(&model_path, &make_ckpt(&model))?;
    run.output(model_path);
    history.final_checkpoint = Some("model.json".into());
    run.write_json("history.json", &history)?;
    run.manifest.seeds.insert("train".into(), cfg.seed);
    let echo = serde_json::json!({ "train": cfg, "dataset": dataset, "preprocess": data.preprocess });
    run.finish(echo)?;
    log::info!(
        "trained {} for {} epochs: final eval loss {:.6e}",
        cfg.architecture,
        history.epochs_completed(),
        history.eval_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_report_files(run: &mut Run, reports: &[EvalReport], errors: &[(EvalReport, &[f64])]) -> Result<()> {
    let p = run.path("table.csv");
    write_table_csv(reports, &p)?;
    run.output(p);
    let p = run.path("table.json");
    write_table_json(reports, &p)?;
    run.output(p);
    let p = run.path("metrics.csv");
    write_metrics_csv(reports, &p)?;
    run.output(p);
    let p = run.path("plot_data.csv");
    write_plot_data(errors, &p)?;
    run.output(p);
    Ok(())
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.to_model()?;
    let data = load_data(&a.data)?;
    let cfg = ck.train.clone().unwrap_or_else(|| TrainConfig {
        architecture: ck.config.architecture,
        window_len: ck.config.window_len,
        horizon: ck.horizon,
        seed: ck.seed,
        ..TrainConfig::default()
    });
    if data.table.emg_channels() != ck.config.channels {
        return Err(Error::data(
            a.data.data.display().to_string(),
            format!("data has {} EMG channels, model expects {}", data.table.emg_channels(), ck.config.channels),
        ));
    }
    let spec = WindowSpec {
        window_len: ck.config.window_len,
        horizon: ck.horizon,
        multi_horizon: ck.config.output_dim > 1,
    };
    let full = make_windows_with(&data.table, spec)?;
    let scored = if a.all {
        full
    } else {
        split_train_eval(&full, cfg.eval_fraction, cfg.seed, cfg.split_policy)?.1
    };
    let scaler = data.scaler.as_ref().or(ck.scaler.as_ref());
    let (report, se) = evaluate(&model, &scored, scaler, EvalOptions { timing: !a.no_timing })?;
    let mut run = Run::start("eval", argv, out_dir(&a.common))?;
    run.inputs = data.files.clone();
    run.inputs.push(a.checkpoint.clone());
    write_report_files(&mut run, std::slice::from_ref(&report), &[(report.clone(), &se)])?;
    run.write_json("report.json", &report)?;
    run.manifest.seeds.insert("split".into(), cfg.seed);
    let echo = serde_json::json!({ "train": cfg, "scope": if a.all { "all" } else { "held-out" } });
    run.finish(echo)?;
    log::info!("{} H={}: mse {:.6e}, r2 {:.6}", report.model, report.horizon, report.mse, report.r2);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let (file, base) = train_config(&a.common, &a.flags)?;
    let mut sweep = file.sweep.unwrap_or_default();
    if let Some(archs) = &a.archs {
        sweep.architectures = archs.iter().map(|s| s.parse()).collect::<Result<Vec<Architecture>>>()?;
    }
    if let Some(h) = &a.horizons {
        sweep.horizons = h.clone();
    }
    if let Some(w) = a.workers {
        sweep.workers = w;
    }
    if a.no_timing {
        sweep.timing = false;
    }
    sweep.validate()?;
    base.validate()?;
    let data = load_data(&a.data)?;
    let sources: Vec<String> = data.files.iter().map(|p| p.display().to_string()).collect();
    let cells = horizon_sweep(&data.table, &sweep, &base, data.scaler.as_ref(), &sources)?;
    let mut run = Run::start("sweep", argv, out_dir(&a.common))?;
    run.inputs = data.files.clone();
    for c in &cells {
        let dir = format!("cells/{}_h{}", c.report.model, c.report.horizon);
        if let Some(model) = &c.model {
            let mut ck = Checkpoint::from_model(model, c.config.horizon, c.config.seed);
            ck.sample_rate_hz = Some(data.table.sample_rate_hz());
            ck.preprocess = data.preprocess.as_ref().map(|p| p.filters.clone());
            ck.scaler = data.scaler.clone();
            ck.train = Some(c.config.clone());
            ck.dataset = Some(c.dataset.clone());
            let p = run.path(&format!("{dir}/model.json"));
            fs::create_dir_all(p.parent().expect("cell dir")).map_err(|e| Error::io(&p, e))?;
            save_checkpoint(&p, &ck)?;
            run.output(p);
        }
        run.write_json(&format!("{dir}/history.json"), &c.history)?;
    }
    let reports: Vec<EvalReport> = cells.iter().map(|c| c.report.clone()).collect();
    let errors: Vec<(EvalReport, &[f64])> = cells.iter().map(|c| (c.report.clone(), c.squared_errors.as_slice())).collect();
    write_report_files(&mut run, &reports, &errors)?;
    run.write_json("cells.json", &cells)?;
    run.manifest.seeds.insert("train".into(), base.seed);
    let echo = serde_json::json!({ "sweep": sweep, "train": base, "preprocess": data.preprocess });
    run.finish(echo)?;
    Ok(())
}

/// Outcome counts of a prediction stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PredictStats {
    pub rows: usize,
    pub predictions: usize,
    pub skipped: usize,
}

/// Filters, scales, and windows raw rows from `input`, writing one
/// `t,predicted_force_n` line per row once `W` rows have been seen. `t` is
/// the time of the window's last row; the value is the force `H` samples later.
pub fn predict_stream<R: BufRead, W: Write>(ck: &Checkpoint, input: R, mut output: W, strict: bool, source: &str) -> Result<PredictStats> {
    let model = ck.to_model()?;
    let cfg = model.config().clone();
    let scaler = ck
        .scaler
        .as_ref()
        .ok_or_else(|| Error::invalid("checkpoint has no scaler; pass --scaler"))?;
    let filters = ck
        .preprocess
        .as_ref()
        .ok_or_else(|| Error::invalid("checkpoint has no preprocessing settings; pass --preprocess"))?;
    let fs_hz = ck
        .sample_rate_hz
        .ok_or_else(|| Error::invalid("checkpoint has no sample rate; pass --preprocess"))?;
    if scaler.columns() != cfg.channels + 1 {
        return Err(Error::invalid(format!(
            "scaler has {} columns but the model expects {} EMG channels plus force",
            scaler.columns(),
            cfg.channels
        )));
    }
    let bank = FilterBank::design(filters, fs_hz)?;
    let mut pre = StreamingPreprocessor::new(&bank, cfg.channels);
    let mut window: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.window_len);
    let mut flat = Vec::with_capacity(cfg.window_len * cfg.channels);
    let mut stats = PredictStats::default();
    let mut header_seen = false;
    writeln!(output, "t,predicted_force_n").map_err(|e| Error::io(source, e))?;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            let (meta, _) = split_metadata(line);
            if let Some((_, v)) = meta.iter().find(|(k, _)| k == "sample_rate_hz") {
                let v: f64 = v.parse().map_err(|_| Error::data(source, format!("bad sample_rate_hz `{v}`")))?;
                if (v - fs_hz).abs() > 1e-9 * fs_hz {
                    return Err(Error::data(source, format!("input is sampled at {v} Hz, model at {fs_hz} Hz")));
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            let rec = csv::StringRecord::from(fields.clone());
            let (channels, _) = parse_header(source, &rec, true)?;
            if channels != cfg.channels {
                return Err(Error::data(source, format!("input has {channels} EMG channels, model expects {}", cfg.channels)));
            }
            header_seen = true;
            continue;
        }
        stats.rows += 1;
        let parsed: Option<Vec<f64>> = if fields.len() == cfg.channels + 1 || fields.len() == cfg.channels + 2 {
            fields[1..=cfg.channels]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .filter(|_| fields[0].parse::<f64>().is_ok())
        } else {
            None
        };
        let Some(mut row) = parsed else {
            if strict {
                return Err(Error::data(source, format!("line {}: malformed row `{line}`", lineno + 1)));
            }
            stats.skipped += 1;
            if stats.skipped <= 5 {
                log::warn!("{source}: skipping malformed line {}", lineno + 1);
            }
            continue;
        };
        pre.push_emg(&mut row);
        for (c, v) in row.iter_mut().enumerate() {
            *v = scaler.apply_value(c, *v);
        }
        if window.len() == cfg.window_len {
            window.pop_front();
        }
        window.push_back(row);
        if window.len() == cfg.window_len {
            flat.clear();
            for r in &window {
                flat.extend_from_slice(r);
            }
            let y = model.predict_batch(&flat, 1)?;
            let force = scaler.invert_value(scaler.force_column(), y[y.len() - 1]);
            writeln!(output, "{},{}", fields[0], force).map_err(|e| Error::io(source, e))?;
            stats.predictions += 1;
        }
    }
    if !header_seen {
        return Err(Error::data(source, "input has no header"));
    }
    output.flush().map_err(|e| Error::io(source, e))?;
    Ok(stats)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    if let Some(p) = &a.scaler {
        ck.scaler = Some(read_json(p)?);
    }
    if let Some(p) = &a.preprocess {
        let r: PreprocessRecord = read_json(p)?;
        ck.sample_rate_hz = Some(r.sample_rate_hz);
        ck.preprocess = Some(r.filters);
    }
    let started = Instant::now();
    let input: Box<dyn BufRead> = if a.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        let f = fs::File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
        Box::new(BufReader::new(f))
    };
    let output: Box<dyn Write> = if a.output == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        let f = fs::File::create(&a.output).map_err(|e| Error::io(&a.output, e))?;
        Box::new(BufWriter::new(f))
    };
    let stats = predict_stream(&ck, input, output, a.strict, &a.input)?;
    let secs = started.elapsed().as_secs_f64().max(1e-9);
    eprintln!(
        "rows {}, predictions {}, skipped {}, {:.0} rows/s",
        stats.rows,
        stats.predictions,
        stats.skipped,
        stats.rows as f64 / secs
    );
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => exit::USAGE,
        Error::Divergence { .. } => exit::DIVERGENCE,
        _ => exit::DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &argv),
        Command::Preprocess(a) => cmd_preprocess(a, &argv),
        Command::Train(a) => cmd_train(a, &argv),
        Command::Eval(a) => cmd_eval(a, &argv),
        Command::Sweep(a) => cmd_sweep(a, &argv),
        Command::Predict(a) => cmd_predict(a),
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_architecture_is_a_usage_error() {
        let e = "cnn".parse::<Architecture>().unwrap_err();
        assert_eq!(exit_code(&e), exit::USAGE);
        assert!(e.to_string().contains("mlp, rnn, lstm, gru"));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::invalid("x")),
            exit_code(&Error::data("p", "m")),
            exit_code(&Error::Divergence { epoch: 1, loss: f64::NAN }),
        ];
        assert_eq!(codes, [exit::USAGE, exit::DATA, exit::DIVERGENCE]);
    }

    #[test]
    fn flags_override_config_file() {
        let file: ConfigFile = toml::from_str("[train]\nepochs = 7\nbatch_size = 16\narchitecture = \"lstm\"").unwrap();
        let mut cfg = file.train.unwrap();
        let flags = TrainFlags {
            window: None,
            hidden: Some(12),
            epochs: Some(3),
            batch_size: None,
            eval_fraction: None,
            split: None,
            lr: None,
            beta1: None,
            beta2: None,
            epsilon: None,
            seed: None,
            tanh_activations: true,
            relu_update_gate: false,
            keep_best: false,
            multi_horizon: false,
        };
        flags.apply(&mut cfg);
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.hidden), (3, 16, 12));
        assert_eq!(cfg.architecture, Architecture::Lstm);
        assert_eq!(cfg.activations, ActivationMode::Tanh);
        assert_eq!(cfg.window_len, 20);
        assert!(toml::from_str::<ConfigFile>("[trian]\nepochs = 1").is_err());
    }
}
