use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const EMG_CHANNELS: usize = 8;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 200.0;

/// Co-sampled multichannel EMG and grip force of one subject/session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    sample_rate_hz: f64,
    /// Channel-major: `emg[c][n]`.
    emg: Vec<Vec<f64>>,
    force: Vec<f64>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        emg: Vec<Vec<f64>>,
        force: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if force.is_empty() {
            return Err(Error::invalid("recording must contain at least one sample"));
        }
        if emg.is_empty() {
            return Err(Error::invalid("recording must contain at least one EMG channel"));
        }
        if let Some((c, ch)) = emg.iter().enumerate().find(|(_, ch)| ch.len() != force.len()) {
            return Err(Error::shape(format!(
                "EMG channel {} has {} samples, force has {}",
                c + 1,
                ch.len(),
                force.len()
            )));
        }
        if emg.iter().flatten().chain(&force).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recording contains NaN or infinite samples".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            sample_rate_hz,
            emg,
            force,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.force.len()
    }

    pub fn n_channels(&self) -> usize {
        self.emg.len()
    }

    pub fn emg_channel(&self, c: usize) -> &[f64] {
        &self.emg[c]
    }

    pub fn emg(&self) -> &[Vec<f64>] {
        &self.emg
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }
}

pub fn csv_header(channels: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=channels).map(|c| format!("emg{c}")))
        .chain(std::iter::once("force".to_string()))
        .collect()
}

/// Splits leading `# key=value` metadata lines off a CSV document.
pub(crate) fn split_metadata(text: &str) -> (Vec<(String, String)>, &str) {
    let mut meta = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (line, tail) = line.split_once('\n').unwrap_or((line, ""));
        if let Some((k, v)) = line.trim().split_once('=') {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        }
        rest = tail;
    }
    (meta, rest)
}

/// Number of EMG channels named by a `t,emg1..emgK,force` header.
pub(crate) fn parse_header(path: &str, header: &csv::StringRecord, allow_missing_force: bool) -> Result<(usize, bool)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_force = names.last() == Some(&"force");
    let emg_names = if has_force { &names[1..names.len() - 1] } else if allow_missing_force { &names[1..] } else { &[][..] };
    let ok = names.first() == Some(&"t")
        && (has_force || allow_missing_force)
        && !emg_names.is_empty()
        && emg_names.iter().enumerate().all(|(i, n)| *n == format!("emg{}", i + 1));
    if !ok {
        return Err(Error::data(path, format!("unexpected header `{}`; expected `{}`", names.join(","), csv_header(EMG_CHANNELS).join(","))));
    }
    Ok((emg_names.len(), has_force))
}

/// Reads `t,emg1..emg8,force`. A leading `# sample_rate_hz=<v>` line
/// overrides `sample_rate_hz`; the subject id is the file stem.
pub fn read_recording_csv(path: &Path, sample_rate_hz: f64) -> Result<Recording> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let (meta, body) = split_metadata(&text);
    let mut fs_hz = sample_rate_hz;
    let mut subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    for (k, v) in meta {
        match k.as_str() {
            "sample_rate_hz" => {
                fs_hz = v
                    .parse()
                    .map_err(|_| Error::data(&shown, format!("bad sample_rate_hz `{v}`")))?
            }
            "subject" => subject = v,
            _ => {}
        }
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let (channels, _) = parse_header(&shown, rdr.headers()?, false)?;
    let mut emg = vec![Vec::new(); channels];
    let mut force = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != channels + 2 {
            return Err(Error::data(&shown, format!("row {} has {} fields, expected {}", i + 1, row.len(), channels + 2)));
        }
        let parse = |j: usize| -> Result<f64> {
            row[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::data(&shown, format!("row {}: cannot parse `{}`", i + 1, &row[j])))
        };
        for (c, ch) in emg.iter_mut().enumerate() {
            ch.push(parse(c + 1)?);
        }
        force.push(parse(channels + 1)?);
    }
    Recording::new(subject, fs_hz, emg, force).map_err(|e| Error::data(&shown, e.to_string()))
}

pub fn write_recording_csv(rec: &Recording, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(rec.n_samples() * 16 * (rec.n_channels() + 2));
    writeln!(out, "# sample_rate_hz={}", rec.sample_rate_hz).expect("write to Vec");
    writeln!(out, "# subject={}", rec.subject_id).expect("write to Vec");
    writeln!(out, "{}", csv_header(rec.n_channels()).join(",")).expect("write to Vec");
    for n in 0..rec.n_samples() {
        write!(out, "{}", n as f64 / rec.sample_rate_hz).expect("write to Vec");
        for ch in &rec.emg {
            write!(out, ",{}", ch[n]).expect("write to Vec");
        }
        writeln!(out, ",{}", rec.force[n]).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
