use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::filter::check_rate;
use super::recording::{parse_header, split_metadata, Recording};
use crate::error::{Error, Result};

/// Contiguous block of rows that came from one recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

/// Row-major `[N × (C + 1)]` table: `C` EMG columns then force, with the
/// recording boundaries kept as segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: usize,
    sample_rate_hz: f64,
    data: Vec<f64>,
    segments: Vec<Segment>,
}

impl Table {
    pub fn new(columns: usize, sample_rate_hz: f64, data: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        if columns < 2 {
            return Err(Error::shape("table needs at least one EMG column and a force column"));
        }
        if data.len() % columns != 0 {
            return Err(Error::shape(format!("{} values do not fill {columns}-column rows", data.len())));
        }
        let rows = data.len() / columns;
        let covered: usize = segments.iter().map(|s| s.len).sum();
        let contiguous = segments.iter().scan(0, |next, s| {
            let ok = s.start == *next && s.len > 0;
            *next += s.len;
            Some(ok)
        });
        if covered != rows || !contiguous.into_iter().all(|ok| ok) {
            return Err(Error::shape("segments must tile the table rows in order"));
        }
        Ok(Self {
            columns,
            sample_rate_hz,
            data,
            segments,
        })
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn emg_channels(&self) -> usize {
        self.columns - 1
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.columns
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.columns..(r + 1) * self.columns]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.columns).copied()
    }

    pub fn force_column(&self) -> impl Iterator<Item = f64> + '_ {
        self.column(self.columns - 1)
    }

    fn with_data(&self, data: Vec<f64>) -> Table {
        Table {
            columns: self.columns,
            sample_rate_hz: self.sample_rate_hz,
            data,
            segments: self.segments.clone(),
        }
    }
}

/// Per-column minimum and maximum of a fitted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::shape("min and max must be non-empty and equally long"));
        }
        if let Some(c) = (0..min.len()).find(|&c| !(max[c] >= min[c])) {
            return Err(Error::invalid(format!("column {c}: max {} < min {}", max[c], min[c])));
        }
        Ok(Self { min, max })
    }

    pub fn fit(table: &Table) -> Self {
        let mut min = vec![f64::INFINITY; table.columns];
        let mut max = vec![f64::NEG_INFINITY; table.columns];
        for row in table.data.chunks_exact(table.columns) {
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        for c in 0..table.columns {
            if min[c] == max[c] {
                log::warn!("column {c} is constant ({}); it will normalize to 0.5", min[c]);
            }
        }
        Self { min, max }
    }

    pub fn columns(&self) -> usize {
        self.min.len()
    }

    /// `(v − min)/(max − min)`, or 0.5 on a constant column.
    #[inline]
    pub fn apply_value(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span > 0.0 {
            (v - self.min[c]) / span
        } else {
            0.5
        }
    }

    /// Inverse of [`Self::apply_value`]; a constant column maps back to its min.
    #[inline]
    pub fn invert_value(&self, c: usize, v: f64) -> f64 {
        let span = self.max[c] - self.min[c];
        if span > 0.0 {
            self.min[c] + v * span
        } else {
            self.min[c]
        }
    }

    pub fn force_column(&self) -> usize {
        self.columns() - 1
    }

    fn check(&self, table: &Table) -> Result<()> {
        if table.columns != self.columns() {
            return Err(Error::shape(format!(
                "scaler has {} columns, table has {}",
                self.columns(),
                table.columns
            )));
        }
        Ok(())
    }
}

pub fn minmax_apply(params: &ScalerParams, table: &Table) -> Result<Table> {
    params.check(table)?;
    let cols = table.columns;
    let data = table.data.iter().enumerate().map(|(i, &v)| params.apply_value(i % cols, v)).collect();
    Ok(table.with_data(data))
}

pub fn minmax_invert(params: &ScalerParams, table: &Table) -> Result<Table> {
    params.check(table)?;
    let cols = table.columns;
    let data = table.data.iter().enumerate().map(|(i, &v)| params.invert_value(i % cols, v)).collect();
    Ok(table.with_data(data))
}

/// Concatenates recordings in order (one segment each) and fits the scaler
/// on the merged rows.
pub fn merge_and_fit_scaler(recs: &[Recording]) -> Result<(Table, ScalerParams)> {
    let merged = merge_recordings(recs)?;
    let scaler = ScalerParams::fit(&merged);
    Ok((merged, scaler))
}

pub fn merge_recordings(recs: &[Recording]) -> Result<Table> {
    let first = recs.first().ok_or_else(|| Error::invalid("no recordings to merge"))?;
    let channels = first.n_channels();
    let columns = channels + 1;
    let mut data = Vec::with_capacity(recs.iter().map(|r| r.n_samples() * columns).sum());
    let mut segments = Vec::with_capacity(recs.len());
    for rec in recs {
        if rec.n_channels() != channels {
            return Err(Error::shape(format!(
                "recording `{}` has {} EMG channels, expected {channels}",
                rec.subject_id,
                rec.n_channels()
            )));
        }
        check_rate(first.sample_rate_hz(), rec.sample_rate_hz())?;
        segments.push(Segment {
            id: rec.subject_id.clone(),
            start: data.len() / columns,
            len: rec.n_samples(),
        });
        for n in 0..rec.n_samples() {
            data.extend(rec.emg().iter().map(|ch| ch[n]));
            data.push(rec.force()[n]);
        }
    }
    Table::new(columns, first.sample_rate_hz(), data, segments)
}

/// Writes `subject,t,emg1..emgC,force`, where `t` restarts at each segment.
pub fn write_table_csv(table: &Table, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# sample_rate_hz={}", table.sample_rate_hz).expect("write to Vec");
    let header = super::recording::csv_header(table.emg_channels()).join(",");
    writeln!(out, "subject,{header}").expect("write to Vec");
    for seg in &table.segments {
        for n in 0..seg.len {
            write!(out, "{},{}", seg.id, n as f64 / table.sample_rate_hz).expect("write to Vec");
            for v in table.row(seg.start + n) {
                write!(out, ",{v}").expect("write to Vec");
            }
            out.push(b'\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_table_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let shown = path.display().to_string();
    let (meta, body) = split_metadata(&text);
    let fs_hz = meta
        .iter()
        .find(|(k, _)| k == "sample_rate_hz")
        .map(|(_, v)| v.parse::<f64>().map_err(|_| Error::data(&shown, format!("bad sample_rate_hz `{v}`"))))
        .transpose()?
        .unwrap_or(super::recording::DEFAULT_SAMPLE_RATE_HZ);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr.headers()?.clone();
    if header.get(0).map(str::trim) != Some("subject") {
        return Err(Error::data(&shown, "processed table must start with a `subject` column"));
    }
    let rest: csv::StringRecord = header.iter().skip(1).collect();
    let (channels, _) = parse_header(&shown, &rest, false)?;
    let columns = channels + 1;
    let mut data = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != columns + 2 {
            return Err(Error::data(&shown, format!("row {} has {} fields, expected {}", i + 1, row.len(), columns + 2)));
        }
        let id = &row[0];
        match segments.last_mut() {
            Some(s) if s.id == id => s.len += 1,
            _ => segments.push(Segment { id: id.to_string(), start: i, len: 1 }),
        }
        for j in 2..columns + 2 {
            let v: f64 = row[j]
                .trim()
                .parse()
                .map_err(|_| Error::data(&shown, format!("row {}: cannot parse `{}`", i + 1, &row[j])))?;
            data.push(v);
        }
    }
    Table::new(columns, fs_hz, data, segments).map_err(|e| Error::data(&shown, e.to_string()))
}
