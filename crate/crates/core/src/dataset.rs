//! Supervised windows over normalized tables: `W` consecutive EMG rows paired
//! with the force `H` steps after the window's last row.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{Segment, Table};

/// Column-split copy of a table: row-major EMG `[N × C]` plus force `[N]`,
/// so every window's input is one contiguous slice.
#[derive(Debug)]
struct SeriesStore {
    channels: usize,
    emg: Vec<f64>,
    force: Vec<f64>,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowIndex {
    segment: usize,
    /// Global row of the window's first timestep.
    start: usize,
}

/// One `(input window, target)` pair borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    /// Row-major `[W × C]`.
    pub input: &'a [f64],
    /// Scalar target (length 1), or the next `H` force values in multi-horizon mode.
    pub targets: &'a [f64],
    pub window_len: usize,
    pub channels: usize,
}

impl Sample<'_> {
    pub fn timestep(&self, t: usize) -> &[f64] {
        &self.input[t * self.channels..(t + 1) * self.channels]
    }

    /// Force at the prediction horizon.
    pub fn target(&self) -> f64 {
        *self.targets.last().expect("sample has a target")
    }
}

/// Row-major concatenation of the window's timesteps.
pub fn flatten_for_mlp(s: &Sample<'_>) -> Vec<f64> {
    s.input.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub horizon: usize,
    /// Emit all `H` future force values as targets instead of only the `H`-th.
    pub multi_horizon: bool,
}

impl WindowSpec {
    pub fn new(window_len: usize, horizon: usize) -> Self {
        Self {
            window_len,
            horizon,
            multi_horizon: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.multi_horizon {
            self.horizon
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowedDataset {
    store: Arc<SeriesStore>,
    spec: WindowSpec,
    index: Vec<WindowIndex>,
}

pub fn make_windows(table: &Table, window_len: usize, horizon: usize) -> Result<WindowedDataset> {
    make_windows_with(table, WindowSpec::new(window_len, horizon))
}

pub fn make_windows_with(table: &Table, spec: WindowSpec) -> Result<WindowedDataset> {
    let (w, h) = (spec.window_len, spec.horizon);
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!("window length and horizon must be ≥ 1 (got W={w}, H={h})")));
    }
    for seg in table.segments() {
        if seg.len < w + h {
            return Err(Error::TooShort(format!(
                "recording `{}` has {} rows but W + H = {}; {} more rows needed",
                seg.id,
                seg.len,
                w + h,
                w + h - seg.len
            )));
        }
    }
    let channels = table.emg_channels();
    let mut emg = Vec::with_capacity(table.rows() * channels);
    let mut force = Vec::with_capacity(table.rows());
    for r in 0..table.rows() {
        let row = table.row(r);
        emg.extend_from_slice(&row[..channels]);
        force.push(row[channels]);
    }
    let index = table
        .segments()
        .iter()
        .enumerate()
        .flat_map(|(s, seg)| (0..seg.len + 1 - w - h).map(move |i| WindowIndex { segment: s, start: seg.start + i }))
        .collect();
    Ok(WindowedDataset {
        store: Arc::new(SeriesStore {
            channels,
            emg,
            force,
            segments: table.segments().to_vec(),
        }),
        spec,
        index,
    })
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn window_len(&self) -> usize {
        self.spec.window_len
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn channels(&self) -> usize {
        self.store.channels
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let WindowIndex { start, .. } = self.index[i];
        let (w, c) = (self.spec.window_len, self.store.channels);
        let last = start + w - 1;
        let targets = if self.spec.multi_horizon {
            &self.store.force[last + 1..=last + self.spec.horizon]
        } else {
            let t = last + self.spec.horizon;
            &self.store.force[t..=t]
        };
        Sample {
            input: &self.store.emg[start * c..(start + w) * c],
            targets,
            window_len: w,
            channels: c,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Global table row holding the `H`-step target of sample `i`.
    pub fn target_row(&self, i: usize) -> usize {
        self.index[i].start + self.spec.window_len - 1 + self.spec.horizon
    }

    /// Id of the recording sample `i` was cut from.
    pub fn source_id(&self, i: usize) -> &str {
        &self.store.segments[self.index[i].segment].id
    }

    /// Horizon-step targets in sample order.
    pub fn targets(&self) -> Vec<f64> {
        self.iter().map(|s| s.target()).collect()
    }

    /// All target values in sample order (length `len × output_dim`).
    pub fn flat_targets(&self) -> Vec<f64> {
        self.iter().flat_map(|s| s.targets.iter().copied()).collect()
    }

    /// Copies the inputs of `indices` into `buf` as `[B × W·C]`.
    pub fn gather_inputs(&self, indices: &[usize], buf: &mut Vec<f64>) {
        buf.clear();
        for &i in indices {
            buf.extend_from_slice(self.sample(i).input);
        }
    }

    pub fn gather_targets(&self, indices: &[usize], buf: &mut Vec<f64>) {
        buf.clear();
        for &i in indices {
            buf.extend_from_slice(self.sample(i).targets);
        }
    }

    fn subset(&self, keep: Vec<WindowIndex>) -> WindowedDataset {
        WindowedDataset {
            store: Arc::clone(&self.store),
            spec: self.spec,
            index: keep,
        }
    }

    fn per_segment_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.store.segments.len()];
        for w in &self.index {
            counts[w.segment] += 1;
        }
        counts
    }

    pub fn manifest(&self) -> Vec<SourceSpan> {
        let counts = self.per_segment_counts();
        self.store
            .segments
            .iter()
            .zip(counts)
            .map(|(s, samples)| SourceSpan {
                id: s.id.clone(),
                row_start: s.start,
                rows: s.len,
                samples,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Hold out the last windows of every recording.
    #[default]
    Tail,
    /// Seeded random hold-out over all windows.
    Shuffle,
}

/// Number of held-out samples: `⌊count · eval_fraction⌋`, at least one.
pub fn eval_count(count: usize, eval_fraction: f64) -> usize {
    ((count as f64 * eval_fraction).floor() as usize).max(1).min(count)
}

pub fn split_train_eval(
    ds: &WindowedDataset,
    eval_fraction: f64,
    seed: u64,
    policy: SplitPolicy,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::invalid(format!("eval fraction must lie in (0, 1), got {eval_fraction}")));
    }
    if ds.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let k = eval_count(ds.len(), eval_fraction);
    let mut is_eval = vec![false; ds.len()];
    match policy {
        SplitPolicy::Tail => {
            let counts = ds.per_segment_counts();
            let quotas = apportion(&counts, k);
            let mut seen = vec![0usize; counts.len()];
            for (i, w) in ds.index.iter().enumerate() {
                let s = w.segment;
                is_eval[i] = seen[s] >= counts[s] - quotas[s];
                seen[s] += 1;
            }
        }
        SplitPolicy::Shuffle => {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for &i in &order[..k] {
                is_eval[i] = true;
            }
        }
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (w, e) in ds.index.iter().zip(is_eval) {
        if e {
            eval.push(*w);
        } else {
            train.push(*w);
        }
    }
    Ok((ds.subset(train), ds.subset(eval)))
}

/// Largest-remainder split of `k` across groups proportionally to `counts`.
fn apportion(counts: &[usize], k: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut quotas: Vec<usize> = counts.iter().map(|&c| c * k / total).collect();
    let mut rest: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, &c)| (c * k % total, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = k - quotas.iter().sum::<usize>();
    for (_, i) in rest {
        if missing == 0 {
            break;
        }
        if quotas[i] < counts[i] {
            quotas[i] += 1;
            missing -= 1;
        }
    }
    quotas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub id: String,
    pub row_start: usize,
    pub rows: usize,
    pub samples: usize,
}

/// Everything needed to rebuild a train/eval split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window_len: usize,
    pub horizon: usize,
    pub multi_horizon: bool,
    pub eval_fraction: f64,
    pub split_policy: SplitPolicy,
    pub split_seed: u64,
    pub source_files: Vec<String>,
    pub sources: Vec<SourceSpan>,
    pub total_samples: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
}

impl DatasetManifest {
    pub fn describe(
        full: &WindowedDataset,
        train: &WindowedDataset,
        eval: &WindowedDataset,
        eval_fraction: f64,
        split_policy: SplitPolicy,
        split_seed: u64,
        source_files: Vec<String>,
    ) -> Self {
        Self {
            window_len: full.window_len(),
            horizon: full.horizon(),
            multi_horizon: full.spec.multi_horizon,
            eval_fraction,
            split_policy,
            split_seed,
            source_files,
            sources: full.manifest(),
            total_samples: full.len(),
            train_samples: train.len(),
            eval_samples: eval.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// EMG values encode (row, channel) so slices can be checked by value.
    fn table(lens: &[usize]) -> Table {
        let mut data = Vec::new();
        let mut segments = Vec::new();
        let mut row = 0;
        for (s, &n) in lens.iter().enumerate() {
            segments.push(Segment { id: format!("s{s}"), start: row, len: n });
            for _ in 0..n {
                data.extend((0..8).map(|c| (row * 10 + c) as f64));
                data.push(row as f64);
                row += 1;
            }
        }
        Table::new(9, 200.0, data, segments).unwrap()
    }

    #[test]
    fn count_and_first_sample() {
        let ds = make_windows(&table(&[10]), 4, 1).unwrap();
        assert_eq!(ds.len(), 6);
        let s = ds.sample(0);
        assert_eq!(s.input.len(), 32);
        assert_eq!(s.timestep(0)[0], 0.0);
        assert_eq!(s.timestep(3)[7], 37.0);
        assert_eq!(s.target(), 4.0);
    }

    #[test]
    fn longer_horizon() {
        let ds = make_windows(&table(&[10]), 4, 5).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample(0).target(), 8.0);
        assert_eq!(ds.target_row(1), 9);
    }

    #[test]
    fn too_short_is_an_error() {
        let err = make_windows(&table(&[4]), 4, 1).unwrap_err();
        assert!(matches!(err, Error::TooShort(ref m) if m.contains("1 more")));
    }

    #[test]
    fn horizon_algebra() {
        let t = table(&[50]);
        for h in 1..10 {
            let a = make_windows(&t, 7, h).unwrap().len();
            let b = make_windows(&t, 7, h + 1).unwrap().len();
            assert_eq!(a, b + 1);
        }
    }

    #[test]
    fn windows_stay_inside_recordings() {
        let ds = make_windows(&table(&[10, 8]), 4, 2).unwrap();
        assert_eq!(ds.len(), (10 - 4 - 2 + 1) + (8 - 4 - 2 + 1));
        for (i, s) in ds.iter().enumerate() {
            let first_row = (s.input[0] / 10.0) as usize;
            let seg = if first_row < 10 { 0..10 } else { 10..18 };
            assert!(seg.contains(&first_row) && seg.contains(&ds.target_row(i)));
            assert_eq!(s.target(), ds.target_row(i) as f64);
        }
    }

    #[test]
    fn flatten_examples() {
        let ds = make_windows(&table(&[10]), 1, 1).unwrap();
        let s = ds.sample(3);
        assert_eq!(flatten_for_mlp(&s), s.timestep(0).to_vec());
        let ds = make_windows(&table(&[10]), 2, 1).unwrap();
        let s = ds.sample(0);
        let flat = flatten_for_mlp(&s);
        assert_eq!(flat.len(), 16);
        assert_eq!(flat, [s.timestep(0), s.timestep(1)].concat());
    }

    #[test]
    fn multi_horizon_targets() {
        let spec = WindowSpec { window_len: 3, horizon: 3, multi_horizon: true };
        let ds = make_windows_with(&table(&[10]), spec).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.sample(0).targets, &[3.0, 4.0, 5.0]);
        assert_eq!(ds.sample(0).target(), 5.0);
        assert_eq!(ds.output_dim(), 3);
    }

    #[test]
    fn split_sizes() {
        let ds = make_windows(&table(&[104]), 4, 1).unwrap();
        assert_eq!(ds.len(), 100);
        let (train, eval) = split_train_eval(&ds, 0.15, 0, SplitPolicy::Tail).unwrap();
        assert_eq!((train.len(), eval.len()), (85, 15));
        let small = make_windows(&table(&[10]), 4, 1).unwrap();
        let (train, eval) = split_train_eval(&small, 0.15, 0, SplitPolicy::Tail).unwrap();
        assert_eq!((train.len(), eval.len()), (5, 1));
        assert!(split_train_eval(&ds, 0.0, 0, SplitPolicy::Tail).is_err());
        assert!(split_train_eval(&ds, 1.0, 0, SplitPolicy::Shuffle).is_err());
    }

    #[test]
    fn tail_split_has_no_leakage() {
        let ds = make_windows(&table(&[60, 45, 80]), 5, 3).unwrap();
        let (train, eval) = split_train_eval(&ds, 0.15, 9, SplitPolicy::Tail).unwrap();
        assert_eq!(eval.len(), eval_count(ds.len(), 0.15));
        for e in 0..eval.len() {
            for t in 0..train.len() {
                if eval.source_id(e) == train.source_id(t) {
                    assert!(eval.target_row(e) > train.target_row(t));
                }
            }
        }
    }

    #[test]
    fn shuffle_split_is_seeded() {
        let ds = make_windows(&table(&[200]), 4, 1).unwrap();
        let rows = |d: &WindowedDataset| (0..d.len()).map(|i| d.target_row(i)).collect::<Vec<_>>();
        let (a_tr, a_ev) = split_train_eval(&ds, 0.15, 5, SplitPolicy::Shuffle).unwrap();
        let (b_tr, b_ev) = split_train_eval(&ds, 0.15, 5, SplitPolicy::Shuffle).unwrap();
        let (_, c_ev) = split_train_eval(&ds, 0.15, 6, SplitPolicy::Shuffle).unwrap();
        assert_eq!(rows(&a_tr), rows(&b_tr));
        assert_eq!(rows(&a_ev), rows(&b_ev));
        assert_ne!(rows(&a_ev), rows(&c_ev));
        let mut all = [rows(&a_tr), rows(&a_ev)].concat();
        all.sort_unstable();
        assert_eq!(all, rows(&ds));
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[50, 50, 50], 22), vec![8, 7, 7]);
        assert_eq!(apportion(&[1, 99], 15), vec![0, 15]);
        assert_eq!(apportion(&[10], 1), vec![1]);
    }
}
