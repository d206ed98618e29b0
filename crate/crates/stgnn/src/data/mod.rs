//! Dataset ingestion, chronological splits, z-score scaling, and sliding
//! window construction.
//!
//! Series files are comma-separated with a `timestamp,<node_id>,...` header
//! and ISO-8601 timestamps at a fixed stride. Values stay in original
//! measurement units end to end; the trainer normalizes per batch and
//! inverse-transforms predictions before metrics.

pub mod synth;

use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Speed,
    Flow,
}

impl std::str::FromStr for SeriesKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<SeriesKind> {
        match s {
            "speed" => Ok(SeriesKind::Speed),
            "flow" => Ok(SeriesKind::Flow),
            other => Err(Error::Data(format!("unknown series kind '{other}' (speed|flow)"))),
        }
    }
}

impl std::fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SeriesKind::Speed => "speed",
            SeriesKind::Flow => "flow",
        })
    }
}

/// (day-of-week, slot-of-day) position of a timestep; the time identity
/// consumed by the spatial-temporal embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotStamp {
    /// 0 = Monday .. 6 = Sunday.
    pub dow: usize,
    pub slot: usize,
}

#[derive(Debug, Clone)]
pub struct SeriesDataset {
    values: Vec<f64>, // [t * n + node], original units
    t_len: usize,
    n: usize,
    node_ids: Vec<String>,
    timestamps: Vec<NaiveDateTime>,
    kind: SeriesKind,
    resolution_minutes: u32,
}

impl SeriesDataset {
    pub fn new(
        values: Vec<f64>,
        node_ids: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        kind: SeriesKind,
        resolution_minutes: u32,
    ) -> Result<SeriesDataset> {
        let n = node_ids.len();
        let t_len = timestamps.len();
        if values.len() != n * t_len {
            return Err(Error::Data(format!(
                "{} values do not fill {t_len} rows x {n} nodes",
                values.len()
            )));
        }
        if t_len == 0 || n == 0 {
            return Err(Error::Data("dataset must have at least one row and one node".into()));
        }
        if resolution_minutes == 0 || 1440 % resolution_minutes != 0 {
            return Err(Error::Data(format!(
                "resolution {resolution_minutes} min must divide a day"
            )));
        }
        let stride = chrono::Duration::minutes(resolution_minutes as i64);
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] - w[0] != stride {
                return Err(Error::Data(format!(
                    "row {}: timestamp stride {} != {} min resolution",
                    i + 3, // 1-based file row of the second element, counting the header
                    w[1] - w[0],
                    resolution_minutes
                )));
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, node {}",
                bad / n + 2,
                node_ids[bad % n]
            )));
        }
        if kind == SeriesKind::Flow {
            if let Some(bad) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::Data(format!(
                    "negative flow value at row {}, node {}",
                    bad / n + 2,
                    node_ids[bad % n]
                )));
            }
        }
        Ok(SeriesDataset { values, t_len, n, node_ids, timestamps, kind, resolution_minutes })
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    pub fn slots_per_day(&self) -> usize {
        (1440 / self.resolution_minutes) as usize
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t * self.n + node]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stamp(&self, t: usize) -> SlotStamp {
        let ts = &self.timestamps[t];
        SlotStamp {
            dow: ts.weekday().num_days_from_monday() as usize,
            slot: ((ts.hour() * 60 + ts.minute()) / self.resolution_minutes) as usize,
        }
    }

    /// Chronologically contiguous sub-dataset over rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<SeriesDataset> {
        if start >= end || end > self.t_len {
            return Err(Error::Data(format!("row range {start}..{end} out of {}", self.t_len)));
        }
        SeriesDataset::new(
            self.values[start * self.n..end * self.n].to_vec(),
            self.node_ids.clone(),
            self.timestamps[start..end].to_vec(),
            self.kind,
            self.resolution_minutes,
        )
    }
}

// ── CSV interface ───────────────────────────────────────────────────────

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TS_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

pub fn load_series_csv(
    path: &std::path::Path,
    kind: SeriesKind,
    resolution_minutes: u32,
) -> Result<SeriesDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    };
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("timestamp") {
        return Err(Error::Data(format!(
            "{}: header must start with 'timestamp'",
            path.display()
        )));
    }
    let node_ids: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if node_ids.is_empty() {
        return Err(Error::Data(format!("{}: header has no node columns", path.display())));
    }
    let n = node_ids.len();
    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let ts_text = parts.next().unwrap_or("");
        let ts = parse_timestamp(ts_text.trim()).ok_or_else(|| {
            Error::Data(format!("{}: row {row}: unparsable timestamp '{ts_text}'", path.display()))
        })?;
        let mut row_vals = Vec::with_capacity(n);
        for part in parts {
            let v: f64 = part.trim().parse().map_err(|_| {
                Error::Data(format!("{}: row {row}: unparsable value '{part}'", path.display()))
            })?;
            row_vals.push(v);
        }
        if row_vals.len() != n {
            return Err(Error::Data(format!(
                "{}: row {row}: expected {n} values, got {}",
                path.display(),
                row_vals.len()
            )));
        }
        timestamps.push(ts);
        values.extend_from_slice(&row_vals);
    }
    if timestamps.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    SeriesDataset::new(values, node_ids, timestamps, kind, resolution_minutes)
        .map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
}

pub fn save_series_csv(ds: &SeriesDataset, path: &std::path::Path) -> Result<()> {
    let mut out = String::from("timestamp");
    for id in ds.node_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for t in 0..ds.len() {
        out.push_str(&ds.timestamps()[t].format(TS_FORMAT).to_string());
        for node in 0..ds.n() {
            out.push(',');
            out.push_str(&format!("{}", ds.value(t, node)));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── splits ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Chronological fractions; boundaries floor to whole rows.
    Fractional { train: f64, val: f64, test: f64 },
    /// Whole-day splits cut at day boundaries from the start of the data.
    DayBased { train_days: usize, val_days: usize, test_days: usize },
}

pub fn split(ds: &SeriesDataset, spec: SplitSpec) -> Result<(SeriesDataset, SeriesDataset, SeriesDataset)> {
    let t = ds.len();
    let (b1, b2, b3) = match spec {
        SplitSpec::Fractional { train, val, test } => {
            if train < 0.0 || val < 0.0 || test < 0.0 || (train + val + test - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "split fractions ({train}, {val}, {test}) must be non-negative and sum to 1"
                )));
            }
            let b1 = (t as f64 * train).floor() as usize;
            let b2 = (t as f64 * (train + val)).floor() as usize;
            (b1, b2, t)
        }
        SplitSpec::DayBased { train_days, val_days, test_days } => {
            let spd = ds.slots_per_day();
            let need = (train_days + val_days + test_days) * spd;
            if need > t {
                return Err(Error::Data(format!(
                    "day-based split needs {need} rows ({} days x {spd} slots), dataset has {t}",
                    train_days + val_days + test_days
                )));
            }
            (train_days * spd, (train_days + val_days) * spd, need)
        }
    };
    if b1 == 0 || b2 <= b1 || b3 <= b2 {
        return Err(Error::Data("split produces an empty train, val, or test part".into()));
    }
    Ok((ds.slice_rows(0, b1)?, ds.slice_rows(b1, b2)?, ds.slice_rows(b2, b3)?))
}

// ── scaling ─────────────────────────────────────────────────────────────

/// Z-score scaler fit on the training portion only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

pub fn scaler_fit(train: &SeriesDataset) -> Result<Scaler> {
    let vals = train.values();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return Err(Error::Data(format!("training series is constant (std {std:e}); cannot scale")));
    }
    Ok(Scaler { mean, std })
}

impl Scaler {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn forward_slice(&self, xs: &mut [f64]) {
        for v in xs {
            *v = self.forward(*v);
        }
    }

    pub fn inverse_slice(&self, zs: &mut [f64]) {
        for v in zs {
            *v = self.inverse(*v);
        }
    }
}

// ── windows ─────────────────────────────────────────────────────────────

/// One materialized mini-batch in original measurement units.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// [B, P, n, 1]
    pub x: Tensor,
    /// [B, Q, n]
    pub y: Tensor,
    /// Per sample, the P input (dow, slot) stamps.
    pub input_stamps: Vec<Vec<SlotStamp>>,
    /// Per sample, the Q target stamps.
    pub target_stamps: Vec<Vec<SlotStamp>>,
}

/// Index of sliding windows over a dataset; batches materialize on demand
/// so shuffled epochs do not copy the series.
#[derive(Debug, Clone)]
pub struct WindowSet {
    ds: Arc<SeriesDataset>,
    p: usize,
    q: usize,
    starts: Vec<usize>,
}

pub fn make_windows(ds: Arc<SeriesDataset>, p: usize, q: usize, stride: usize) -> Result<WindowSet> {
    if p == 0 || q == 0 || stride == 0 {
        return Err(Error::Data("window sizes and stride must be positive".into()));
    }
    let t = ds.len();
    if t < p + q {
        return Err(Error::Data(format!(
            "need at least P+Q = {} rows for one window, dataset has {t}",
            p + q
        )));
    }
    let starts: Vec<usize> = (0..=(t - p - q)).step_by(stride).collect();
    Ok(WindowSet { ds, p, q, starts })
}

impl WindowSet {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dataset(&self) -> &Arc<SeriesDataset> {
        &self.ds
    }

    /// First target timestamp of each sample, in sample order.
    pub fn target_start_timestamps(&self) -> Vec<NaiveDateTime> {
        self.starts.iter().map(|&s| self.ds.timestamps()[s + self.p]).collect()
    }

    /// Materialize the samples at `ids` (positions into the window list).
    pub fn batch(&self, ids: &[usize]) -> WindowBatch {
        let (n, p, q) = (self.ds.n(), self.p, self.q);
        let b = ids.len();
        let mut x = Vec::with_capacity(b * p * n);
        let mut y = Vec::with_capacity(b * q * n);
        let mut input_stamps = Vec::with_capacity(b);
        let mut target_stamps = Vec::with_capacity(b);
        for &id in ids {
            let start = self.starts[id];
            for t in start..start + p {
                x.extend_from_slice(self.ds.row(t));
            }
            for t in start + p..start + p + q {
                y.extend_from_slice(self.ds.row(t));
            }
            input_stamps.push((start..start + p).map(|t| self.ds.stamp(t)).collect());
            target_stamps.push((start + p..start + p + q).map(|t| self.ds.stamp(t)).collect());
        }
        WindowBatch {
            x: Tensor::new(x, &[b, p, n, 1]).expect("window x shape"),
            y: Tensor::new(y, &[b, q, n]).expect("window y shape"),
            input_stamps,
            target_stamps,
        }
    }

    /// All samples in chronological order, chunked into batches.
    pub fn sequential_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        let ids: Vec<usize> = (0..self.count()).collect();
        ids.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}
