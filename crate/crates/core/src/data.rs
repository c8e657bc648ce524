//! Dataset ingestion, chronological splits, and train-fitted standardization.
//!
//! Files are ETT-style CSVs: a header row, a first `date` column kept as an
//! opaque label, then one numeric column per channel.
//!
//! Two normalizations are applied and they are not the same thing. Dataset
//! standardization (this module) scales every channel by mean and standard
//! deviation fitted on the training split once, and all metrics are reported
//! in those units. Instance normalization ([`crate::rin`]) then centres each
//! look-back window on the fly inside the model.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MmfError, Result};
use crate::rng::Rng;
use crate::series::{FrameWindows, TimeSeriesFrame};

/// Environment variable consulted for relative dataset paths.
pub const DATA_DIR_ENV: &str = "MMF_DATA_DIR";

const HOURS_PER_MONTH: usize = 30 * 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitPolicy {
    /// 12 / 4 / 4 months of hourly rows.
    EttHourly,
    /// 12 / 4 / 4 months of 15-minute rows.
    EttMinute,
    /// Leading fractions; train and test are floored, validation takes the rest.
    Ratio { train: f64, val: f64, test: f64 },
}

impl SplitPolicy {
    pub fn validate(&self) -> Result<()> {
        if let SplitPolicy::Ratio { train, val, test } = *self {
            if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(MmfError::Config("split ratios must lie in [0, 1]".into()));
            }
            if ((train + val + test) - 1.0).abs() > 1e-9 {
                return Err(MmfError::Config(format!(
                    "split ratios sum to {}, expected 1",
                    train + val + test
                )));
            }
        }
        Ok(())
    }

    /// Core row ranges of the three splits for a series of `rows` rows.
    pub fn boundaries(&self, rows: usize) -> Result<SplitBoundaries> {
        self.validate()?;
        let (train, val, test) = match *self {
            SplitPolicy::EttHourly => (12 * HOURS_PER_MONTH, 4 * HOURS_PER_MONTH, 4 * HOURS_PER_MONTH),
            SplitPolicy::EttMinute => (
                12 * HOURS_PER_MONTH * 4,
                4 * HOURS_PER_MONTH * 4,
                4 * HOURS_PER_MONTH * 4,
            ),
            SplitPolicy::Ratio { train, test, .. } => {
                // tolerate representation error such as 0.7 * 100 = 70.00000000000001
                let n_train = (rows as f64 * train + 1e-9).floor() as usize;
                let n_test = (rows as f64 * test + 1e-9).floor() as usize;
                (n_train, rows.saturating_sub(n_train + n_test), n_test)
            }
        };
        if train + val + test > rows || train == 0 || val == 0 || test == 0 {
            return Err(MmfError::InsufficientData {
                needed: (train + val + test).max(3),
                available: rows,
            });
        }
        Ok(SplitBoundaries {
            train: 0..train,
            val: train..train + val,
            test: train + val..train + val + test,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "validation",
            SplitPart::Test => "test",
        }
    }
}

impl SplitBoundaries {
    pub fn range(&self, part: SplitPart) -> Range<usize> {
        match part {
            SplitPart::Train => self.train.clone(),
            SplitPart::Val => self.val.clone(),
            SplitPart::Test => self.test.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_channels: Option<usize>,
    #[serde(default)]
    pub sampling: String,
    pub split_policy: SplitPolicy,
}

impl DatasetSpec {
    /// The public benchmark datasets, with their expected file names.
    pub fn builtin(name: &str) -> Option<DatasetSpec> {
        let ratio = SplitPolicy::Ratio {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        };
        let (file, channels, sampling, policy) = match name {
            "ETTh1" => ("ETTh1.csv", 7, "1 hour", SplitPolicy::EttHourly),
            "ETTh2" => ("ETTh2.csv", 7, "1 hour", SplitPolicy::EttHourly),
            "ETTm1" => ("ETTm1.csv", 7, "15 min", SplitPolicy::EttMinute),
            "ETTm2" => ("ETTm2.csv", 7, "15 min", SplitPolicy::EttMinute),
            "Weather" => ("weather.csv", 21, "10 min", ratio),
            "Electricity" => ("electricity.csv", 321, "1 hour", ratio),
            "Traffic" => ("traffic.csv", 862, "1 hour", ratio),
            _ => return None,
        };
        Some(DatasetSpec {
            name: name.to_string(),
            path: PathBuf::from(file),
            expected_channels: Some(channels),
            sampling: sampling.to_string(),
            split_policy: policy,
        })
    }

    /// The configured path, falling back to `$MMF_DATA_DIR/<path>` when the path
    /// is relative and does not exist as given.
    pub fn resolved_path(&self) -> PathBuf {
        resolve_data_path(&self.path, std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).as_deref())
    }
}

pub fn resolve_data_path(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match data_dir {
        Some(dir) => dir.join(path),
        None => path.to_path_buf(),
    }
}

/// Parses a CSV file with the layout described in the module docs.
pub fn load_csv(spec: &DatasetSpec) -> Result<TimeSeriesFrame> {
    let path = spec.resolved_path();
    let file = std::fs::File::open(&path).map_err(|e| MmfError::io(&path, e))?;
    let frame = read_csv(file)?;
    if let Some(expected) = spec.expected_channels {
        if frame.n_channels() != expected {
            return Err(MmfError::ChannelMismatch {
                expected,
                found: frame.n_channels(),
            });
        }
    }
    Ok(frame)
}

/// Parses CSV text from any reader. Line numbers in errors are 1-based and
/// count the header.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.len() < 2 {
        return Err(MmfError::Parse {
            line: 1,
            column: 1,
            message: "expected a date column followed by at least one channel".into(),
        });
    }
    let channels: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let c = channels.len();
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != c + 1 {
            return Err(MmfError::Parse {
                line,
                column: record.len(),
                message: format!("expected {} fields, found {}", c + 1, record.len()),
            });
        }
        stamps.push(record[0].to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                return Err(MmfError::MissingValue {
                    line,
                    column: j + 2,
                    channel: channels[j].clone(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| MmfError::Parse {
                line,
                column: j + 2,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(MmfError::Parse {
                    line,
                    column: j + 2,
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
        }
    }
    let rows = stamps.len();
    if rows == 0 {
        return Err(MmfError::EmptyInput);
    }
    let values = Array2::from_shape_vec((rows, c), values).expect("row lengths checked");
    TimeSeriesFrame::new(channels, values, Some(stamps))
}

fn csv_error(e: csv::Error) -> MmfError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(err) => MmfError::io("<csv>", err),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => MmfError::Parse {
            line,
            column: len as usize,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => MmfError::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes a frame in the same layout [`read_csv`] accepts.
pub fn write_csv(frame: &TimeSeriesFrame, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MmfError::io(path, e.into()))?;
    let io = |e: csv::Error| MmfError::io(path, e.into());
    let mut header = vec!["date".to_string()];
    header.extend(frame.channels().iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (r, row) in frame.values().rows().into_iter().enumerate() {
        let mut rec = vec![frame.timestamps().map_or_else(|| r.to_string(), |t| t[r].clone())];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| MmfError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TimeSeriesFrame,
    pub val: TimeSeriesFrame,
    pub test: TimeSeriesFrame,
    pub boundaries: SplitBoundaries,
}

/// Contiguous chronological train/validation/test core rows.
pub fn split(frame: &TimeSeriesFrame, policy: &SplitPolicy) -> Result<Splits> {
    let b = policy.boundaries(frame.n_rows())?;
    Ok(Splits {
        train: frame.rows(b.train.clone())?,
        val: frame.rows(b.val.clone())?,
        test: frame.rows(b.test.clone())?,
        boundaries: b,
    })
}

/// Per-channel mean and population standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

impl StandardizationStats {
    pub fn fit(train: &TimeSeriesFrame) -> Self {
        let eps = crate::rin::DEFAULT_EPS;
        let v = train.values();
        let mean: Array1<f64> = v.mean_axis(Axis(0)).expect("frames are non-empty");
        let std: Vec<f64> = v
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, m)| {
                let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
                var.sqrt().max(eps)
            })
            .collect();
        Self {
            mean: mean.to_vec(),
            std,
            eps,
        }
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let mut v = frame.values().clone();
        for (c, mut col) in v.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.mapv_inplace(|x| (x - m) / s);
        }
        Ok(frame.with_values(v))
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let mut v = frame.values().clone();
        for (c, mut col) in v.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            col.mapv_inplace(|x| x * s + m);
        }
        Ok(frame.with_values(v))
    }

    fn check(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.n_channels() != self.mean.len() {
            return Err(MmfError::ChannelMismatch {
                expected: self.mean.len(),
                found: frame.n_channels(),
            });
        }
        Ok(())
    }
}

/// Standardizes all three splits with statistics of `train` alone.
pub fn standardize(
    train: &TimeSeriesFrame,
    val: &TimeSeriesFrame,
    test: &TimeSeriesFrame,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame, TimeSeriesFrame, StandardizationStats)> {
    let stats = StandardizationStats::fit(train);
    Ok((stats.apply(train)?, stats.apply(val)?, stats.apply(test)?, stats))
}

/// A standardized series with split boundaries, ready to cut into windows.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: Arc<TimeSeriesFrame>,
    pub boundaries: SplitBoundaries,
    pub stats: StandardizationStats,
}

impl PreparedData {
    pub fn new(raw: &TimeSeriesFrame, policy: &SplitPolicy) -> Result<Self> {
        let boundaries = policy.boundaries(raw.n_rows())?;
        let stats = StandardizationStats::fit(&raw.rows(boundaries.train.clone())?);
        let used = raw.rows(0..boundaries.test.end)?;
        Ok(Self {
            frame: Arc::new(stats.apply(&used)?),
            boundaries,
            stats,
        })
    }

    /// Sliding windows whose targets lie inside the split's core rows. The
    /// look-back of the first window reaches `lookback` rows back into the
    /// preceding split, when there is one.
    pub fn windows(&self, part: SplitPart, lookback: usize, horizon: usize, stride: usize) -> Result<FrameWindows> {
        let core = self.boundaries.range(part);
        let start = core.start.saturating_sub(lookback);
        FrameWindows::new(self.frame.clone(), start..core.end, lookback, horizon, stride)
    }
}

/// Deterministic multi-periodic test series: per channel, a daily and a
/// weekly cycle at channel-specific phases, a slow trend, and small noise.
pub fn synthetic_frame(rows: usize, channels: usize, seed: u64) -> Result<TimeSeriesFrame> {
    let mut rng = Rng::new(seed);
    let params: Vec<[f64; 5]> = (0..channels)
        .map(|_| {
            [
                rng.uniform(0.5, 2.0),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.2, 1.0),
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(-1.0, 1.0),
            ]
        })
        .collect();
    let mut v = Array2::zeros((rows, channels));
    for r in 0..rows {
        let t = r as f64;
        for (c, p) in params.iter().enumerate() {
            let daily = p[0] * (std::f64::consts::TAU * t / 24.0 + p[1]).sin();
            let weekly = p[2] * (std::f64::consts::TAU * t / 168.0 + p[3]).sin();
            let trend = p[4] * t / rows.max(1) as f64;
            v[[r, c]] = daily + weekly + trend + 0.1 * rng.normal();
        }
    }
    let stamps = (0..rows).map(|r| format!("t{r}")).collect();
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    TimeSeriesFrame::new(names, v, Some(stamps))
}
