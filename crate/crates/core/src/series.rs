//! Multivariate series and sliding forecast windows.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{MmfError, Result};

/// A multivariate series: one column per channel, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    channels: Vec<String>,
    values: Array2<f64>,
    timestamps: Option<Vec<String>>,
}

impl TimeSeriesFrame {
    pub fn new(channels: Vec<String>, values: Array2<f64>, timestamps: Option<Vec<String>>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(MmfError::EmptyInput);
        }
        if channels.len() != cols {
            return Err(MmfError::Shape(format!(
                "{} channel names for {} value columns",
                channels.len(),
                cols
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != rows {
                return Err(MmfError::Shape(format!("{} timestamps for {} rows", ts.len(), rows)));
            }
        }
        if let Some(((r, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(MmfError::Shape(format!("non-finite value at row {r}, column {c}")));
        }
        Ok(Self {
            channels,
            values,
            timestamps,
        })
    }

    /// Frame with generated channel names `ch0, ch1, ...` and no timestamps.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|c| format!("ch{c}")).collect();
        Self::new(names, values, None)
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    /// Contiguous row range as a new frame.
    pub fn rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_rows() {
            return Err(MmfError::InsufficientData {
                needed: range.end.max(range.start + 1),
                available: self.n_rows(),
            });
        }
        let values = self.values.slice(s![range.clone(), ..]).to_owned();
        let timestamps = self.timestamps.as_ref().map(|t| t[range].to_vec());
        Ok(Self {
            channels: self.channels.clone(),
            values,
            timestamps,
        })
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self {
            channels: self.channels.clone(),
            values,
            timestamps: self.timestamps.clone(),
        }
    }
}

/// One training/evaluation example: `lookback` (L, C) followed directly by
/// `target` (H, C).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lookback: Array2<f64>,
    pub target: Array2<f64>,
}

impl Window {
    pub fn new(lookback: Array2<f64>, target: Array2<f64>) -> Result<Self> {
        if lookback.ncols() != target.ncols() {
            return Err(MmfError::Shape(format!(
                "look-back has {} channels, target has {}",
                lookback.ncols(),
                target.ncols()
            )));
        }
        if lookback.nrows() == 0 || target.nrows() == 0 {
            return Err(MmfError::EmptyInput);
        }
        Ok(Self { lookback, target })
    }
}

/// Number of windows of `lookback + horizon` rows that fit in `rows` rows
/// at the given stride.
pub fn window_count(rows: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    let span = lookback + horizon;
    if rows < span || stride == 0 {
        0
    } else {
        (rows - span) / stride + 1
    }
}

/// Materializes every sliding window of the frame.
pub fn make_windows(frame: &TimeSeriesFrame, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<Window>> {
    let set = FrameWindows::new(Arc::new(frame.clone()), 0..frame.n_rows(), lookback, horizon, stride)?;
    Ok((0..set.len())
        .map(|i| Window {
            lookback: set.lookback(i).to_owned(),
            target: set.target(i).to_owned(),
        })
        .collect())
}

/// Random access to a collection of forecast windows.
pub trait WindowSource: Sync {
    fn len(&self) -> usize;
    fn lookback_len(&self) -> usize;
    fn horizon(&self) -> usize;
    fn n_channels(&self) -> usize;
    fn lookback(&self, index: usize) -> ArrayView2<'_, f64>;
    fn target(&self, index: usize) -> ArrayView2<'_, f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl WindowSource for [Window] {
    fn len(&self) -> usize {
        <[Window]>::len(self)
    }

    fn lookback_len(&self) -> usize {
        self.first().map_or(0, |w| w.lookback.nrows())
    }

    fn horizon(&self) -> usize {
        self.first().map_or(0, |w| w.target.nrows())
    }

    fn n_channels(&self) -> usize {
        self.first().map_or(0, |w| w.lookback.ncols())
    }

    fn lookback(&self, index: usize) -> ArrayView2<'_, f64> {
        self[index].lookback.view()
    }

    fn target(&self, index: usize) -> ArrayView2<'_, f64> {
        self[index].target.view()
    }
}

impl WindowSource for Vec<Window> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn lookback_len(&self) -> usize {
        self.as_slice().lookback_len()
    }
    fn horizon(&self) -> usize {
        self.as_slice().horizon()
    }
    fn n_channels(&self) -> usize {
        self.as_slice().n_channels()
    }
    fn lookback(&self, index: usize) -> ArrayView2<'_, f64> {
        self[index].lookback.view()
    }
    fn target(&self, index: usize) -> ArrayView2<'_, f64> {
        self[index].target.view()
    }
}

/// Lazily sliced windows over a shared frame; nothing is copied until a
/// batch is assembled.
///
/// `rows` bounds the region windows are drawn from; window `i` starts at
/// `rows.start + i * stride`.
#[derive(Debug, Clone)]
pub struct FrameWindows {
    frame: Arc<TimeSeriesFrame>,
    start: usize,
    lookback: usize,
    horizon: usize,
    stride: usize,
    count: usize,
}

impl FrameWindows {
    pub fn new(
        frame: Arc<TimeSeriesFrame>,
        rows: Range<usize>,
        lookback: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(MmfError::Config("window stride must be at least 1".into()));
        }
        if lookback == 0 || horizon == 0 {
            return Err(MmfError::Config("look-back and horizon must be positive".into()));
        }
        if rows.end > frame.n_rows() || rows.start > rows.end {
            return Err(MmfError::InsufficientData {
                needed: rows.end,
                available: frame.n_rows(),
            });
        }
        let available = rows.end - rows.start;
        if available < lookback + horizon {
            return Err(MmfError::InsufficientData {
                needed: lookback + horizon,
                available,
            });
        }
        Ok(Self {
            count: window_count(available, lookback, horizon, stride),
            frame,
            start: rows.start,
            lookback,
            horizon,
            stride,
        })
    }

    /// First row of window `index` within the underlying frame.
    pub fn window_start(&self, index: usize) -> usize {
        self.start + index * self.stride
    }

    pub fn frame(&self) -> &TimeSeriesFrame {
        &self.frame
    }
}

impl WindowSource for FrameWindows {
    fn len(&self) -> usize {
        self.count
    }

    fn lookback_len(&self) -> usize {
        self.lookback
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_channels(&self) -> usize {
        self.frame.n_channels()
    }

    fn lookback(&self, index: usize) -> ArrayView2<'_, f64> {
        let a = self.window_start(index);
        self.frame.values.slice(s![a..a + self.lookback, ..])
    }

    fn target(&self, index: usize) -> ArrayView2<'_, f64> {
        let a = self.window_start(index) + self.lookback;
        self.frame.values.slice(s![a..a + self.horizon, ..])
    }
}
