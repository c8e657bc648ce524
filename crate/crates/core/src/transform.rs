//! Orthonormal DCT-II / DCT-III pair and segment fragmentation.
//!
//! The forward transform is
//!
//! ```text
//! X_k = a_k * sum_n x_n cos(pi/N (n + 1/2) k),   a_0 = sqrt(1/N), a_k = sqrt(2/N)
//! ```
//!
//! and the inverse is its transpose, `x_n = sum_k a_k X_k cos(pi/N (n + 1/2) k)`.
//! With this scaling the basis matrix is orthogonal, so round trips are exact
//! to rounding and energy is preserved. Any constant factor a differently
//! normalized kernel would introduce is absorbed by the learnable mask and
//! linear head downstream.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{MmfError, Result};

/// Dense orthonormal DCT-II basis of size `N x N`; row `k` is frequency `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    matrix: Array2<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Result<Self> {
        Self::scaled(n, 1.0)
    }

    /// Basis multiplied by `factor`. Only the self-test uses a factor other
    /// than 1, to check that a mis-scaled transform is caught.
    #[doc(hidden)]
    pub fn scaled(n: usize, factor: f64) -> Result<Self> {
        if n == 0 {
            return Err(MmfError::EmptyInput);
        }
        let a0 = (1.0 / n as f64).sqrt() * factor;
        let ak = (2.0 / n as f64).sqrt() * factor;
        let period = 4 * n;
        let matrix = Array2::from_shape_fn((n, n), |(k, i)| {
            // cos(pi (2i+1) k / 2N), with the integer phase reduced mod 4N
            let phase = ((2 * i + 1) * k) % period;
            let c = (PI * phase as f64 / (2 * n) as f64).cos();
            if k == 0 {
                a0
            } else {
                ak * c
            }
        });
        Ok(Self { matrix })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.matrix.dot(&x)
    }

    pub fn inverse(&self, coeffs: ArrayView1<'_, f64>) -> Array1<f64> {
        self.matrix.t().dot(&coeffs)
    }

    /// Row-wise forward transform of an `(m, N)` matrix.
    pub fn forward_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        rows.dot(&self.matrix.t())
    }

    /// Row-wise inverse transform of an `(m, N)` matrix.
    pub fn inverse_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        rows.dot(&self.matrix)
    }
}

pub fn dct_row(x: &[f64]) -> Result<Vec<f64>> {
    let basis = DctBasis::new(x.len())?;
    Ok(basis.forward(ArrayView1::from(x)).to_vec())
}

pub fn idct_row(coeffs: &[f64]) -> Result<Vec<f64>> {
    let basis = DctBasis::new(coeffs.len())?;
    Ok(basis.inverse(ArrayView1::from(coeffs)).to_vec())
}

/// A look-back window laid out as `(n_segments, segment_length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatrix {
    pub data: Array2<f64>,
    pub scale_index: usize,
}

/// Per-segment DCT coefficients, same shape as the source segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumMatrix {
    pub data: Array2<f64>,
    pub scale_index: usize,
}

/// Row `i` of the result is `x[i*s .. (i+1)*s]`.
pub fn fragment(x: &[f64], segment_length: usize) -> Result<SegmentMatrix> {
    if segment_length == 0 || x.is_empty() || !x.len().is_multiple_of(segment_length) {
        return Err(MmfError::Divisibility {
            segment_length,
            lookback: x.len(),
        });
    }
    let data =
        Array2::from_shape_vec((x.len() / segment_length, segment_length), x.to_vec()).expect("length checked above");
    Ok(SegmentMatrix { data, scale_index: 0 })
}

pub fn defragment(seg: &SegmentMatrix) -> Vec<f64> {
    seg.data.iter().copied().collect()
}

pub fn dct_matrix(seg: &SegmentMatrix) -> Result<SpectrumMatrix> {
    let basis = DctBasis::new(seg.data.ncols())?;
    Ok(SpectrumMatrix {
        data: basis.forward_rows(seg.data.view()),
        scale_index: seg.scale_index,
    })
}

pub fn idct_matrix(spec: &SpectrumMatrix) -> Result<SegmentMatrix> {
    let basis = DctBasis::new(spec.data.ncols())?;
    Ok(SegmentMatrix {
        data: basis.inverse_rows(spec.data.view()),
        scale_index: spec.scale_index,
    })
}
