//! Reversible instance-wise normalization.
//!
//! Each look-back window is centred per channel before it enters the model;
//! the forecast is mapped back with the same statistics. Scaling by the
//! window's standard deviation is optional and off by default.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MmfError, Result};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RinMode {
    pub use_std: bool,
    pub eps: f64,
}

impl Default for RinMode {
    fn default() -> Self {
        Self {
            use_std: false,
            eps: DEFAULT_EPS,
        }
    }
}

impl RinMode {
    pub fn mean_only() -> Self {
        Self::default()
    }

    pub fn with_std() -> Self {
        Self {
            use_std: true,
            ..Self::default()
        }
    }
}

/// Per-channel statistics of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RinState {
    pub mean: Array1<f64>,
    /// Population standard deviation clamped below at `eps`; all ones when
    /// std scaling is off.
    pub scale: Array1<f64>,
    pub eps: f64,
}

/// Normalizes a single series in place and returns `(mean, scale)`.
pub(crate) fn normalize_series(mut x: ArrayViewMut1<'_, f64>, mode: RinMode) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    x.mapv_inplace(|v| v - mean);
    let scale = if mode.use_std {
        let var = x.iter().map(|v| v * v).sum::<f64>() / n;
        let std = var.sqrt().max(mode.eps);
        x.mapv_inplace(|v| v / std);
        std
    } else {
        1.0
    };
    (mean, scale)
}

pub fn rin_forward(lookback: ArrayView2<'_, f64>, mode: RinMode) -> Result<(Array2<f64>, RinState)> {
    let (rows, cols) = lookback.dim();
    if rows == 0 || cols == 0 {
        return Err(MmfError::EmptyInput);
    }
    let mut out = lookback.to_owned();
    let mut mean = Array1::zeros(cols);
    let mut scale = Array1::ones(cols);
    for (c, col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = normalize_series(col, mode);
        mean[c] = m;
        scale[c] = s;
    }
    Ok((
        out,
        RinState {
            mean,
            scale,
            eps: mode.eps,
        },
    ))
}

pub fn rin_inverse(pred: ArrayView2<'_, f64>, state: &RinState) -> Result<Array2<f64>> {
    if pred.ncols() != state.mean.len() {
        return Err(MmfError::Shape(format!(
            "prediction has {} channels, normalization state has {}",
            pred.ncols(),
            state.mean.len()
        )));
    }
    let mut out = pred.to_owned();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (state.mean[c], state.scale[c]);
        if s == 1.0 {
            col.mapv_inplace(|v| v + m);
        } else {
            col.mapv_inplace(|v| v * s + m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use ndarray::arr2;

    fn random(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.uniform(-5.0, 5.0) + 3.0)
    }

    #[test]
    fn centres_a_ramp() {
        let (out, st) = rin_forward(arr2(&[[1.0], [2.0], [3.0]]).view(), RinMode::mean_only()).unwrap();
        assert_eq!(out, arr2(&[[-1.0], [0.0], [1.0]]));
        assert_eq!(st.mean.to_vec(), vec![2.0]);
        assert_eq!(st.scale.to_vec(), vec![1.0]);
    }

    #[test]
    fn constant_channel_with_std_is_safe() {
        let (out, st) = rin_forward(arr2(&[[5.0], [5.0]]).view(), RinMode::with_std()).unwrap();
        assert_eq!(out, arr2(&[[0.0], [0.0]]));
        assert_eq!(st.scale[0], DEFAULT_EPS);
    }

    #[test]
    fn output_columns_have_zero_mean() {
        let mut rng = Rng::new(1);
        let x = random(&mut rng, 720, 7);
        for mode in [RinMode::mean_only(), RinMode::with_std()] {
            let (out, _) = rin_forward(x.view(), mode).unwrap();
            for col in out.columns() {
                assert!(col.mean().unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_adds_mean_back() {
        let st = RinState {
            mean: Array1::from(vec![2.0]),
            scale: Array1::ones(1),
            eps: DEFAULT_EPS,
        };
        assert_eq!(
            rin_inverse(arr2(&[[0.0], [0.0]]).view(), &st).unwrap(),
            arr2(&[[2.0], [2.0]])
        );
    }

    #[test]
    fn round_trip_restores_input() {
        let mut rng = Rng::new(2);
        for mode in [RinMode::mean_only(), RinMode::with_std()] {
            for _ in 0..20 {
                let (rows, cols) = (1 + rng.below(64), 1 + rng.below(5));
                let x = random(&mut rng, rows, cols);
                let (norm, st) = rin_forward(x.view(), mode).unwrap();
                let back = rin_inverse(norm.view(), &st).unwrap();
                for (a, b) in back.iter().zip(x.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_of_inverse_recovers_statistics() {
        let mut rng = Rng::new(4);
        let pred = random(&mut rng, 16, 3);
        let (centred, _) = rin_forward(pred.view(), RinMode::with_std()).unwrap();
        let st = RinState {
            mean: Array1::from(vec![1.5, -2.0, 0.25]),
            scale: Array1::from(vec![0.5, 3.0, 1.25]),
            eps: DEFAULT_EPS,
        };
        let denorm = rin_inverse(centred.view(), &st).unwrap();
        let (again, st2) = rin_forward(denorm.view(), RinMode::with_std()).unwrap();
        for c in 0..3 {
            assert!((st2.mean[c] - st.mean[c]).abs() < 1e-12);
        }
        let (_, st3) = rin_forward(rin_inverse(again.view(), &st2).unwrap().view(), RinMode::with_std()).unwrap();
        for c in 0..3 {
            assert!((st3.mean[c] - st2.mean[c]).abs() < 1e-12);
            assert!((st3.scale[c] - st2.scale[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_only_is_translation_equivariant() {
        let mut rng = Rng::new(6);
        let x = random(&mut rng, 32, 2);
        let shift = 7.25;
        let (a, sa) = rin_forward(x.view(), RinMode::mean_only()).unwrap();
        let (b, sb) = rin_forward((&x + shift).view(), RinMode::mean_only()).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        for c in 0..2 {
            assert!((sb.mean[c] - sa.mean[c] - shift).abs() < 1e-12);
        }
    }
}
