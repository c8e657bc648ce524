//! The forecaster: per-scale fragmentation, DCT, learnable mask, linear
//! frequency head, inverse DCT, and a plain sum over scales.
//!
//! Everything operates on a batch of univariate series laid out as an
//! `(N, L)` matrix, one row per (window, channel) pair. Channels share all
//! parameters.
//!
//! For one series `x` and scale `i` with segment length `s_i`:
//!
//! ```text
//! spectrum_i = flatten(dct_rows(reshape(x, (L / s_i, s_i))))      length L
//! features_i = spectrum_i * mask_i                                 length L
//! freq_i     = W_i features_i + b_i                                length H
//! output     = idct(sum_i freq_i)
//! ```
//!
//! The inverse DCT is linear, so `idct(sum_i freq_i)` equals the sum of the
//! per-scale inverse transforms; it is applied once to save `S - 1`
//! `H x H` products per series.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MmfError, Result};
use crate::ladder::{validate_ladder, ScaleLadder, ValidatedLadder};
use crate::rng::Rng;
use crate::transform::DctBasis;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub ladder: ScaleLadder,
    pub mask_enabled: bool,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, ladder: impl Into<ScaleLadder>, mask_enabled: bool) -> Self {
        Self {
            lookback,
            horizon,
            ladder: ladder.into(),
            mask_enabled,
        }
    }

    pub fn validate(&self) -> Result<ValidatedLadder> {
        if self.horizon == 0 {
            return Err(MmfError::Config("horizon must be positive".into()));
        }
        validate_ladder(self.lookback, &self.ladder)
    }
}

/// Trainable tensors of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleParams {
    /// `(n_segments, segment_length)`, one factor per (segment, frequency).
    pub mask: Array2<f64>,
    /// `(H, L)` map from the flattened masked spectrum to `H` coefficients.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable tensors. Gradients use the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub scales: Vec<ScaleParams>,
}

pub type Gradients = ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Masks at 1; weights and biases uniform in `[-1/sqrt(L), 1/sqrt(L)]`.
    #[default]
    UniformFanIn,
    /// Masks at 1; weights and biases at 0.
    Zeros,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let ladder = config.validate()?;
        let (l, h) = (config.lookback, config.horizon);
        let scales = ladder
            .scales()
            .iter()
            .map(|sc| ScaleParams {
                mask: Array2::zeros((sc.segment_count, sc.segment_length)),
                weight: Array2::zeros((h, l)),
                bias: Array1::zeros(h),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            scales,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            scales: self
                .scales
                .iter()
                .map(|p| ScaleParams {
                    mask: Array2::zeros(p.mask.raw_dim()),
                    weight: Array2::zeros(p.weight.raw_dim()),
                    bias: Array1::zeros(p.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flat views of every tensor in a fixed order: per scale, mask, weight,
    /// bias. Masks are included even when disabled.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.scales
            .iter()
            .flat_map(|p| {
                [
                    p.mask.as_slice().expect("standard layout"),
                    p.weight.as_slice().expect("standard layout"),
                    p.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.scales
            .iter_mut()
            .flat_map(|p| {
                [
                    p.mask.as_slice_mut().expect("standard layout"),
                    p.weight.as_slice_mut().expect("standard layout"),
                    p.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Accumulates `other * factor` into `self`.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Number of trainable scalars: `sum_i (n_i s_i + H L + H)`, dropping the
/// mask term when masking is disabled.
pub fn param_count(params: &ModelParams) -> usize {
    let cfg = &params.config;
    params
        .scales
        .iter()
        .map(|p| {
            let mask = if cfg.mask_enabled { p.mask.len() } else { 0 };
            mask + p.weight.len() + p.bias.len()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct ScaleTrace {
    /// Flattened per-segment spectrum, `(N, L)`.
    pub spectrum: Array2<f64>,
    /// Spectrum after the mask, `(N, L)`. `None` when masking is disabled,
    /// in which case the features are the spectrum itself.
    pub masked: Option<Array2<f64>>,
    /// Head output in the frequency domain, `(N, H)`.
    pub freq_pred: Array2<f64>,
}

impl ScaleTrace {
    pub fn features(&self) -> &Array2<f64> {
        self.masked.as_ref().unwrap_or(&self.spectrum)
    }
}

/// Intermediates of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub scales: Vec<ScaleTrace>,
    pub output: Array2<f64>,
}

/// Precomputed transforms for one configuration.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    ladder: ValidatedLadder,
    segment_bases: Vec<DctBasis>,
    horizon_basis: DctBasis,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let ladder = config.validate()?;
        let segment_bases = ladder
            .scales()
            .iter()
            .map(|sc| DctBasis::new(sc.segment_length))
            .collect::<Result<Vec<_>>>()?;
        let horizon_basis = DctBasis::new(config.horizon)?;
        Ok(Self {
            config,
            ladder,
            segment_bases,
            horizon_basis,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ladder(&self) -> &ValidatedLadder {
        &self.ladder
    }

    pub fn init_params(&self, rng: &mut Rng, scheme: InitScheme) -> ModelParams {
        let mut params = ModelParams::zeros(&self.config).expect("config validated in Model::new");
        let bound = 1.0 / (self.config.lookback as f64).sqrt();
        for p in &mut params.scales {
            p.mask.fill(1.0);
            if scheme == InitScheme::UniformFanIn {
                p.weight.mapv_inplace(|_| rng.uniform(-bound, bound));
                p.bias.mapv_inplace(|_| rng.uniform(-bound, bound));
            }
        }
        params
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        let (l, h) = (self.config.lookback, self.config.horizon);
        if params.config != self.config || params.scales.len() != self.ladder.scales().len() {
            return Err(MmfError::Shape(format!(
                "parameters built for {:?}, model is {:?}",
                params.config, self.config
            )));
        }
        for (p, sc) in params.scales.iter().zip(self.ladder.scales()) {
            if p.mask.dim() != (sc.segment_count, sc.segment_length) || p.weight.dim() != (h, l) || p.bias.len() != h {
                return Err(MmfError::Shape("parameter tensor shape does not match config".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.lookback {
            return Err(MmfError::Shape(format!(
                "input rows have length {}, look-back is {}",
                x.ncols(),
                self.config.lookback
            )));
        }
        Ok(())
    }

    /// Flattened per-segment spectrum of every row of `x` at scale `i`.
    fn spectrum(&self, x: &Array2<f64>, i: usize) -> Array2<f64> {
        let (n, l) = x.dim();
        let seg = self.ladder.scales()[i].segment_length;
        let segments = x
            .view()
            .into_shape_with_order((n * (l / seg), seg))
            .expect("standard layout, divisibility validated");
        self.segment_bases[i]
            .forward_rows(segments)
            .into_shape_with_order((n, l))
            .expect("same element count")
    }

    /// Batched forward pass over `(N, L)` normalized look-back rows.
    pub fn forward_batch(&self, params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.check_params(params)?;
        self.check_input(&x)?;
        let x = x.as_standard_layout().into_owned();
        let n = x.nrows();
        let mut freq_sum = Array2::<f64>::zeros((n, self.config.horizon));
        let mut scales = Vec::with_capacity(params.scales.len());
        for (i, p) in params.scales.iter().enumerate() {
            let spectrum = self.spectrum(&x, i);
            let masked = self.config.mask_enabled.then(|| {
                let flat_mask = p
                    .mask
                    .view()
                    .into_shape_with_order(self.config.lookback)
                    .expect("n*s = L");
                &spectrum * &flat_mask
            });
            let features = masked.as_ref().unwrap_or(&spectrum);
            let mut freq_pred = features.dot(&p.weight.t());
            freq_pred += &p.bias;
            freq_sum += &freq_pred;
            scales.push(ScaleTrace {
                spectrum,
                masked,
                freq_pred,
            });
        }
        let output = self.horizon_basis.inverse_rows(freq_sum.view());
        Ok((output.clone(), ForwardTrace { scales, output }))
    }

    /// Forward pass without retaining intermediates.
    pub fn predict_batch(&self, params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward_batch(params, x).map(|(out, _)| out)
    }

    /// Exact gradients of a scalar loss whose derivative with respect to the
    /// batch output is `grad_out`, summed over the batch rows.
    pub fn backward_batch(
        &self,
        params: &ModelParams,
        trace: &ForwardTrace,
        grad_out: ArrayView2<'_, f64>,
    ) -> Result<Gradients> {
        self.check_params(params)?;
        if grad_out.dim() != trace.output.dim() {
            return Err(MmfError::Shape(format!(
                "output gradient {:?} does not match forward output {:?}",
                grad_out.dim(),
                trace.output.dim()
            )));
        }
        // adjoint of the inverse DCT is the forward DCT
        let grad_freq = self.horizon_basis.forward_rows(grad_out);
        let grad_bias = grad_freq.sum_axis(Axis(0));
        let mut grads = params.zeros_like();
        for ((g, p), st) in grads.scales.iter_mut().zip(&params.scales).zip(&trace.scales) {
            g.weight = grad_freq.t().dot(st.features());
            g.bias = grad_bias.clone();
            if self.config.mask_enabled {
                let grad_features = grad_freq.dot(&p.weight);
                let grad_mask = (&grad_features * &st.spectrum).sum_axis(Axis(0));
                g.mask = grad_mask.into_shape_with_order(p.mask.raw_dim()).expect("n*s = L");
            }
        }
        Ok(grads)
    }

    /// Single-series forward pass.
    pub fn forward(&self, params: &ModelParams, lookback: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        let x = ArrayView2::from_shape((1, lookback.len()), lookback).map_err(|e| MmfError::Shape(e.to_string()))?;
        let (out, trace) = self.forward_batch(params, x)?;
        Ok((out.row(0).to_vec(), trace))
    }

    /// Applies the shared parameters to each column of an `(L, C)` window.
    pub fn forward_multichannel(&self, params: &ModelParams, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if window.nrows() != self.config.lookback {
            return Err(MmfError::Shape(format!(
                "window has {} rows, look-back is {}",
                window.nrows(),
                self.config.lookback
            )));
        }
        Ok(self.predict_batch(params, window.t())?.reversed_axes())
    }
}

impl ForwardTrace {
    /// Recomputes the output from the retained per-scale head outputs.
    pub fn replay(&self, model: &Model) -> Array2<f64> {
        let mut freq_sum = Array2::<f64>::zeros(self.output.raw_dim());
        for st in &self.scales {
            freq_sum += &st.freq_pred;
        }
        model.horizon_basis.inverse_rows(freq_sum.view())
    }

    /// Time-domain contribution of scale `i` to the output.
    pub fn scale_prediction(&self, model: &Model, i: usize) -> Array2<f64> {
        model.horizon_basis.inverse_rows(self.scales[i].freq_pred.view())
    }

    /// Flattened masked spectrum of row `row` at scale `i`.
    pub fn features_row(&self, i: usize, row: usize) -> Vec<f64> {
        self.scales[i].features().slice(s![row, ..]).to_vec()
    }
}

pub fn init_params(config: &ModelConfig, rng: &mut Rng, scheme: InitScheme) -> Result<ModelParams> {
    Ok(Model::new(config.clone())?.init_params(rng, scheme))
}

pub fn forward(lookback: &[f64], params: &ModelParams) -> Result<(Vec<f64>, ForwardTrace)> {
    Model::new(params.config.clone())?.forward(params, lookback)
}

pub fn forward_multichannel(window: ArrayView2<'_, f64>, params: &ModelParams) -> Result<Array2<f64>> {
    Model::new(params.config.clone())?.forward_multichannel(params, window)
}

pub fn backward(trace: &ForwardTrace, grad_out: &[f64], params: &ModelParams) -> Result<Gradients> {
    let g = ArrayView2::from_shape((1, grad_out.len()), grad_out).map_err(|e| MmfError::Shape(e.to_string()))?;
    Model::new(params.config.clone())?.backward_batch(params, trace, g)
}
