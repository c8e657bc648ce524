//! Loss, optimizers, the epoch loop with validation-based model selection,
//! and evaluation metrics.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MmfError, Result};
use crate::model::{Gradients, InitScheme, Model, ModelConfig, ModelParams};
use crate::rin::{normalize_series, RinMode};
use crate::rng::Rng;
use crate::series::WindowSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a validation improvement tolerated before
    /// stopping. At least one such epoch always runs.
    pub patience: usize,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub shuffle: bool,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 disables decay.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            max_steps: 0,
            optimizer: OptimizerKind::default(),
            seed: 1,
            shuffle: true,
            lr_decay_every: 0,
            lr_decay_factor: 0.5,
            init: InitScheme::UniformFanIn,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MmfError::Config("train.learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(MmfError::Config("train.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(MmfError::Config("train.max_epochs must be at least 1".into()));
        }
        if self.lr_decay_every > 0 && (self.lr_decay_factor.is_nan() || self.lr_decay_factor <= 0.0) {
            return Err(MmfError::Config("train.lr_decay_factor must be positive".into()));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                return Err(MmfError::Config("adam needs 0 <= beta < 1 and eps > 0".into()));
            }
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_decay_every) {
            None => self.learning_rate,
            Some(k) => self.learning_rate * self.lr_decay_factor.powi(k as i32),
        }
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(MmfError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(MmfError::EmptyInput);
    }
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        first: ModelParams,
        second: ModelParams,
        steps: i32,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { .. } => OptimizerState::Adam {
                first: params.zeros_like(),
                second: params.zeros_like(),
                steps: 0,
            },
        }
    }
}

/// One optimizer update in place. Rejects non-finite gradients before
/// touching anything.
pub fn step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    kind: OptimizerKind,
    learning_rate: f64,
) -> Result<()> {
    if let Some(pos) = grads
        .tensors()
        .iter()
        .enumerate()
        .find_map(|(t, xs)| xs.iter().position(|v| !v.is_finite()).map(|i| (t, i)))
    {
        return Err(MmfError::NonFiniteGradient {
            context: format!("tensor {} element {}", pos.0, pos.1),
        });
    }
    let mask_enabled = params.config.mask_enabled;
    let trainable = |t: usize| mask_enabled || !t.is_multiple_of(3);
    match (kind, state) {
        (OptimizerKind::Sgd, OptimizerState::Sgd) => {
            for (t, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
                if trainable(t) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= learning_rate * gv;
                    }
                }
            }
        }
        (OptimizerKind::Adam { beta1, beta2, eps }, OptimizerState::Adam { first, second, steps }) => {
            *steps += 1;
            let c1 = 1.0 - beta1.powi(*steps);
            let c2 = 1.0 - beta2.powi(*steps);
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(first.tensors_mut().into_iter().zip(second.tensors_mut()));
            for (t, ((p, g), (m, v))) in tensors.enumerate() {
                if !trainable(t) {
                    continue;
                }
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        _ => return Err(MmfError::Config("optimizer state does not match optimizer kind".into())),
    }
    if !params.all_finite() {
        return Err(MmfError::NonFiniteGradient {
            context: "parameters became non-finite after the update".into(),
        });
    }
    Ok(())
}

/// A mini-batch flattened to one row per (window, channel) pair.
struct Batch {
    /// Normalized look-backs, `(B*C, L)`.
    inputs: Array2<f64>,
    /// Raw targets, `(B*C, H)`.
    targets: Array2<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
}

fn assemble<S: WindowSource + ?Sized>(source: &S, indices: &[usize], rin: RinMode) -> Batch {
    let (l, h, c) = (source.lookback_len(), source.horizon(), source.n_channels());
    let rows = indices.len() * c;
    let mut inputs = Array2::zeros((rows, l));
    let mut targets = Array2::zeros((rows, h));
    let mut mean = Array1::zeros(rows);
    let mut scale = Array1::ones(rows);
    for (j, &w) in indices.iter().enumerate() {
        let lb = source.lookback(w);
        let tg = source.target(w);
        for ch in 0..c {
            let r = j * c + ch;
            inputs.row_mut(r).assign(&lb.column(ch));
            targets.row_mut(r).assign(&tg.column(ch));
            let (m, s) = normalize_series(inputs.row_mut(r), rin);
            mean[r] = m;
            scale[r] = s;
        }
    }
    Batch {
        inputs,
        targets,
        mean,
        scale,
    }
}

fn denormalize(mut pred: Array2<f64>, batch: &Batch) -> Array2<f64> {
    for ((mut row, m), s) in pred.rows_mut().into_iter().zip(&batch.mean).zip(&batch.scale) {
        if *s == 1.0 {
            row.mapv_inplace(|v| v + m);
        } else {
            row.mapv_inplace(|v| v * s + m);
        }
    }
    pred
}

/// Training loss on a batch of windows and its exact parameter gradients.
///
/// The loss is the MSE after the normalization is inverted, averaged over
/// every (window, step, channel) triple of the batch.
pub fn batch_loss_and_gradients<S: WindowSource + ?Sized>(
    model: &Model,
    params: &ModelParams,
    source: &S,
    indices: &[usize],
    rin: RinMode,
) -> Result<(f64, Gradients)> {
    let batch = assemble(source, indices, rin);
    let (pred, trace) = model.forward_batch(params, batch.inputs.view())?;
    let pred = denormalize(pred, &batch);
    let (loss, mut grad) = mse_loss(pred.view(), batch.targets.view())?;
    for (mut row, s) in grad.rows_mut().into_iter().zip(&batch.scale) {
        if *s != 1.0 {
            row.mapv_inplace(|v| v * s);
        }
    }
    let grads = model.backward_batch(params, &trace, grad.view())?;
    Ok((loss, grads))
}

/// Denormalized `(H, C)` forecast for every window in `indices`.
pub fn predict_windows<S: WindowSource + ?Sized>(
    model: &Model,
    params: &ModelParams,
    source: &S,
    indices: &[usize],
    rin: RinMode,
) -> Result<Vec<Array2<f64>>> {
    let c = source.n_channels();
    let batch = assemble(source, indices, rin);
    let pred = denormalize(model.predict_batch(params, batch.inputs.view())?, &batch);
    Ok((0..indices.len())
        .map(|j| pred.slice(ndarray::s![j * c..(j + 1) * c, ..]).t().to_owned())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub n_windows: usize,
    pub n_points: usize,
}

// Neumaier-compensated running sum, so metric totals barely depend on the
// order windows are visited in.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

const EVAL_BATCH: usize = 256;

pub fn evaluate<S: WindowSource + ?Sized>(
    model: &Model,
    params: &ModelParams,
    source: &S,
    rin: RinMode,
) -> Result<Metrics> {
    if source.is_empty() {
        return Err(MmfError::EmptySplit("evaluation".into()));
    }
    let mut sq = CompensatedSum::default();
    let mut abs = CompensatedSum::default();
    let all: Vec<usize> = (0..source.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = assemble(source, chunk, rin);
        let pred = denormalize(model.predict_batch(params, batch.inputs.view())?, &batch);
        for (p, t) in pred.iter().zip(batch.targets.iter()) {
            let d = p - t;
            sq.add(d * d);
            abs.add(d.abs());
        }
    }
    let n_points = source.len() * source.horizon() * source.n_channels();
    Ok(Metrics {
        mse: sq.value() / n_points as f64,
        mae: abs.value() / n_points as f64,
        n_windows: source.len(),
        n_points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Loss trajectory as bit patterns, ignoring wall-clock times.
    pub fn loss_bits(&self) -> Vec<(u64, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.train_mse.to_bits(), e.val_mse.to_bits()))
            .collect()
    }

    /// Writes one JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e).expect("plain struct serializes");
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| MmfError::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MmfError::io(path, e))?;
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| MmfError::Parse {
                    line: i as u64 + 1,
                    column: e.column(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { epochs })
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub history: History,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub steps: usize,
}

pub fn fit<T, V>(
    train: &T,
    val: &V,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    rin: RinMode,
) -> Result<FitOutcome>
where
    T: WindowSource + ?Sized,
    V: WindowSource + ?Sized,
{
    fit_with_observer(train, val, model_cfg, train_cfg, rin, |_| {})
}

/// [`fit`], calling `observe` after every epoch.
pub fn fit_with_observer<T, V, F>(
    train: &T,
    val: &V,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    rin: RinMode,
    mut observe: F,
) -> Result<FitOutcome>
where
    T: WindowSource + ?Sized,
    V: WindowSource + ?Sized,
    F: FnMut(&EpochRecord),
{
    train_cfg.validate()?;
    if train.is_empty() {
        return Err(MmfError::EmptySplit("train".into()));
    }
    if val.is_empty() {
        return Err(MmfError::EmptySplit("validation".into()));
    }
    for (name, src) in [("train", train.lookback_len()), ("validation", val.lookback_len())] {
        if src != model_cfg.lookback {
            return Err(MmfError::Shape(format!(
                "{name} windows have look-back {src}, model expects {}",
                model_cfg.lookback
            )));
        }
    }
    if train.horizon() != model_cfg.horizon || val.horizon() != model_cfg.horizon {
        return Err(MmfError::Shape("window horizon does not match model horizon".into()));
    }

    let model = Model::new(model_cfg.clone())?;
    let mut rng = Rng::new(train_cfg.seed);
    let mut params = model.init_params(&mut rng, train_cfg.init);
    let mut opt = OptimizerState::new(train_cfg.optimizer, &params);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = History::default();
    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut stale = 0usize;
    let mut steps = 0usize;

    'epochs: for epoch in 0..train_cfg.max_epochs {
        let started = Instant::now();
        let lr = train_cfg.learning_rate_at(epoch);
        if train_cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = CompensatedSum::default();
        let mut seen = 0usize;
        let mut capped = false;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss_and_gradients(&model, &params, train, chunk, rin)?;
            step(&mut params, &grads, &mut opt, train_cfg.optimizer, lr).map_err(|e| match e {
                MmfError::NonFiniteGradient { context } => MmfError::NonFiniteGradient {
                    context: format!("epoch {epoch}, batch {b}: {context}"),
                },
                other => other,
            })?;
            loss_sum.add(loss * chunk.len() as f64);
            seen += chunk.len();
            steps += 1;
            if train_cfg.max_steps > 0 && steps >= train_cfg.max_steps {
                capped = true;
                break;
            }
        }
        let val_mse = evaluate(&model, &params, val, rin)?.mse;
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum.value() / seen as f64,
            val_mse,
            learning_rate: lr,
            steps,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        observe(&record);
        history.epochs.push(record);

        if val_mse < best.1 {
            best = (params.clone(), val_mse, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= train_cfg.patience.max(1) {
                break 'epochs;
            }
        }
        if capped {
            break;
        }
    }

    Ok(FitOutcome {
        params: best.0,
        history,
        best_epoch: best.2,
        best_val_mse: best.1,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Window;

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let a = Array2::from_shape_fn((3, 2), |(r, c)| (r + c) as f64);
        let (loss, grad) = mse_loss(a.view(), a.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_single_element() {
        let (loss, grad) = mse_loss(ndarray::arr2(&[[1.0]]).view(), ndarray::arr2(&[[0.0]]).view()).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad[[0, 0]], 2.0);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let pred = Array2::from_shape_fn((4, 3), |_| rng.uniform(-1.0, 1.0));
        let target = Array2::from_shape_fn((4, 3), |_| rng.uniform(-1.0, 1.0));
        let (_, grad) = mse_loss(pred.view(), target.view()).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (1, 2), (3, 1), (2, 0)] {
            let mut up = pred.clone();
            up[idx] += h;
            let mut dn = pred.clone();
            dn[idx] -= h;
            let fd = (mse_loss(up.view(), target.view()).unwrap().0 - mse_loss(dn.view(), target.view()).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn mse_shape_mismatch() {
        let a = Array2::<f64>::zeros((2, 2));
        let b = Array2::<f64>::zeros((2, 3));
        assert!(matches!(mse_loss(a.view(), b.view()), Err(MmfError::Shape(_))));
    }

    fn scalar_params() -> ModelParams {
        // L = H = 1, one scale of length 1: mask, weight, bias are scalars
        ModelParams::zeros(&ModelConfig::new(1, 1, vec![1], true)).unwrap()
    }

    #[test]
    fn sgd_step() {
        let mut p = scalar_params();
        let mut g = p.zeros_like();
        g.scales[0].weight[[0, 0]] = 1.0;
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &p);
        step(&mut p, &g, &mut st, OptimizerKind::Sgd, 0.1).unwrap();
        assert_eq!(p.scales[0].weight[[0, 0]], -0.1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let kind = OptimizerKind::default();
        let mut p = scalar_params();
        p.scales[0].bias[0] = 0.3;
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = OptimizerState::new(kind, &p);
        for _ in 0..3 {
            step(&mut p, &g, &mut st, kind, 0.01).unwrap();
        }
        assert_eq!(p, before);
        match &st {
            OptimizerState::Adam { first, second, steps } => {
                assert_eq!(*steps, 3);
                assert!(first
                    .tensors()
                    .iter()
                    .chain(second.tensors().iter())
                    .all(|t| t.iter().all(|v| *v == 0.0)));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn adam_first_step_by_hand() {
        let kind = OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = scalar_params();
        let mut g = p.zeros_like();
        g.scales[0].weight[[0, 0]] = 1.0;
        let mut st = OptimizerState::new(kind, &p);
        step(&mut p, &g, &mut st, kind, 0.01).unwrap();
        // m = 0.1, v = 0.001; bias-corrected both are 1
        let m_hat = (0.1f64) / (1.0 - 0.9);
        let v_hat = (0.001f64) / (1.0 - 0.999);
        let expect = -0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.scales[0].weight[[0, 0]] - expect).abs() < 1e-15);
        assert!((p.scales[0].weight[[0, 0]] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut p = scalar_params();
        let mut g = p.zeros_like();
        g.scales[0].bias[0] = f64::NAN;
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &p);
        let before = p.clone();
        assert!(matches!(
            step(&mut p, &g, &mut st, OptimizerKind::Sgd, 0.1),
            Err(MmfError::NonFiniteGradient { .. })
        ));
        assert_eq!(p, before);
    }

    #[test]
    fn vanishing_step_size_leaves_params() {
        let mut before = scalar_params();
        before.scales[0].weight[[0, 0]] = 0.7;
        let mut g = before.zeros_like();
        g.scales[0].weight[[0, 0]] = 3.0;
        for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
            let mut q = before.clone();
            let mut st = OptimizerState::new(kind, &q);
            step(&mut q, &g, &mut st, kind, 1e-300).unwrap();
            assert_eq!(q, before);
        }
    }

    #[test]
    fn disabled_masks_are_never_updated() {
        let cfg = ModelConfig::new(4, 2, vec![2, 4], false);
        let mut p = ModelParams::zeros(&cfg).unwrap();
        for sp in &mut p.scales {
            sp.mask.fill(1.0);
        }
        let mut g = p.zeros_like();
        g.scales[0].mask.fill(5.0);
        let mut st = OptimizerState::new(OptimizerKind::Sgd, &p);
        step(&mut p, &g, &mut st, OptimizerKind::Sgd, 0.1).unwrap();
        assert!(p.scales[0].mask.iter().all(|v| *v == 1.0));
    }

    fn toy_windows(seed: u64, n: usize) -> Vec<Window> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let lb = Array2::from_shape_fn((8, 2), |_| rng.uniform(-1.0, 1.0));
                let tg = Array2::from_shape_fn((4, 2), |_| rng.uniform(-1.0, 1.0));
                Window::new(lb, tg).unwrap()
            })
            .collect()
    }

    #[test]
    fn evaluate_ignores_window_order() {
        let cfg = ModelConfig::new(8, 4, vec![2, 8], true);
        let model = Model::new(cfg).unwrap();
        let p = model.init_params(&mut Rng::new(1), InitScheme::UniformFanIn);
        let mut w = toy_windows(2, 37);
        let a = evaluate(&model, &p, &w, RinMode::default()).unwrap();
        w.reverse();
        let b = evaluate(&model, &p, &w, RinMode::default()).unwrap();
        assert!((a.mse - b.mse).abs() <= 1e-15 * a.mse);
        assert!((a.mae - b.mae).abs() <= 1e-15 * a.mae);
        assert_eq!(a.n_points, 37 * 4 * 2);
    }

    #[test]
    fn evaluate_rejects_empty() {
        let model = Model::new(ModelConfig::new(8, 4, vec![8], true)).unwrap();
        let p = model.init_params(&mut Rng::new(1), InitScheme::Zeros);
        let empty: Vec<Window> = Vec::new();
        assert!(matches!(
            evaluate(&model, &p, &empty, RinMode::default()),
            Err(MmfError::EmptySplit(_))
        ));
    }

    #[test]
    fn patience_zero_runs_one_epoch_past_best() {
        let cfg = ModelConfig::new(8, 4, vec![2, 8], true);
        let train = toy_windows(3, 40);
        let val = toy_windows(4, 10);
        let tc = TrainConfig {
            patience: 0,
            max_epochs: 200,
            batch_size: 8,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let out = fit(&train, &val, &cfg, &tc, RinMode::default()).unwrap();
        let n = out.history.epochs.len();
        assert!(n < 200);
        assert_eq!(out.best_epoch + 2, n);
        let best = out
            .history
            .epochs
            .iter()
            .map(|e| e.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_mse, best);
    }

    #[test]
    fn fit_is_deterministic() {
        let cfg = ModelConfig::new(8, 4, vec![2, 8], true);
        let train = toy_windows(5, 30);
        let val = toy_windows(6, 10);
        let tc = TrainConfig {
            max_epochs: 4,
            batch_size: 7,
            ..TrainConfig::default()
        };
        let a = fit(&train, &val, &cfg, &tc, RinMode::with_std()).unwrap();
        let b = fit(&train, &val, &cfg, &tc, RinMode::with_std()).unwrap();
        assert_eq!(a.history.loss_bits(), b.history.loss_bits());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn fit_rejects_empty_splits() {
        let cfg = ModelConfig::new(8, 4, vec![8], true);
        let empty: Vec<Window> = Vec::new();
        let some = toy_windows(1, 3);
        let tc = TrainConfig::default();
        assert!(matches!(
            fit(&empty, &some, &cfg, &tc, RinMode::default()),
            Err(MmfError::EmptySplit(_))
        ));
        assert!(matches!(
            fit(&some, &empty, &cfg, &tc, RinMode::default()),
            Err(MmfError::EmptySplit(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 0,
                train_mse: 0.1 + 0.2,
                val_mse: 1.0 / 3.0,
                learning_rate: 5e-3,
                steps: 12,
                wall_ms: 4,
            }],
        };
        h.write_jsonl(&path).unwrap();
        assert_eq!(History::read_jsonl(&path).unwrap(), h);
    }
}
