//! Fast internal consistency checks runnable from the command line.

use std::time::Instant;

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::model::{init_params, InitScheme, Model, ModelConfig, ModelParams};
use crate::rin::{rin_forward, rin_inverse, RinMode};
use crate::rng::Rng;
use crate::series::Window;
use crate::train::batch_loss_and_gradients;
use crate::transform::DctBasis;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Multiplies the DCT basis by this factor in the transform suite, to
    /// confirm the suite notices a broken transform.
    pub dct_fault: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed error and the bound it was held to.
    pub worst: f64,
    pub bound: f64,
    pub wall_ms: u64,
}

pub const DCT_TOL: f64 = 1e-10;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor, so gradients that are zero in exact arithmetic
/// compare absolutely.
pub const GRAD_ABS_FLOOR: f64 = 1e-3;
pub const GRAD_STEP: f64 = 1e-5;
pub const RIN_TOL: f64 = 1e-12;

pub fn run_all(opts: SelftestOptions) -> Vec<SuiteReport> {
    vec![
        timed("dct round trip", DCT_TOL, || dct_suite(opts.dct_fault.unwrap_or(1.0))),
        timed("gradient check", GRAD_REL_TOL, || {
            let mut worst: f64 = 0.0;
            for seed in 0..5 {
                for rin in [RinMode::mean_only(), RinMode::with_std()] {
                    worst = worst.max(gradient_check(seed, rin)?);
                }
            }
            Ok(worst)
        }),
        timed("rin round trip", RIN_TOL, rin_suite),
        timed("mask identity", 0.0, mask_identity_suite),
    ]
}

fn timed(name: &'static str, bound: f64, f: impl FnOnce() -> Result<f64>) -> SuiteReport {
    let t = Instant::now();
    let (passed, worst) = match f() {
        Ok(w) => (w <= bound, w),
        Err(_) => (false, f64::INFINITY),
    };
    SuiteReport {
        name,
        passed,
        worst,
        bound,
        wall_ms: t.elapsed().as_millis() as u64,
    }
}

/// Worst round-trip and orthonormality error over a spread of lengths.
pub fn dct_suite(factor: f64) -> Result<f64> {
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    for n in [1usize, 2, 3, 5, 8, 24, 96, 120, 360, 720] {
        let basis = DctBasis::scaled(n, factor)?;
        for _ in 0..4 {
            let x = Array1::from_shape_fn(n, |_| rng.normal());
            let back = basis.inverse(basis.forward(x.view()).view());
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max((&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
        }
        if n <= 120 {
            let g = basis.matrix();
            let gram = g.dot(&g.t());
            let eye = Array2::<f64>::eye(n);
            worst = worst.max((&gram - &eye).iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }
    Ok(worst)
}

/// Largest relative disagreement between analytic gradients and central
/// differences, for L = 8, H = 4, ladder (2, 8) on a two-channel batch.
pub fn gradient_check(seed: u64, rin: RinMode) -> Result<f64> {
    let mut rng = Rng::new(seed).derive(0x67726164);
    let cfg = ModelConfig::new(8, 4, vec![2, 8], true);
    let model = Model::new(cfg.clone())?;
    let mut params = init_params(&cfg, &mut rng, InitScheme::UniformFanIn)?;
    for sp in &mut params.scales {
        sp.mask.mapv_inplace(|_| rng.uniform(0.5, 1.5));
        sp.bias.mapv_inplace(|_| rng.uniform(-0.5, 0.5));
    }
    let windows: Vec<Window> = (0..3)
        .map(|_| {
            let lb = Array2::from_shape_fn((8, 2), |_| rng.normal() * 2.0 + 1.0);
            let tg = Array2::from_shape_fn((4, 2), |_| rng.normal());
            Window::new(lb, tg)
        })
        .collect::<Result<_>>()?;
    let idx: Vec<usize> = (0..windows.len()).collect();
    let loss = |p: &ModelParams| batch_loss_and_gradients(&model, p, &windows, &idx, rin).map(|(l, _)| l);
    let (_, grads) = batch_loss_and_gradients(&model, &params, &windows, &idx, rin)?;

    let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();
    let mut worst: f64 = 0.0;
    for (j, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        bump(&mut plus, j, GRAD_STEP);
        bump(&mut minus, j, -GRAD_STEP);
        let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * GRAD_STEP);
        let err = (a - numeric).abs();
        worst = worst.max(err / a.abs().max(numeric.abs()).max(GRAD_ABS_FLOOR));
    }
    Ok(worst)
}

fn bump(params: &mut ModelParams, mut flat: usize, delta: f64) {
    for t in params.tensors_mut() {
        if flat < t.len() {
            t[flat] += delta;
            return;
        }
        flat -= t.len();
    }
    panic!("parameter index out of range");
}

fn rin_suite() -> Result<f64> {
    let mut rng = Rng::new(13);
    let mut worst: f64 = 0.0;
    for mode in [RinMode::mean_only(), RinMode::with_std()] {
        for _ in 0..50 {
            let rows = 1 + rng.below(720);
            let x = Array2::from_shape_fn((rows, 3), |_| rng.uniform(-100.0, 100.0));
            let (norm, state) = rin_forward(x.view(), mode)?;
            let back = rin_inverse(norm.view(), &state)?;
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            worst = worst.max((&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
        }
    }
    Ok(worst)
}

/// Zero when an all-ones mask reproduces the unmasked model bit for bit.
fn mask_identity_suite() -> Result<f64> {
    let mut rng = Rng::new(17);
    let on = ModelConfig::new(48, 12, vec![4, 12, 48], true);
    let off = ModelConfig {
        mask_enabled: false,
        ..on.clone()
    };
    let p_on = init_params(&on, &mut rng, InitScheme::UniformFanIn)?;
    let mut p_off = p_on.clone();
    p_off.config = off.clone();
    let x = Array2::from_shape_fn((16, 48), |_| rng.normal());
    let a = Model::new(on)?.predict_batch(&p_on, x.view())?;
    let b = Model::new(off)?.predict_batch(&p_off, x.view())?;
    let differing = a
        .iter()
        .zip(b.iter())
        .filter(|(p, q)| p.to_bits() != q.to_bits())
        .count();
    Ok(differing as f64)
}
