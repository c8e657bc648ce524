//! Declarative experiment runner: single configurations, the segment-length
//! and mask ablation grid, persisted result records, and mask export.
//!
//! Output layout under an output directory:
//!
//! ```text
//! results/<dataset>/<fingerprint>.jsonl          one ResultRecord
//! results/<dataset>/<fingerprint>.history.jsonl  per-epoch losses
//! tables/<name>.csv                              rendered comparison tables
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, DatasetSpec, PreparedData, SplitPart};
use crate::error::{MmfError, Result};
use crate::ladder::{validate_ladder, ScaleLadder};
use crate::model::{param_count, Model, ModelConfig, ModelParams};
use crate::rin::RinMode;
use crate::train::{evaluate, fit_with_observer, EpochRecord, History, Metrics, TrainConfig};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub ladder: ScaleLadder,
    pub mask_enabled: bool,
    pub rin_std: bool,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub train: TrainConfig,
    /// Number of seeds; seed `k` is `train.seed + k`.
    pub repeats: usize,
}

fn default_stride() -> usize {
    1
}

impl ExperimentConfig {
    /// Default setup for one of the built-in datasets: look-back 720, ladder
    /// (2, 24, 720), masks on, mean-only instance normalization, seeds 1..=3.
    pub fn for_dataset(name: &str) -> Result<Self> {
        let dataset =
            DatasetSpec::builtin(name).ok_or_else(|| MmfError::Config(format!("unknown dataset `{name}`")))?;
        Ok(Self {
            dataset,
            lookback: 720,
            horizons: vec![96, 192, 336, 720],
            ladder: ScaleLadder::new(vec![2, 24, 720]),
            mask_enabled: true,
            rin_std: false,
            stride: 1,
            train: TrainConfig::default(),
            repeats: 3,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MmfError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        validate_ladder(self.lookback, &self.ladder)?;
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(MmfError::Config(
                "horizons must be a non-empty list of positive lengths".into(),
            ));
        }
        if self.repeats == 0 {
            return Err(MmfError::Config("repeats must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(MmfError::Config("stride must be at least 1".into()));
        }
        self.dataset.split_policy.validate()?;
        self.train.validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|k| self.train.seed + k).collect()
    }

    pub fn rin_mode(&self) -> RinMode {
        if self.rin_std {
            RinMode::with_std()
        } else {
            RinMode::mean_only()
        }
    }

    /// Every (horizon, seed) cell, horizons outermost.
    pub fn cells(&self) -> Vec<RunCell> {
        let mut dataset = self.dataset.clone();
        dataset.path = PathBuf::new();
        self.horizons
            .iter()
            .flat_map(|&h| {
                let dataset = dataset.clone();
                self.seeds().into_iter().map(move |seed| RunCell {
                    dataset: dataset.clone(),
                    lookback: self.lookback,
                    horizon: h,
                    ladder: self.ladder.clone(),
                    mask_enabled: self.mask_enabled,
                    rin_std: self.rin_std,
                    stride: self.stride,
                    train: TrainConfig {
                        seed,
                        ..self.train.clone()
                    },
                    code_version: CODE_VERSION.to_string(),
                })
            })
            .collect()
    }
}

/// Every input that determines one training run. The dataset path is left
/// out so a record reproduces from any data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCell {
    pub dataset: DatasetSpec,
    pub lookback: usize,
    pub horizon: usize,
    pub ladder: ScaleLadder,
    pub mask_enabled: bool,
    pub rin_std: bool,
    pub stride: usize,
    pub train: TrainConfig,
    pub code_version: String,
}

impl RunCell {
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("cell serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.lookback, self.horizon, self.ladder.clone(), self.mask_enabled)
    }

    pub fn rin_mode(&self) -> RinMode {
        if self.rin_std {
            RinMode::with_std()
        } else {
            RinMode::mean_only()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub fingerprint: String,
    pub code_version: String,
    pub dataset: String,
    pub horizon: usize,
    pub seed: u64,
    pub ladder: ScaleLadder,
    pub mask_enabled: bool,
    pub rin_std: bool,
    pub param_count: usize,
    pub test: Metrics,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub wall_ms: u64,
    /// Evaluation protocol, spelled out so numbers are never compared across
    /// protocols by accident.
    pub protocol: String,
    pub cell: RunCell,
}

/// A finished run: its record plus what is needed to inspect it further.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ResultRecord,
    pub params: ModelParams,
    pub history: History,
}

fn protocol_label(cell: &RunCell) -> String {
    let split = match cell.dataset.split_policy {
        crate::data::SplitPolicy::EttHourly => "ett_hourly(12/4/4 months)".to_string(),
        crate::data::SplitPolicy::EttMinute => "ett_minute(12/4/4 months)".to_string(),
        crate::data::SplitPolicy::Ratio { train, val, test } => format!("ratio({train}/{val}/{test})"),
    };
    let rin = if cell.rin_std { "mean+std" } else { "mean" };
    format!("split={split}; scaling=train-standardized; instance_norm={rin}; loss=denormalized-mse; transform=dct-ii-orthonormal")
}

/// Trains and tests one cell on already prepared data.
pub fn run_cell(data: &PreparedData, cell: &RunCell, observe: &mut dyn FnMut(&EpochRecord)) -> Result<RunOutput> {
    let started = Instant::now();
    let (l, h, stride) = (cell.lookback, cell.horizon, cell.stride);
    let train = data.windows(SplitPart::Train, l, h, stride)?;
    let val = data.windows(SplitPart::Val, l, h, 1)?;
    let test = data.windows(SplitPart::Test, l, h, 1)?;
    let model_cfg = cell.model_config();
    let rin = cell.rin_mode();
    let outcome = fit_with_observer(&train, &val, &model_cfg, &cell.train, rin, |e| observe(e))?;
    let model = Model::new(model_cfg)?;
    let test_metrics = evaluate(&model, &outcome.params, &test, rin)?;
    let record = ResultRecord {
        fingerprint: cell.fingerprint(),
        code_version: cell.code_version.clone(),
        dataset: cell.dataset.name.clone(),
        horizon: h,
        seed: cell.train.seed,
        ladder: cell.ladder.clone(),
        mask_enabled: cell.mask_enabled,
        rin_std: cell.rin_std,
        param_count: param_count(&outcome.params),
        test: test_metrics,
        best_val_mse: outcome.best_val_mse,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.epochs.len(),
        steps: outcome.steps,
        wall_ms: started.elapsed().as_millis() as u64,
        protocol: protocol_label(cell),
        cell: cell.clone(),
    };
    Ok(RunOutput {
        record,
        params: outcome.params,
        history: outcome.history,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where records and tables are written; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent cells; 0 or 1 runs serially.
    pub workers: usize,
    pub verbose: bool,
}

fn run_cells(data: &PreparedData, cells: &[RunCell], opts: &RunOptions) -> Result<Vec<RunOutput>> {
    let run = |cell: &RunCell| {
        let tag = format!(
            "{} H={} seed={} ladder={:?} mask={}",
            cell.dataset.name,
            cell.horizon,
            cell.train.seed,
            cell.ladder.segment_lengths(),
            cell.mask_enabled
        );
        let mut observe = |e: &EpochRecord| {
            if opts.verbose {
                eprintln!(
                    "[{tag}] epoch {:>3} train {:.5} val {:.5} ({} ms)",
                    e.epoch, e.train_mse, e.val_mse, e.wall_ms
                );
            }
        };
        run_cell(data, cell, &mut observe).map_err(|e| match e {
            MmfError::NonFiniteGradient { context } => MmfError::NonFiniteGradient {
                context: format!("{tag}: {context}"),
            },
            other => other,
        })
    };
    let outputs: Vec<Result<RunOutput>> = if opts.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| MmfError::Config(format!("worker pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &opts.out_dir {
        for o in &outputs {
            persist(dir, o)?;
        }
    }
    Ok(outputs)
}

fn persist(dir: &Path, out: &RunOutput) -> Result<()> {
    let sub = dir.join("results").join(&out.record.dataset);
    std::fs::create_dir_all(&sub).map_err(|e| MmfError::io(&sub, e))?;
    let path = sub.join(format!("{}.jsonl", out.record.fingerprint));
    let mut line = serde_json::to_string(&out.record).expect("record serializes");
    line.push('\n');
    std::fs::write(&path, line).map_err(|e| MmfError::io(&path, e))?;
    out.history
        .write_jsonl(&sub.join(format!("{}.history.jsonl", out.record.fingerprint)))
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| MmfError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MmfError::Parse {
                line: i as u64 + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn prepare(dataset: &DatasetSpec) -> Result<PreparedData> {
    let frame = load_csv(dataset)?;
    PreparedData::new(&frame, &dataset.split_policy)
}

/// Runs every (horizon, seed) cell of a configuration.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let data = prepare(&cfg.dataset)?;
    run_experiment_on(&data, cfg, opts)
}

/// [`run_experiment`] on data the caller already loaded.
pub fn run_experiment_on(data: &PreparedData, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    run_cells(data, &cfg.cells(), opts)
}

/// Re-runs the cell a record came from.
pub fn reproduce(data: &PreparedData, record: &ResultRecord) -> Result<ResultRecord> {
    run_cell(data, &record.cell, &mut |_| {}).map(|o| o.record)
}

/// Mean test metrics per horizon across seeds, with the per-seed MSEs kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub per_seed_mse: Vec<f64>,
}

pub fn summarize(records: &[ResultRecord]) -> Vec<HorizonSummary> {
    let mut by_h: BTreeMap<usize, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        by_h.entry(r.horizon).or_default().push(r);
    }
    by_h.into_iter()
        .map(|(horizon, rs)| {
            let n = rs.len() as f64;
            HorizonSummary {
                horizon,
                mse: rs.iter().map(|r| r.test.mse).sum::<f64>() / n,
                mae: rs.iter().map(|r| r.test.mae).sum::<f64>() / n,
                per_seed_mse: rs.iter().map(|r| r.test.mse).collect(),
            }
        })
        .collect()
}

/// Frequency-decomposition variants compared by the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// One transform over the whole window.
    Sft,
    /// One segment length shorter than the window.
    Mft(usize),
    /// The configured multi-scale ladder.
    Mmft,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Sft => "SFT".into(),
            Variant::Mft(s) => format!("MFT{s}"),
            Variant::Mmft => "MMFT".into(),
        }
    }

    pub fn ladder(&self, lookback: usize, base: &ScaleLadder) -> ScaleLadder {
        match self {
            Variant::Sft => ScaleLadder::new(vec![lookback]),
            Variant::Mft(s) => ScaleLadder::new(vec![*s]),
            Variant::Mmft => base.clone(),
        }
    }
}

pub const DEFAULT_MFT_SEGMENTS: [usize; 3] = [24, 120, 360];

/// Variants that are well defined for `lookback`; single-scale segment
/// lengths that do not divide it are skipped.
pub fn ablation_variants(lookback: usize) -> Vec<Variant> {
    let mut v = vec![Variant::Sft];
    v.extend(
        DEFAULT_MFT_SEGMENTS
            .iter()
            .filter(|&&s| s < lookback && lookback.is_multiple_of(s))
            .map(|&s| Variant::Mft(s)),
    );
    v.push(Variant::Mmft);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mask_enabled: bool,
    /// Mean test MSE per horizon, in `AblationTable::horizons` order.
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub horizons: Vec<usize>,
    pub rows: Vec<AblationRow>,
    pub protocol: String,
}

impl AblationTable {
    pub fn row(&self, variant: Variant, mask_enabled: bool) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.mask_enabled == mask_enabled)
    }

    /// SFT minus MMFT test MSE per horizon, both masked. Positive means the
    /// multi-scale ladder wins.
    pub fn scale_improvement(&self) -> Option<Vec<f64>> {
        let sft = self.row(Variant::Sft, true)?;
        let mmft = self.row(Variant::Mmft, true)?;
        Some(sft.mse.iter().zip(&mmft.mse).map(|(a, b)| a - b).collect())
    }

    /// Unmasked minus masked MMFT test MSE per horizon.
    pub fn mask_improvement(&self) -> Option<Vec<f64>> {
        let off = self.row(Variant::Mmft, false)?;
        let on = self.row(Variant::Mmft, true)?;
        Some(off.mse.iter().zip(&on.mse).map(|(a, b)| a - b).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mask");
        for h in &self.horizons {
            write!(out, ",H{h}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{}",
                r.variant.label(),
                if r.mask_enabled { "on" } else { "off" }
            )
            .unwrap();
            for v in &r.mse {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        for (name, imp) in [
            ("Imp.(MMFT over SFT)", self.scale_improvement()),
            ("Imp.(mask)", self.mask_improvement()),
        ] {
            if let Some(imp) = imp {
                write!(out, "{name},").unwrap();
                for v in imp {
                    write!(out, ",{v:+.6}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// Fixed-width text rendering for terminals.
    pub fn render(&self) -> String {
        let mut out = format!("{} ({})\n", self.dataset, self.protocol);
        write!(out, "{:<22}", "variant").unwrap();
        for h in &self.horizons {
            write!(out, "{:>10}", h).unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            let name = format!(
                "{} mask={}",
                r.variant.label(),
                if r.mask_enabled { "on" } else { "off" }
            );
            write!(out, "{name:<22}").unwrap();
            for v in &r.mse {
                write!(out, "{v:>10.4}").unwrap();
            }
            out.push('\n');
        }
        for (name, imp) in [
            ("Imp.(MMFT over SFT)", self.scale_improvement()),
            ("Imp.(mask)", self.mask_improvement()),
        ] {
            if let Some(imp) = imp {
                write!(out, "{name:<22}").unwrap();
                for v in imp {
                    write!(out, "{v:>+10.4}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Every ablation variant with masks on and off, over the configured
/// horizons and seeds. All variants see the same prepared data.
pub fn ablation_suite(base: &ExperimentConfig, opts: &RunOptions) -> Result<(AblationTable, Vec<ResultRecord>)> {
    base.validate()?;
    let data = prepare(&base.dataset)?;
    ablation_suite_on(&data, base, opts)
}

pub fn ablation_suite_on(
    data: &PreparedData,
    base: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(AblationTable, Vec<ResultRecord>)> {
    let grid: Vec<(Variant, bool)> = ablation_variants(base.lookback)
        .into_iter()
        .flat_map(|v| [(v, true), (v, false)])
        .collect();
    ablation_grid_on(data, base, &grid, opts)
}

/// Like [`ablation_suite_on`] but over an explicit list of
/// `(variant, mask_enabled)` rows.
pub fn ablation_grid_on(
    data: &PreparedData,
    base: &ExperimentConfig,
    grid: &[(Variant, bool)],
    opts: &RunOptions,
) -> Result<(AblationTable, Vec<ResultRecord>)> {
    base.validate()?;
    let configs: Vec<(Variant, bool, ExperimentConfig)> = grid
        .iter()
        .map(|&(v, mask)| {
            let cfg = ExperimentConfig {
                ladder: v.ladder(base.lookback, &base.ladder),
                mask_enabled: mask,
                ..base.clone()
            };
            (v, mask, cfg)
        })
        .collect();
    let cells: Vec<RunCell> = configs.iter().flat_map(|(_, _, c)| c.cells()).collect();
    let outputs = run_cells(data, &cells, opts)?;
    let records: Vec<ResultRecord> = outputs.into_iter().map(|o| o.record).collect();

    let per_cfg = base.horizons.len() * base.repeats;
    let rows = configs
        .iter()
        .zip(records.chunks(per_cfg))
        .map(|((v, mask, _), recs)| AblationRow {
            variant: *v,
            mask_enabled: *mask,
            mse: summarize(recs).into_iter().map(|s| s.mse).collect::<Vec<_>>(),
        })
        .collect::<Vec<_>>();
    // summarize sorts by horizon; keep the table in that order too
    let mut horizons = base.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();
    let table = AblationTable {
        dataset: base.dataset.name.clone(),
        horizons,
        rows,
        protocol: format!("{}; seeds={:?}", protocol_label(&base.cells()[0]), base.seeds()),
    };
    if let Some(dir) = &opts.out_dir {
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables).map_err(|e| MmfError::io(&tables, e))?;
        let path = tables.join(format!("ablation_{}.csv", base.dataset.name));
        std::fs::write(&path, table.to_csv()).map_err(|e| MmfError::io(&path, e))?;
    }
    Ok((table, records))
}

/// Writes one CSV per scale, rows = segments, columns = frequency bins, and
/// returns the paths in scale order.
pub fn export_masks(params: &ModelParams, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| MmfError::io(out_dir, e))?;
    params
        .scales
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let path = out_dir.join(format!("mask_scale{i}_seg{}.csv", p.mask.ncols()));
            let mut text = String::new();
            for row in p.mask.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                text.push_str(&line.join(","));
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| MmfError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn read_mask_csv(path: &Path) -> Result<ndarray::Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| MmfError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .enumerate()
            .map(|(j, t)| {
                t.trim().parse::<f64>().map_err(|_| MmfError::Parse {
                    line: i as u64 + 1,
                    column: j + 1,
                    message: format!("`{t}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(MmfError::Parse {
                    line: i as u64 + 1,
                    column: row.len(),
                    message: "ragged mask row".into(),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    ndarray::Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| MmfError::Shape(e.to_string()))
}

/// Mean `|mask - 1|` per frequency column: how far training moved each bin
/// away from the identity filter.
pub fn mask_deviation_by_frequency(mask: &ndarray::Array2<f64>) -> Vec<f64> {
    mask.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Published results and comparison tolerances, shipped with the crate.
pub mod reference {
    use serde::Deserialize;

    use super::Variant;

    const TABLE: &str = include_str!("../reference/published_mse.toml");

    #[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
    pub struct Tolerances {
        pub absolute_mse: f64,
        pub ultra_long_mse: f64,
        pub scale_improvement: f64,
        pub mask_improvement: f64,
    }

    #[derive(Debug, Clone, PartialEq, Deserialize)]
    pub struct Entry {
        pub dataset: String,
        pub variant: String,
        pub mask: bool,
        pub horizon: usize,
        pub mse: f64,
    }

    #[derive(Debug, Clone, PartialEq, Deserialize)]
    pub struct ReferenceTable {
        pub tolerances: Tolerances,
        pub entry: Vec<Entry>,
    }

    impl ReferenceTable {
        pub fn load() -> Self {
            toml::from_str(TABLE).expect("bundled reference table parses")
        }

        pub fn mse(&self, dataset: &str, variant: Variant, mask: bool, horizon: usize) -> Option<f64> {
            let label = variant.label();
            self.entry
                .iter()
                .find(|e| e.dataset == dataset && e.variant == label && e.mask == mask && e.horizon == horizon)
                .map(|e| e.mse)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_frame, SplitPolicy};
    use crate::model::{init_params, InitScheme};
    use crate::rng::Rng;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec {
                name: "synthetic".into(),
                path: PathBuf::new(),
                expected_channels: Some(2),
                sampling: "1 hour".into(),
                split_policy: SplitPolicy::Ratio {
                    train: 0.6,
                    val: 0.2,
                    test: 0.2,
                },
            },
            lookback: 48,
            horizons: vec![12, 24],
            ladder: ScaleLadder::new(vec![4, 12, 48]),
            mask_enabled: true,
            rin_std: false,
            stride: 4,
            train: TrainConfig {
                max_epochs: 3,
                batch_size: 16,
                ..TrainConfig::default()
            },
            repeats: 2,
        }
    }

    fn small_data() -> PreparedData {
        let f = synthetic_frame(600, 2, 9).unwrap();
        PreparedData::new(&f, &small_config().dataset.split_policy).unwrap()
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::for_dataset("ETTh1").unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.seeds(), vec![1, 2, 3]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::for_dataset("ETTh1").unwrap().to_toml_string();
        text = text.replace("rin_std = false", "rin_std = false\nmask_enabeld = true");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("mask_enabeld"), "{err}");
    }

    #[test]
    fn invalid_ladder_is_a_config_error() {
        let mut cfg = ExperimentConfig::for_dataset("ETTh1").unwrap();
        cfg.ladder = ScaleLadder::new(vec![7, 720]);
        assert!(matches!(
            cfg.validate(),
            Err(MmfError::Divisibility { segment_length: 7, .. })
        ));
    }

    #[test]
    fn seeds_give_distinct_fingerprints() {
        let cfg = small_config();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
        let mut fps: Vec<String> = cells.iter().map(|c| c.fingerprint()).collect();
        fps.sort();
        fps.dedup();
        assert_eq!(fps.len(), 4);
        // the data path is not part of the fingerprint
        let mut moved = cfg.clone();
        moved.dataset.path = "/elsewhere/data.csv".into();
        assert_eq!(moved.cells()[0].fingerprint(), cells[0].fingerprint());
        let mut lr = cfg.clone();
        lr.train.learning_rate = 0.01;
        assert_ne!(lr.cells()[0].fingerprint(), cells[0].fingerprint());
    }

    #[test]
    fn experiment_records_persist_and_reproduce() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let data = small_data();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let outs = run_experiment_on(&data, &cfg, &opts).unwrap();
        assert_eq!(outs.len(), 4);
        let r = &outs[0].record;
        let path = dir
            .path()
            .join("results/synthetic")
            .join(format!("{}.jsonl", r.fingerprint));
        let back = read_records(&path).unwrap();
        assert_eq!(back, vec![r.clone()]);
        let again = reproduce(&data, &back[0]).unwrap();
        assert_eq!(again.test.mse.to_bits(), r.test.mse.to_bits());
        assert_eq!(again.fingerprint, r.fingerprint);
        let summary = summarize(&outs.iter().map(|o| o.record.clone()).collect::<Vec<_>>());
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].per_seed_mse.len(), 2);
    }

    #[test]
    fn parallel_workers_match_serial() {
        let cfg = small_config();
        let data = small_data();
        let serial = run_experiment_on(&data, &cfg, &RunOptions::default()).unwrap();
        let parallel = run_experiment_on(
            &data,
            &cfg,
            &RunOptions {
                workers: 3,
                ..RunOptions::default()
            },
        )
        .unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.record.test.mse.to_bits(), b.record.test.mse.to_bits());
            assert_eq!(a.record.fingerprint, b.record.fingerprint);
        }
    }

    #[test]
    fn ablation_grid_shape_and_determinism() {
        let mut cfg = small_config();
        cfg.repeats = 1;
        cfg.horizons = vec![12];
        cfg.train.max_epochs = 2;
        let data = small_data();
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let (t1, recs) = ablation_suite_on(&data, &cfg, &opts).unwrap();
        let (t2, _) = ablation_suite_on(&data, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(t1, t2);
        // 48: SFT, MFT24, MMFT (120 and 360 do not divide 48)
        assert_eq!(t1.rows.len(), 6);
        assert_eq!(recs.len(), 6);
        assert!(t1.row(Variant::Mft(24), false).is_some());
        let imp = t1.scale_improvement().unwrap();
        let sft = t1.row(Variant::Sft, true).unwrap().mse[0];
        let mmft = t1.row(Variant::Mmft, true).unwrap().mse[0];
        assert_eq!(imp[0], sft - mmft);
        let csv = std::fs::read_to_string(dir.path().join("tables/ablation_synthetic.csv")).unwrap();
        assert!(csv.starts_with("variant,mask,H12\n"));
        assert!(csv.contains("Imp.(MMFT over SFT)"));
        assert!(t1.render().contains("MMFT mask=off"));
    }

    #[test]
    fn variants_for_default_lookback() {
        assert_eq!(
            ablation_variants(720),
            vec![
                Variant::Sft,
                Variant::Mft(24),
                Variant::Mft(120),
                Variant::Mft(360),
                Variant::Mmft
            ]
        );
    }

    #[test]
    fn untrained_masks_export_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::new(720, 96, vec![2, 24, 720], true);
        let p = init_params(&cfg, &mut Rng::new(1), InitScheme::UniformFanIn).unwrap();
        let paths = export_masks(&p, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let m = read_mask_csv(&paths[1]).unwrap();
        assert_eq!(m.dim(), (30, 24));
        assert!(m.iter().all(|v| *v == 1.0));
        assert!(mask_deviation_by_frequency(&m).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mask_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::new(24, 4, vec![6, 24], true);
        let mut rng = Rng::new(2);
        let mut p = init_params(&cfg, &mut rng, InitScheme::Zeros).unwrap();
        for sp in &mut p.scales {
            sp.mask.mapv_inplace(|_| rng.normal() * 1e3);
        }
        let paths = export_masks(&p, dir.path()).unwrap();
        for (path, sp) in paths.iter().zip(&p.scales) {
            assert_eq!(read_mask_csv(path).unwrap(), sp.mask);
        }
    }

    #[test]
    fn reference_table_loads() {
        let r = reference::ReferenceTable::load();
        assert_eq!(r.mse("ETTh1", Variant::Mmft, true, 96), Some(0.359));
        assert_eq!(r.mse("ETTh1", Variant::Sft, true, 96), Some(0.372));
        assert_eq!(r.mse("ETTh1", Variant::Mmft, false, 192), Some(0.405));
        assert_eq!(r.mse("ETTm1", Variant::Mmft, true, 960), Some(0.411));
        assert_eq!(r.tolerances.absolute_mse, 0.020);
    }
}
