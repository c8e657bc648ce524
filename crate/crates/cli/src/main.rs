use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmfnet::checkpoint;
use mmfnet::data::{SplitPart, DATA_DIR_ENV};
use mmfnet::harness::{self, ExperimentConfig, RunOptions};
use mmfnet::selftest::{self, SelftestOptions};
use mmfnet::{evaluate, ErrorClass, MmfError, Model};

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(name = "mmfnet", version, about = "Multi-scale masked frequency forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (horizon, seed) cell of a configuration and test it.
    Train(RunArgs),
    /// Test a saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Segment-length and mask ablation grid.
    Ablate(RunArgs),
    /// Write the learned masks of a checkpoint as one CSV per scale.
    ExportMasks {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "masks")]
        out: PathBuf,
    },
    /// Row and channel counts, split boundaries and window counts.
    DatasetInfo {
        /// CSV file to inspect instead of a configured dataset.
        #[arg(long)]
        file: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Internal consistency checks.
    Selftest {
        /// Scale the DCT basis used by the transform suite.
        #[arg(long, hide = true)]
        inject_dct_fault: Option<f64>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "dataset")]
    config: Option<PathBuf>,
    /// Built-in dataset with default settings (ETTh1, ETTh2, ETTm1, ETTm2,
    /// Weather, Electricity, Traffic).
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// First seed; repeat k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    quiet: bool,
    /// Dotted `key=value` overrides, e.g. `train.learning_rate=0.001`.
    overrides: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<MmfError> for Failure {
    fn from(e: MmfError) -> Self {
        let code = match e.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Data => EXIT_DATA,
            ErrorClass::Numerical => EXIT_DIVERGED,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Eval { run, checkpoint } => eval(&run, &checkpoint),
        Command::Ablate(args) => ablate(&args),
        Command::ExportMasks { checkpoint, out } => {
            let params = checkpoint::load(&checkpoint)?;
            let paths = harness::export_masks(&params, &out)?;
            for (p, sp) in paths.iter().zip(&params.scales) {
                let (rows, cols) = sp.mask.dim();
                println!("{} ({rows} segments x {cols} bins)", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DatasetInfo { file, run } => dataset_info(&run, file.as_deref()),
        Command::Selftest { inject_dct_fault } => {
            let reports = selftest::run_all(SelftestOptions {
                dct_fault: inject_dct_fault,
            });
            let mut ok = true;
            for r in &reports {
                ok &= r.passed;
                println!(
                    "{} {:<16} worst {:.3e} (bound {:.1e}, {} ms)",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst,
                    r.bound,
                    r.wall_ms
                );
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFTEST)
            })
        }
    }
}

/// Builds the experiment configuration from a file or built-in dataset,
/// then applies `--seed` and the dotted overrides.
fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut value: toml::Value = match (&args.config, &args.dataset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| config_failure(format!("{}: {}", path.display(), e.message())))?
        }
        (None, Some(name)) => {
            let cfg = ExperimentConfig::for_dataset(name)?;
            toml::Value::try_from(&cfg).expect("config serializes")
        }
        (None, None) => return Err(config_failure("either --config or --dataset is required")),
    };
    for ov in &args.overrides {
        apply_override(&mut value, ov)?;
    }
    if let Some(seed) = args.seed {
        apply_override(&mut value, &format!("train.seed={seed}"))?;
    }
    let text = toml::to_string(&value).expect("value serializes");
    Ok(ExperimentConfig::from_toml_str(&text)?)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), Failure> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_failure(format!("override `{spec}` is not of the form key=value")))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_failure(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(config_failure("empty override key"))
}

/// Configuration for an arbitrary CSV: a built-in dataset when the file
/// name matches one, otherwise a 70/10/20 split with no channel check.
fn config_for_file(args: &RunArgs, path: &Path) -> Result<ExperimentConfig, Failure> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let builtin = mmfnet::data::DatasetSpec::builtin(&stem).or_else(|| {
        ["ETTh1", "ETTh2", "ETTm1", "ETTm2", "Weather", "Electricity", "Traffic"]
            .into_iter()
            .find(|n| n.eq_ignore_ascii_case(&stem))
            .and_then(mmfnet::data::DatasetSpec::builtin)
    });
    let name = builtin.as_ref().map_or(stem.clone(), |b| b.name.clone());
    let mut cfg = match builtin {
        Some(_) => ExperimentConfig::for_dataset(&name)?,
        None => {
            let mut c = ExperimentConfig::for_dataset("Weather")?;
            c.dataset.name = name;
            c.dataset.expected_channels = None;
            c.dataset.sampling = String::new();
            c
        }
    };
    cfg.dataset.path = path.to_path_buf();
    let mut value = toml::Value::try_from(&cfg).expect("config serializes");
    for ov in &args.overrides {
        apply_override(&mut value, ov)?;
    }
    let text = toml::to_string(&value).expect("value serializes");
    Ok(ExperimentConfig::from_toml_str(&text)?)
}

fn run_options(args: &RunArgs) -> RunOptions {
    RunOptions {
        out_dir: Some(args.out.clone()),
        workers: args.workers,
        verbose: !args.quiet,
    }
}

/// Data errors are reported with the file they concern.
fn with_data_path(cfg: &ExperimentConfig) -> impl Fn(MmfError) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        if f.code == EXIT_DATA && !f.message.contains(&*cfg.dataset.resolved_path().to_string_lossy()) {
            f.message = format!("{}: {}", cfg.dataset.resolved_path().display(), f.message);
        }
        if f.code == EXIT_DATA && std::env::var_os(DATA_DIR_ENV).is_none() {
            f.message.push_str(&format!(
                " (set {DATA_DIR_ENV} to the directory holding the dataset files)"
            ));
        }
        f
    }
}

fn train(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let data = harness::prepare(&cfg.dataset).map_err(with_data_path(&cfg))?;
    let outs = harness::run_experiment_on(&data, &cfg, &run_options(args))?;
    let ck_dir = args.out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| MmfError::io(&ck_dir, e))?;
    for o in &outs {
        let path = ck_dir.join(format!("{}.ckpt", o.record.fingerprint));
        checkpoint::save(&o.params, &path)?;
        let r = &o.record;
        println!(
            "{} H={} seed={} val_mse={:.4} test_mse={:.4} test_mae={:.4} best_epoch={} params={} wall={:.1}s fingerprint={}",
            r.dataset,
            r.horizon,
            r.seed,
            r.best_val_mse,
            r.test.mse,
            r.test.mae,
            r.best_epoch,
            r.param_count,
            r.wall_ms as f64 / 1000.0,
            r.fingerprint
        );
    }
    let records: Vec<_> = outs.into_iter().map(|o| o.record).collect();
    for s in harness::summarize(&records) {
        println!(
            "{} H={} mean over {} seeds: mse={:.4} mae={:.4}",
            cfg.dataset.name,
            s.horizon,
            s.per_seed_mse.len(),
            s.mse,
            s.mae
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(args: &RunArgs, ck: &Path) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let params = checkpoint::load(ck)?;
    let mcfg = params.config.clone();
    let data = harness::prepare(&cfg.dataset).map_err(with_data_path(&cfg))?;
    let test = data.windows(SplitPart::Test, mcfg.lookback, mcfg.horizon, 1)?;
    let model = Model::new(mcfg.clone())?;
    let m = evaluate(&model, &params, &test, cfg.rin_mode())?;
    println!(
        "{} H={} test_mse={:.6} test_mae={:.6} windows={}",
        cfg.dataset.name, mcfg.horizon, m.mse, m.mae, m.n_windows
    );
    Ok(ExitCode::SUCCESS)
}

fn ablate(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let data = harness::prepare(&cfg.dataset).map_err(with_data_path(&cfg))?;
    let (table, _) = harness::ablation_suite_on(&data, &cfg, &run_options(args))?;
    print!("{}", table.render());
    Ok(ExitCode::SUCCESS)
}

fn dataset_info(args: &RunArgs, file: Option<&Path>) -> Result<ExitCode, Failure> {
    let cfg = match file {
        Some(path) => config_for_file(args, path)?,
        None => load_config(args)?,
    };
    let frame = mmfnet::data::load_csv(&cfg.dataset).map_err(with_data_path(&cfg))?;
    let bounds = cfg
        .dataset
        .split_policy
        .boundaries(frame.n_rows())
        .map_err(with_data_path(&cfg))?;
    println!("{} ({})", cfg.dataset.name, cfg.dataset.resolved_path().display());
    println!(
        "rows {} channels {} sampling {}",
        frame.n_rows(),
        frame.n_channels(),
        cfg.dataset.sampling
    );
    let data = mmfnet::data::PreparedData::new(&frame, &cfg.dataset.split_policy)?;
    for part in [SplitPart::Train, SplitPart::Val, SplitPart::Test] {
        let r = bounds.range(part);
        let counts: Vec<String> = cfg
            .horizons
            .iter()
            .map(|&h| match data.windows(part, cfg.lookback, h, 1) {
                Ok(w) => format!("H{h}:{}", mmfnet::WindowSource::len(&w)),
                Err(_) => format!("H{h}:0"),
            })
            .collect();
        println!(
            "{:<5} rows {}..{} windows {}",
            part.name(),
            r.start,
            r.end,
            counts.join(" ")
        );
    }
    Ok(ExitCode::SUCCESS)
}
