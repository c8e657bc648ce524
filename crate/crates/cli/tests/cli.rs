use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mmfnet"));
    c.env_remove("MMF_DATA_DIR");
    c
}

fn write_toy(dir: &Path) {
    let mut csv = String::from("date,a,b\n");
    for t in 0..800 {
        let x = t as f64;
        let a = (2.0 * std::f64::consts::PI * x / 24.0).sin() + 0.05 * ((t * 7919) % 13) as f64 / 13.0;
        let b = (2.0 * std::f64::consts::PI * x / 12.0).cos() + 0.001 * x;
        writeln!(csv, "t{t},{a},{b}").unwrap();
    }
    std::fs::write(dir.join("toy.csv"), csv).unwrap();
    std::fs::write(
        dir.join("cfg.toml"),
        r#"lookback = 48
horizons = [12]
ladder = [4, 12, 48]
mask_enabled = true
rin_std = false
repeats = 1

[dataset]
name = "toy"
path = "toy.csv"
split_policy = { kind = "ratio", train = 0.6, val = 0.2, test = 0.2 }

[train]
max_epochs = 2
batch_size = 32
"#,
    )
    .unwrap();
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|t| t.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in `{line}`"))
        .to_string()
}

#[test]
fn train_eval_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(
        dir.path(),
        &["train", "--config", "cfg.toml", "--quiet", "--out", "out"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let first = out.lines().next().unwrap();
    let fp = field(first, "fingerprint");
    let mse: f64 = field(first, "test_mse").parse().unwrap();
    let ck = dir.path().join(format!("out/checkpoints/{fp}.ckpt"));
    assert!(ck.exists());
    assert!(dir.path().join(format!("out/results/toy/{fp}.jsonl")).exists());
    assert!(dir.path().join(format!("out/results/toy/{fp}.history.jsonl")).exists());

    let e = run(
        dir.path(),
        &["eval", "--config", "cfg.toml", "--checkpoint", ck.to_str().unwrap()],
    );
    assert!(e.status.success(), "{}", stderr(&e));
    let eval_mse: f64 = field(stdout(&e).trim(), "test_mse").parse().unwrap();
    assert!((eval_mse - mse).abs() < 1e-4);

    let m = run(
        dir.path(),
        &["export-masks", "--checkpoint", ck.to_str().unwrap(), "--out", "masks"],
    );
    assert!(m.status.success(), "{}", stderr(&m));
    let mut files: Vec<_> = std::fs::read_dir(dir.path().join("masks"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 3);
    let text = std::fs::read_to_string(dir.path().join("masks/mask_scale1_seg12.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.split(',').count() == 12));
}

#[test]
fn seed_flag_and_overrides_change_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let fp = |extra: &[&str]| {
        let mut args = vec![
            "train",
            "--config",
            "cfg.toml",
            "--quiet",
            "--out",
            "out",
            "train.max_epochs=1",
        ];
        args.extend_from_slice(extra);
        let o = run(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        field(stdout(&o).lines().next().unwrap(), "fingerprint")
    };
    let base = fp(&[]);
    assert_eq!(fp(&[]), base);
    assert_ne!(fp(&["--seed", "7"]), base);
    assert_ne!(fp(&["mask_enabled=false"]), base);
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(dir.path(), &["train", "--config", "cfg.toml", "train.learnng_rate=0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learnng_rate"), "{}", stderr(&o));
}

#[test]
fn non_dividing_segment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(dir.path(), &["train", "--config", "cfg.toml", "ladder=[5, 48]"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("5"), "{}", stderr(&o));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn missing_dataset_is_a_data_error_with_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["dataset-info", "--dataset", "ETTh2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ETTh2.csv"), "{}", stderr(&o));
}

#[test]
fn blank_cell_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let text = std::fs::read_to_string(dir.path().join("toy.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[11] = "t10,,1.0".into();
    std::fs::write(dir.path().join("toy.csv"), lines.join("\n")).unwrap();
    let o = run(dir.path(), &["dataset-info", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("12"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(
        dir.path(),
        &[
            "train",
            "--config",
            "cfg.toml",
            "--quiet",
            "train.learning_rate=1e200",
            "train.optimizer.kind=\"sgd\"",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn dataset_info_reports_splits() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(dir.path(), &["dataset-info", "--config", "cfg.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("rows 800 channels 2"));
    assert!(out.contains("rows 0..480"));
    assert!(out.contains("rows 640..800 windows H12:149"));
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path());
    let o = run(
        dir.path(),
        &[
            "ablate",
            "--config",
            "cfg.toml",
            "--quiet",
            "--out",
            "out",
            "train.max_epochs=1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Imp.(mask)"));
    let csv = std::fs::read_to_string(dir.path().join("out/tables/ablation_toy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 + 2);
}

#[test]
fn selftest_passes_and_detects_injected_fault() {
    let o = bin().arg("selftest").output().unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 4);
    let f = bin().args(["selftest", "--inject-dct-fault", "1.01"]).output().unwrap();
    assert_eq!(f.status.code(), Some(4));
    assert!(stdout(&f).contains("FAIL dct round trip"));
}

#[test]
fn dataset_info_on_a_named_file_uses_the_builtin_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
    for t in 0..17420 {
        let v = (t as f64 * 0.1).sin();
        writeln!(csv, "t{t},{v},{v},{v},{v},{v},{v},{v}").unwrap();
    }
    std::fs::write(dir.path().join("ETTh1.csv"), csv).unwrap();
    let o = run(dir.path(), &["dataset-info", "--file", "ETTh1.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("rows 17420 channels 7"), "{out}");
    assert!(out.contains("rows 0..8640"), "{out}");
    assert!(out.contains("rows 8640..11520"), "{out}");
    assert!(out.contains("rows 11520..14400"), "{out}");
}
