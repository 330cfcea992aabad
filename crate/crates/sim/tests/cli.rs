use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use multisense::report;
use multisense::ExperimentConfig;
use multisense_core::Variant;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multisense"))
}

/// A quick experiment: two seeds, two availability levels, short horizons.
fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::reference();
    cfg.seeds = vec![0, 1];
    cfg.availability = vec![0.8, 1.0];
    cfg.scenario.variant = Variant::Gaussian;
    cfg.scenario.train_secs = 600.0;
    cfg.scenario.calibration_windows = 120;
    cfg.scenario.eval_secs = 120.0;
    let out = dir.join("out");
    cfg.output.dataset = out.join("dataset.msds");
    cfg.output.model = out.join("model.json");
    cfg.output.operator = out.join("operator.json");
    cfg.output.trace = out.join("trace.jsonl");
    cfg.output.report = out.join("report.csv");
    let path = dir.join("small.toml");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    bin().arg("--config").arg(&cfg).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts a failed run and returns its parsed stderr JSON.
fn failed(out: Output) -> serde_json::Value {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr should be one line: {err}");
    serde_json::from_str(err.trim_end()).unwrap()
}

#[test]
fn gen_fit_translate_simulate() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let d = dir.path();
    assert!(ok(run(d, &["gen"])).contains("3 devices"));
    assert!(d.join("out/dataset.msds").exists());
    assert!(ok(run(d, &["fit", "--variant", "gaussian"])).contains("training accuracy"));
    for src in ["1", "2"] {
        let name = format!("out/op{src}.json");
        ok(run(d, &["fit-translation", "--src", src, "--tgt", "0", "--out", &name]));
        assert!(d.join(&name).exists());
    }
    let sim = ok(run(
        d,
        &[
            "simulate",
            "--strategy",
            "full",
            "--p",
            "0.8",
            "--model",
            "out/model.json",
            "--operator",
            "out/op1.json",
            "--operator",
            "out/op2.json",
        ],
    ));
    assert!(sim.contains("micro_f1"), "{sim}");
    let lines = multisense::trace::load(&d.join("out/trace.jsonl")).unwrap();
    assert_eq!(lines.len(), 120);
    assert!(lines.iter().all(|l| l.strategy == "full"));
    // periodic assessments plus any triggered by availability changes
    assert!(lines.iter().filter(|l| l.assessed).count() >= 12);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let d = dir.path();
    ok(run(d, &["simulate", "--strategy", "qs", "--p", "0.7", "--seed", "5", "--out", "a.jsonl"]));
    ok(run(d, &["simulate", "--strategy", "qs", "--p", "0.7", "--seed", "5", "--out", "b.jsonl"]));
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());
    ok(run(d, &["simulate", "--strategy", "qs", "--p", "0.7", "--seed", "6", "--out", "c.jsonl"]));
    assert_ne!(a, std::fs::read(d.join("c.jsonl")).unwrap());
}

#[test]
fn evaluate_writes_full_grid_and_report_reads_it() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let d = dir.path();
    let table = ok(run(d, &["evaluate"]));
    assert!(table.contains("wrote"));
    let rows = report::load(&d.join("out/report.csv")).unwrap();
    assert_eq!(rows.len(), 5 * 2 * 2);
    let summary = ok(run(d, &["report"]));
    for name in ["single-avg", "native", "trans", "qs", "full"] {
        assert!(summary.contains(name), "{summary}");
    }
}

#[test]
fn dump_config_round_trips() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let d = dir.path();
    let dumped = ok(run(d, &["--dump-config", "--seed", "9", "simulate", "--p", "0.9"]));
    let cfg = ExperimentConfig::from_toml(&dumped).unwrap();
    assert_eq!(cfg.seeds, vec![9]);
    assert_eq!(cfg.simulate.availability, 0.9);
    std::fs::write(d.join("again.toml"), &dumped).unwrap();
    let again = ok(bin().arg("--config").arg(d.join("again.toml")).arg("--dump-config").current_dir(d).output().unwrap());
    assert_eq!(again, dumped);

    let bundled = ok(bin().arg("--dump-config").output().unwrap());
    assert_eq!(ExperimentConfig::from_toml(&bundled).unwrap(), ExperimentConfig::reference());
}

#[test]
fn missing_file_is_named() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let v = failed(run(dir.path(), &["fit", "--dataset", "nowhere.msds"]));
    assert_eq!(v["error"], "not-found");
    assert_eq!(v["path"], "nowhere.msds");
    assert!(v["message"].as_str().unwrap().contains("nowhere.msds"));
}

#[test]
fn bad_config_value_names_the_field() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    let text = ExperimentConfig::reference().to_toml().unwrap().replace("availability = [0.7,", "availability = [1.7,");
    assert!(text.contains("[1.7,"), "replacement should apply");
    std::fs::write(&path, text).unwrap();
    let v = failed(bin().arg("--config").arg(&path).arg("evaluate").output().unwrap());
    assert_eq!(v["error"], "config");
    assert_eq!(v["field"], "availability[0]");
}

#[test]
fn usage_errors_are_json() {
    let v = failed(bin().args(["simulate", "--strategy", "best"]).output().unwrap());
    assert_eq!(v["error"], "usage");
    let v = failed(bin().output().unwrap());
    assert_eq!(v["error"], "usage");
}

#[test]
fn corrupt_dataset_reports_offset() {
    let dir = TempDir::new().unwrap();
    small_config(dir.path());
    let d = dir.path();
    ok(run(d, &["gen"]));
    let path = d.join("out/dataset.msds");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let v = failed(run(d, &["fit"]));
    assert_eq!(v["error"], "format");
    assert!(v["message"].as_str().unwrap().contains("truncated at byte"), "{v}");
}

#[test]
fn help_lists_commands() {
    let text = ok(bin().arg("--help").output().unwrap());
    for c in ["gen", "fit", "fit-translation", "simulate", "evaluate", "report"] {
        assert!(text.contains(c), "{text}");
    }
}
