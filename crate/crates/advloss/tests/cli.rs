//! End-to-end command-line tests: artifact formats, config precedence,
//! error reporting, and lossless CSV round-trips.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_advloss")
}

fn run_ok(args: &[&str]) -> Output {
    let output = Command::new(bin()).args(args).output().unwrap();
    assert!(
        output.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(args: &[&str]) -> String {
    let output = Command::new(bin()).args(args).output().unwrap();
    assert!(!output.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(output.stderr).unwrap()
}

fn make_fixture(dir: &Path) -> (String, String) {
    let data = dir.join("toy.alds").to_str().unwrap().to_string();
    let model = dir.join("toy.mlp").to_str().unwrap().to_string();
    run_ok(&[
        "gen-data", "--kind", "blobs", "--n", "300", "--dims", "2", "--classes", "3",
        "--seed", "3", "--out", &data,
    ]);
    run_ok(&[
        "train", "--data", &data, "--hidden", "8", "--epochs", "8", "--seed", "2",
        "--out", &model,
    ]);
    (data, model)
}

#[test]
fn gen_data_is_deterministic_and_validates_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.alds");
    let b = dir.path().join("b.alds");
    for out in [&a, &b] {
        run_ok(&[
            "gen-data", "--kind", "blobs", "--n", "100", "--dims", "2", "--classes", "3",
            "--seed", "17", "--out", out.to_str().unwrap(),
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let err = run_err(&[
        "gen-data", "--kind", "blobs", "--n", "10", "--classes", "1",
        "--out", dir.path().join("c.alds").to_str().unwrap(),
    ]);
    assert!(err.starts_with("error:"), "stderr was: {err}");
}

#[test]
fn train_prints_metrics_line() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = make_fixture(dir.path());
    // make_fixture already checks success; re-run to capture stdout.
    let data = dir.path().join("toy.alds");
    let model = dir.path().join("retrain.mlp");
    let out = run_ok(&[
        "train", "--data", data.to_str().unwrap(), "--hidden", "8", "--epochs", "8",
        "--seed", "2", "--out", model.to_str().unwrap(),
    ]);
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.contains("clean_accuracy="), "{line}");
    assert!(line.contains("final_loss="), "{line}");
    assert!(model.exists());
}

#[test]
fn eval_zero_epsilon_reports_equal_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());
    let report = dir.path().join("report.csv");
    run_ok(&[
        "eval", "--data", &data, "--model", &model, "--loss", "ce", "--eps", "0",
        "--steps", "10", "--seed", "7", "--out", report.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| {
        let i = header.iter().position(|h| *h == name).unwrap();
        row[i].to_string()
    };
    assert_eq!(col("clean_accuracy"), col("adversarial_accuracy"));
    assert_eq!(col("loss"), "ce");
}

#[test]
fn eval_accepts_catalog_names_and_expression_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());
    let out = run_ok(&[
        "eval", "--data", &data, "--model", &model, "--loss", "bs5", "--eps", "0.08",
        "--steps", "5", "--seed", "7",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("bs5,"));
    for field in row.split(',').skip(1).take(4) {
        let v: f64 = field.parse().unwrap();
        assert!(v.is_finite());
    }

    let expr_path = dir.path().join("margin.expr");
    std::fs::write(&expr_path, "(sub (max p) (sum (mul p q)))\n").unwrap();
    let out = run_ok(&[
        "eval", "--data", &data, "--model", &model, "--loss", expr_path.to_str().unwrap(),
        "--eps", "0.08", "--steps", "5", "--seed", "7",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("margin,"));
}

#[test]
fn config_precedence_flag_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        format!("data={data}\nmodel={model}\nloss=cw\neps=0.05\nsteps=3\nseed=5\n"),
    )
    .unwrap();

    // File values apply when no flag is given.
    let out = run_ok(&["eval", "--config", config.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eps=0.050000"), "{text}");
    assert!(text.contains("steps=3"), "{text}");

    // A flag overrides the file; untouched keys keep file values.
    let out = run_ok(&[
        "eval", "--config", config.to_str().unwrap(), "--eps", "0.09",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eps=0.090000"), "{text}");
    assert!(text.contains("steps=3"), "{text}");

    // Defaults fill whatever neither layer mentions (steps default 100).
    let minimal = dir.path().join("minimal.cfg");
    std::fs::write(&minimal, format!("data={data}\nmodel={model}\nloss=cw\n")).unwrap();
    let out = run_ok(&["eval", "--config", minimal.to_str().unwrap(), "--eps", "0.01"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("steps=100"), "{text}");
}

#[test]
fn unknown_config_keys_fail_with_machine_parseable_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "epsilon_typo=0.3\n").unwrap();
    let err = run_err(&["gradcheck", "--config", config.to_str().unwrap()]);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("epsilon_typo"), "{err}");
}

#[test]
fn search_log_echoes_defaults_for_untouched_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());
    let out_dir = dir.path().join("search");
    run_ok(&[
        "search", "--data", &data, "--model", &model, "--generations", "1",
        "--population-size", "8", "--fitness-samples", "32", "--eps", "0.08",
        "--steps", "3", "--seed", "1", "--out", out_dir.to_str().unwrap(),
    ]);
    let log = std::fs::read_to_string(out_dir.join("search_log.csv")).unwrap();
    let header = log.lines().next().unwrap();
    // Untouched hyperparameters echo the reference defaults.
    for token in [
        "max_depth=25",
        "tournament_size=3",
        "crossover_rate=0.500000",
        "mutation_rate=0.300000",
    ] {
        assert!(header.contains(token), "missing {token} in {header}");
    }
    let best = std::fs::read_to_string(out_dir.join("best_expression.txt")).unwrap();
    advloss::expr::parse(best.trim()).unwrap();
}

#[test]
fn simplify_writes_reduced_expression() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.expr");
    let output = dir.path().join("out.expr");
    std::fs::write(&input, "(add (mul 1 p) 0)\n").unwrap();
    run_ok(&[
        "simplify", "--expr", input.to_str().unwrap(), "--out", output.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(&output).unwrap().trim(), "p");
}

#[test]
fn gradcheck_command_exits_zero_and_reports_all_checks() {
    let out = run_ok(&["gradcheck", "--seed", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().starts_with("check,"));
    // 12 ops + trees + model input gradients.
    assert_eq!(text.lines().count(), 15);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")));
}

/// Reformat a numeric CSV field the way the writers do; non-numeric
/// fields pass through. Lossless round-trip means re-serialization
/// reproduces the bytes.
fn reformat_field(field: &str) -> String {
    if field.contains('.') {
        if let Ok(v) = field.parse::<f64>() {
            return format!("{v:.6}");
        }
    }
    field.to_string()
}

fn assert_csv_round_trips(text: &str) {
    let rebuilt: String = text
        .lines()
        .map(|line| {
            if line.starts_with('#') {
                line.to_string()
            } else {
                line.split(',')
                    .map(reformat_field)
                    .collect::<Vec<_>>()
                    .join(",")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    assert_eq!(rebuilt, text, "csv does not round-trip losslessly");
}

#[test]
fn emitted_csvs_parse_back_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());

    let report = dir.path().join("report.csv");
    run_ok(&[
        "eval", "--data", &data, "--model", &model, "--loss", "dlr", "--eps", "0.08",
        "--steps", "4", "--seed", "3", "--out", report.to_str().unwrap(),
    ]);
    assert_csv_round_trips(&std::fs::read_to_string(&report).unwrap());

    let search_dir = dir.path().join("search");
    run_ok(&[
        "search", "--data", &data, "--model", &model, "--generations", "2",
        "--population-size", "8", "--fitness-samples", "32", "--eps", "0.08",
        "--steps", "3", "--seed", "1", "--out", search_dir.to_str().unwrap(),
    ]);
    assert_csv_round_trips(&std::fs::read_to_string(search_dir.join("search_log.csv")).unwrap());

    let land_dir = dir.path().join("landscape");
    run_ok(&[
        "landscape", "--data", &data, "--model", &model, "--hc-loss", "cw",
        "--bs-loss", "bs4", "--losses", "zero_one,ce", "--resolution", "5",
        "--eps", "0.1", "--steps", "5", "--seed", "2", "--sample", "0",
        "--out", land_dir.to_str().unwrap(),
    ]);
    for name in ["landscape_zero_one.csv", "landscape_ce.csv"] {
        let path = land_dir.join(name);
        assert!(path.exists(), "missing {name}");
        assert_csv_round_trips(&std::fs::read_to_string(&path).unwrap());
    }
}

#[test]
fn landscape_scan_reports_when_no_anchor_exists() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = make_fixture(dir.path());
    // With eps 0 no attack flips anything, so no sample has a failing
    // handcrafted attack alongside a succeeding searched one.
    let err = run_err(&[
        "landscape", "--data", &data, "--model", &model, "--eps", "0", "--steps", "2",
        "--out", dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(err.starts_with("error:"), "{err}");
}
