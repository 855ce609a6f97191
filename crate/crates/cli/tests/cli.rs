//! End-to-end tests of the `bayesmf` binary: exit codes, file artifacts, and
//! rerun determinism.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bayesmf"));
    // Tests control the report directory explicitly.
    cmd.env_remove("BAYESMF_REPORT_DIR");
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

/// Six users rating four items each, timestamps increasing within each user,
/// so the latest-interaction holdout is unambiguous.
fn ratings_text() -> String {
    let mut text = String::new();
    for u in 1..=6u32 {
        let items = (1..=8u32).filter(|i| (i + u) % 2 == 0);
        for (j, i) in items.enumerate() {
            let rating = 1 + (u + i) % 5;
            let t = 100 * u + j as u32;
            writeln!(text, "{u}::{i}::{rating}::{t}").unwrap();
        }
    }
    text
}

fn write_ratings(dir: &Path) {
    fs::write(dir.join("ratings.dat"), ratings_text()).unwrap();
}

#[test]
fn ingest_prints_summary_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());

    let out = run_in(dir.path(), &["ingest", "--input", "ratings.dat", "--out", "a"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("interactions: 24"), "summary: {text}");
    assert!(text.contains("users: 6"), "summary: {text}");
    assert!(text.contains("items: 8"), "summary: {text}");
    assert!(text.contains("sparsity: 50.00%"), "summary: {text}");

    let out = run_in(dir.path(), &["ingest", "--input", "ratings.dat", "--out", "b"]);
    assert_ok(&out);
    for name in ["canonical.csv", "stats.json"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across reruns");
    }

    let csv = fs::read_to_string(dir.path().join("a/canonical.csv")).unwrap();
    assert!(csv.starts_with("user,item,rating,timestamp\n"));
    assert_eq!(csv.lines().count(), 25);
}

#[test]
fn ingest_of_an_empty_file_exits_2_with_empty_dataset_message() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.dat"), "").unwrap();
    let out = run_in(dir.path(), &["ingest", "--input", "empty.dat", "--out", "x"]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("empty dataset"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn ingest_names_the_bad_line_of_a_malformed_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.dat"), "1::2::5::1\n1::2::five::2\n").unwrap();
    let out = run_in(dir.path(), &["ingest", "--input", "bad.dat", "--out", "x"]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("bad.dat"), "stderr: {err}");
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn unknown_model_name_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    let out = run_in(
        dir.path(),
        &["train", "--model", "blfm-bias", "--data", "ratings.dat"],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("blfm-bias"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn divergent_training_exits_3_and_names_the_iteration() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--model",
            "blfm",
            "--data",
            "ratings.dat",
            "--k",
            "2",
            "--iters",
            "200",
            "--step",
            "1000000",
            "--out",
            "run",
        ],
    );
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("diverged at iteration"), "stderr: {err}");
}

#[test]
fn eval_with_a_mismatched_split_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    // A second dataset with one extra user changes the model shape.
    let mut bigger = ratings_text();
    bigger.push_str("9::1::3::1\n9::3::4::2\n");
    fs::write(dir.path().join("bigger.dat"), bigger).unwrap();

    for (data, out_dir) in [("ratings.dat", "split_a"), ("bigger.dat", "split_b")] {
        assert_ok(&run_in(
            dir.path(),
            &["split", "--data", data, "--out", out_dir],
        ));
    }
    assert_ok(&run_in(
        dir.path(),
        &[
            "train", "--model", "svd", "--data", "split_a", "--k", "2", "--iters", "5", "--out",
            "run",
        ],
    ));
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--split",
            "split_b",
        ],
    );
    assert_eq!(exit_code(&out), 4, "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("shape mismatch"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn oversized_validation_request_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "split",
            "--data",
            "ratings.dat",
            "--out",
            "s",
            "--validation-size",
            "1000",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("requested sample of 1000"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn config_file_overrides_conflicting_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    fs::write(dir.path().join("train.json"), r#"{"k": 2, "iters": 7}"#).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--model",
            "svd",
            "--data",
            "ratings.dat",
            "--k",
            "5",
            "--iters",
            "40",
            "--config",
            "train.json",
            "--out",
            "run",
        ],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("k=2"), "stdout: {}", stdout(&out));
    assert!(
        stdout(&out).contains("epochs=7"),
        "stdout: {}",
        stdout(&out)
    );

    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/checkpoint.json")).unwrap())
            .unwrap();
    assert_eq!(ckpt["model"]["k"], 2);
    assert_eq!(ckpt["meta"]["config"]["trainer"]["epochs"], 7);

    let trace = fs::read_to_string(dir.path().join("run/objective_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 8, "header plus one row per epoch");
}

#[test]
fn config_file_with_unknown_keys_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    fs::write(dir.path().join("train.json"), r#"{"epocs": 7}"#).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--model",
            "svd",
            "--data",
            "ratings.dat",
            "--config",
            "train.json",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("epocs"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn report_dir_env_var_overrides_the_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    assert_ok(&run_in(
        dir.path(),
        &["split", "--data", "ratings.dat", "--out", "s"],
    ));
    assert_ok(&run_in(
        dir.path(),
        &[
            "train", "--model", "svdbias", "--data", "s", "--k", "2", "--iters", "10", "--out",
            "run",
        ],
    ));

    let out = bin()
        .current_dir(dir.path())
        .env("BAYESMF_REPORT_DIR", "redirected")
        .args([
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--split",
            "s",
            "--out",
            "ignored",
        ])
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(dir.path().join("redirected/eval.json").is_file());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn sweep_rejects_an_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    assert_ok(&run_in(
        dir.path(),
        &["split", "--data", "ratings.dat", "--out", "s"],
    ));
    fs::write(dir.path().join("grid.json"), "[]").unwrap();
    let out = run_in(
        dir.path(),
        &["sweep", "--split", "s", "--grid", "grid.json"],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("sweep grid is empty"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn sweep_orders_rows_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    assert_ok(&run_in(
        dir.path(),
        &[
            "split",
            "--data",
            "ratings.dat",
            "--out",
            "s",
            "--validation-size",
            "4",
        ],
    ));
    let grid = r#"[
        {"k": 2, "iterations": 40, "step_size": 0.05, "mc_samples": 20, "eval_every": 10},
        {"k": 1, "iterations": 40, "step_size": 0.05, "mc_samples": 20, "eval_every": 10}
    ]"#;
    fs::write(dir.path().join("grid.json"), grid).unwrap();
    let out = run_in(
        dir.path(),
        &["sweep", "--split", "s", "--grid", "grid.json", "--out", "r"],
    );
    assert_ok(&out);

    let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("k=1"), "rows sorted by k: {lines:?}");
    assert!(lines[1].contains("k=2"), "rows sorted by k: {lines:?}");
    for line in &lines {
        assert!(line.contains("rmse_test="), "row: {line}");
        assert!(line.contains("gap="), "row: {line}");
    }

    let csv = fs::read_to_string(dir.path().join("r/sweep.csv")).unwrap();
    assert!(csv.starts_with("model_tag,k,rmse_test,rmse_validation,gap,error\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("r/sweep.json").is_file());
    assert!(dir.path().join("r/sweep.timing.json").is_file());
}

#[test]
fn trace_needs_a_posterior_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    assert_ok(&run_in(
        dir.path(),
        &[
            "train", "--model", "svd", "--data", "ratings.dat", "--k", "2", "--iters", "5",
            "--out", "run",
        ],
    ));
    let out = run_in(
        dir.path(),
        &["trace", "--checkpoint", "run/checkpoint.json"],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("posterior checkpoint"),
        "stderr: {}",
        stderr(&out)
    );
}

/// One full desk-scale pipeline under a working directory, using relative
/// paths throughout so artifacts embed identical path strings across runs.
fn run_pipeline(dir: &Path) {
    write_ratings(dir);
    assert_ok(&run_in(
        dir,
        &["ingest", "--input", "ratings.dat", "--out", "ingested"],
    ));
    assert_ok(&run_in(
        dir,
        &[
            "split",
            "--data",
            "ingested/canonical.csv",
            "--out",
            "split",
            "--validation-size",
            "4",
            "--seed",
            "7",
        ],
    ));
    assert_ok(&run_in(
        dir,
        &[
            "train", "--model", "blfmbias", "--data", "split", "--k", "2", "--iters", "400",
            "--step", "0.05", "--seed", "7", "--out", "model",
        ],
    ));
    assert_ok(&run_in(
        dir,
        &[
            "eval",
            "--checkpoint",
            "model/checkpoint.json",
            "--split",
            "split",
            "--mc-samples",
            "40",
            "--seed",
            "7",
            "--out",
            "reports",
        ],
    ));
    assert_ok(&run_in(
        dir,
        &[
            "trace",
            "--checkpoint",
            "model/checkpoint.json",
            "--entity-kind",
            "user",
            "--entity",
            "1",
            "--dim",
            "0",
            "--samples",
            "30",
            "--seed",
            "7",
            "--out",
            "reports",
        ],
    ));
}

#[test]
fn pipeline_reruns_with_one_seed_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());

    // Everything except the wall-clock timing sidecar must match exactly.
    let artifacts = [
        "ingested/canonical.csv",
        "ingested/stats.json",
        "split/train.csv",
        "split/test.csv",
        "split/validation.csv",
        "split/manifest.json",
        "split/config.json",
        "model/checkpoint.json",
        "model/elbo_trace.csv",
        "reports/eval.json",
        "reports/eval.csv",
        "reports/trace.json",
        "reports/trace.csv",
    ];
    for name in artifacts {
        let x = fs::read(a.path().join(name)).unwrap_or_else(|_| panic!("{name} missing"));
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identically seeded runs");
    }
}

#[test]
fn eval_prints_six_decimal_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write_ratings(dir.path());
    assert_ok(&run_in(
        dir.path(),
        &[
            "split",
            "--data",
            "ratings.dat",
            "--out",
            "s",
            "--validation-size",
            "4",
        ],
    ));
    assert_ok(&run_in(
        dir.path(),
        &[
            "train", "--model", "blfmbias", "--data", "s", "--k", "2", "--iters", "200",
            "--step", "0.05", "--out", "run",
        ],
    ));
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.json",
            "--split",
            "s",
            "--analytic",
            "--out",
            "r",
        ],
    );
    assert_ok(&out);
    let text = stdout(&out);
    for field in ["rmse_test=", "rmse_validation=", "gap="] {
        let value = text
            .split(field)
            .nth(1)
            .unwrap_or_else(|| panic!("missing {field} in: {text}"))
            .split_whitespace()
            .next()
            .unwrap();
        let (_sign, digits) = value.split_at(usize::from(value.starts_with('-')));
        let (whole, frac) = digits.split_once('.').expect("decimal point");
        assert!(!whole.is_empty() && frac.len() == 6, "field {field}{value}");
    }

    // The trained model beats predicting blind on its own training data.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r/eval.json")).unwrap())
            .unwrap();
    let rmse = report[0]["rmse_test"].as_f64().unwrap();
    assert!(rmse < 2.0, "rmse {rmse} unexpectedly large");
}
