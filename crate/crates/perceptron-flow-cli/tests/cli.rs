//! End-to-end tests of the `pflow` binary: exit codes, output files,
//! manifest-driven reproducibility, and the documented example invocations.

use std::path::Path;
use std::process::{Command, Output};

fn pflow(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pflow"))
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code (killed by signal?)")
}

#[test]
fn help_screens_exit_zero() {
    for args in [&["--help"][..], &["forget", "--help"], &["mnist", "--help"]] {
        let out = Command::new(env!("CARGO_BIN_EXE_pflow")).args(args).output().unwrap();
        assert_eq!(exit_code(&out), 0, "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown flag (rejected by the parser).
    let out = pflow(&["flow", "--no-such-flag", "1"], dir.path());
    assert_eq!(exit_code(&out), 2);
    // Unknown subcommand.
    let out = pflow(&["frobnicate"], dir.path());
    assert_eq!(exit_code(&out), 2);
    // Known flag, invalid value (validated by the driver).
    let out = pflow(&["flow", "--epsilon", "1.5"], dir.path());
    assert_eq!(exit_code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(msg.contains("error"), "stderr should explain: {msg}");
    // Config file with an unknown key.
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"signa": 1.0}"#).unwrap();
    let out = pflow(&["flow", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("signa"));
}

#[test]
fn fixed_point_example_prints_norm_and_tiny_residual() {
    // Documented example: pflow fixed-point --lambda 0.1 --sigma 0
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(&["fixed-point", "--lambda", "0.1", "--sigma", "0"], dir.path());
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("|w*|"), "missing norm in: {text}");
    let residual: f64 = text
        .split("residual =")
        .nth(1)
        .expect("residual printed")
        .trim()
        .parse()
        .expect("residual parses");
    assert!(residual.abs() <= 1e-10, "residual {residual}");
}

#[test]
fn flow_example_reaches_high_alignment() {
    // Documented example: pflow flow --rule sl --sigma 1 --lambda 0 --tmax 50
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(
        &["flow", "--rule", "sl", "--sigma", "1", "--lambda", "0", "--tmax", "50"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "flow.csv");
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "alignment").unwrap();
    let last = csv.lines().last().unwrap().split(',').nth(col).unwrap();
    let alignment: f64 = last.parse().unwrap();
    assert!(alignment > 0.99, "final alignment {alignment}");
    // SVG present and well-formed enough to contain series paths.
    let svg = read(dir.path(), "flow.svg");
    assert!(svg.contains("<svg") && svg.contains("class=\"series\""));
}

#[test]
fn simulate_is_deterministic_for_a_fixed_seed() {
    let args = [
        "simulate", "--dim", "20", "--steps", "400", "--runs", "4", "--record-every", "100",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = pflow(&args, a.path());
    assert_eq!(exit_code(&run_a), 0, "stderr: {}", String::from_utf8_lossy(&run_a.stderr));
    let run_b = pflow(&args, b.path());
    assert_eq!(exit_code(&run_b), 0);
    assert_eq!(read(a.path(), "simulate.csv"), read(b.path(), "simulate.csv"));
    assert_eq!(read(a.path(), "simulate.svg"), read(b.path(), "simulate.svg"));

    // A different global seed changes the data.
    let c = tempfile::tempdir().unwrap();
    let run_c = pflow(&[&args[..], &["--seed", "99"]].concat(), c.path());
    assert_eq!(exit_code(&run_c), 0);
    assert_ne!(read(a.path(), "simulate.csv"), read(c.path(), "simulate.csv"));
}

#[test]
fn manifest_config_reproduces_the_run_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let out = pflow(
        &["simulate", "--dim", "10", "--steps", "200", "--runs", "3", "--sigma", "0.5"],
        a.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Extract the resolved config from the manifest and re-run from it alone.
    let manifest: serde_json::Value =
        serde_json::from_str(&read(a.path(), "simulate_manifest.json")).unwrap();
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["seed"], 1, "default seed recorded");
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o == "simulate.csv"));
    let b = tempfile::tempdir().unwrap();
    let cfg_path = b.path().join("replay.json");
    std::fs::write(&cfg_path, serde_json::to_string(&manifest["config"]).unwrap()).unwrap();
    let replay = pflow(&["simulate", "--config", cfg_path.to_str().unwrap()], b.path());
    assert_eq!(exit_code(&replay), 0, "stderr: {}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(read(a.path(), "simulate.csv"), read(b.path(), "simulate.csv"));
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda": 0.5, "sigma": 0.0}"#).unwrap();
    let out = pflow(
        &["fixed-point", "--config", cfg.to_str().unwrap(), "--lambda", "0.1"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0);
    // λ = 0.1 (flag) at σ = 0 (file): compare against the single-solve text
    // of a run configured purely by flags.
    let direct = pflow(&["fixed-point", "--lambda", "0.1", "--sigma", "0"], dir.path());
    assert_eq!(stdout(&out), stdout(&direct));
}

#[test]
fn sweep_noise_writes_monotone_speed_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(
        &["sweep-noise", "--grid", "0.5,1.0", "--tmax", "120", "--threshold", "0.8"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "noise_sweep.csv");
    assert!(csv.starts_with("sigma,time_to_threshold"));
    let times: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 2);
    assert!(times[1] < times[0], "supervised learning speeds up with noise: {times:?}");
    assert!(dir.path().join("noise_sweep_manifest.json").exists());
}

#[test]
fn unsorted_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(&["sweep-noise", "--grid", "1.0,0.5"], dir.path());
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("increasing"));
}

#[test]
fn cov_decay_requires_positive_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(&["cov-decay", "--lambda", "0"], dir.path());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn specfun_check_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(&["specfun-check"], dir.path());
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("max deviation"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn forget_smoke_run_fits_a_decay() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(
        &[
            "forget", "--tasks", "3", "--dim", "20", "--runs", "6", "--max-steps", "20000",
            "--sigma", "0.5",
        ],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("decay constant"));
    let csv = read(dir.path(), "forget.csv");
    assert!(csv.starts_with("task,alignment_mu0,crossing_steps"));
    assert_eq!(csv.lines().count(), 1 + 3, "one row per learned task");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "forget_manifest.json")).unwrap();
    assert_eq!(manifest["config"]["tasks"], 3);
}

#[test]
fn mnist_pixels_smoke_run_writes_comparison() {
    // Uses the cached dataset; skip (without failing) when it is absent so
    // this suite stays runnable offline before any fetch.
    let data_dir = std::env::var("PERCEPTRON_FLOW_DATA").map(std::path::PathBuf::from).unwrap_or_else(|_| {
        let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
        std::path::PathBuf::from(home).join(".cache/perceptron-flow/mnist")
    });
    if !data_dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("skipping: dataset not present under {}", data_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(
        &["mnist", "--mode", "pixels", "--steps", "600", "--repeats", "2", "--checkpoints", "10"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "mnist.csv");
    assert!(csv.starts_with("step,theory_accuracy,theory_alignment,empirical_accuracy_mean"));
    assert_eq!(csv.lines().count(), 1 + 11, "initial point plus one row per checkpoint");
    assert!(dir.path().join("mnist_accuracy.svg").exists());
    assert!(dir.path().join("mnist_alignment.svg").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "mnist_manifest.json")).unwrap();
    assert_eq!(manifest["config"]["mode"], "pixels");
}

#[test]
fn flow_with_covariance_emits_trace_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = pflow(
        &["flow", "--cov0", "0.01", "--lambda", "0.1", "--tmax", "5", "--dt", "0.005"],
        dir.path(),
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "flow.csv");
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "tr_cov").unwrap();
    let first_row = csv.lines().nth(1).unwrap().split(',').nth(col).unwrap();
    let tr0: f64 = first_row.parse().expect("trace present when cov0 > 0");
    assert!((tr0 - 0.02).abs() < 1e-12, "2 dims × 0.01: {tr0}");
}
