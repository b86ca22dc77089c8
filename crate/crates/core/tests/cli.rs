use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn abssim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abssim")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, policy: &str, extra: &str) -> PathBuf {
    let p = dir.join(name);
    let text = format!(
        "policy = \"{policy}\"\nseed = 8\ncluster = \"static-1234\"\nsamples = 300\niterations = 60\ntheory_report = false\n{extra}"
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(s.lines().count(), 1, "{s}");
    s.trim_end().to_string()
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "abs.toml", "abs", "cadence = 7\n");
    let out_csv = dir.path().join("abs.csv");
    let out = abssim(&["run", "--config", cfg.to_str().unwrap(), "--out", out_csv.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("policy=abs\n"));
    assert!(stdout.contains("convergence_time="));
    let csv = std::fs::read_to_string(&out_csv).unwrap();
    assert!(csv.starts_with("t,sim_time,total_batch,train_loss,grad_norm_sq,k_1,k_2,k_3,k_4\n"));
    assert_eq!(csv.lines().count(), 1 + 60usize.div_ceil(7));
    assert_eq!(std::fs::read_to_string(dir.path().join("abs.summary.txt")).unwrap(), stdout);
}

#[test]
fn compare_writes_table_and_member_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.toml", "abs", "");
    let b = write_config(dir.path(), "b.toml", "ssp", "");
    let table = dir.path().join("table.txt");
    let out = abssim(&[
        "compare",
        "--configs",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("Cluster heterogeneity | ABS-SGD | SSP-SGD\nOnly static | "));
    assert!(dir.path().join("table_0_abs.csv").exists());
    assert!(dir.path().join("table_1_ssp.csv").exists());
}

#[test]
fn verify_theory_reports_totals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "abs", "");
    let out = abssim(&["verify-theory", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("points=") && last.ends_with("inconsistent=0"), "{last}");
}

#[test]
fn bad_config_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "abs", "learning_rat = 0.1\n");
    let out = abssim(&["run", "--config", cfg.to_str().unwrap(), "--out", "/dev/null"]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error kind=parse message="), "{line}");
    assert!(line.contains("bad.toml"), "{line}");
}

#[test]
fn missing_config_is_an_io_error() {
    let out = abssim(&["verify-theory", "--config", "/nonexistent/x.toml"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error kind=io message="));
}

#[test]
fn incomparable_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.toml", "abs", "");
    let b = write_config(dir.path(), "b.toml", "bsp", "threshold = 0.5\n");
    let out = abssim(&[
        "compare",
        "--configs",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        dir.path().join("t.txt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error kind=comparison message="));
}
