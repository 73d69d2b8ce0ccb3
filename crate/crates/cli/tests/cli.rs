use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cartan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cartan")).args(args).env_remove("CARTAN_OUT_DIR").output().expect("spawn cartan")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn list_prints_catalog() {
    let out = cartan(&["list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["rigid_rotation", "taylor_green", "abc", "hill", "oscillator", "r5_decomposable", "curved_graph"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "missing {name}");
    }
}

#[test]
fn describe_known_and_unknown() {
    let out = cartan(&["describe", "kelvin"]);
    assert!(out.status.success());
    assert!(stdout(&out).to_lowercase().contains("circulation"));

    let out = cartan(&["describe", "kelvn"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kelvin"), "no suggestion in {}", stderr(&out));
}

#[test]
fn passing_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"rigid_rotation\"\nchecks = [\"euler_residual\", \"kelvin\"]\n");
    let out_dir = dir.path().join("out");
    let out = cartan(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("PASS kelvin"));
    let report: String = fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"pass\": true"));
    let csv = fs::read_to_string(out_dir.join("kelvin.csv")).unwrap();
    assert!(csv.starts_with("# cartan-core "));
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // no physical residual can meet a tolerance this small
    let cfg = write_config(dir.path(), "scenario = \"taylor_green\"\nchecks = [\"euler_residual\"]\n");
    let out = cartan(&["run", &cfg, "--tol", "1e-300", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL euler_residual"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"abc\"\nchecks = [\"kelvin\"]\nbogus = 1\n");
    let out = cartan(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"));

    let cfg = write_config(dir.path(), "scenario = \"nowhere\"\nchecks = [\"kelvin\"]\n");
    assert_eq!(cartan(&["run", &cfg]).status.code(), Some(2));

    let out = cartan(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"oscillator\"\nchecks = [\"euler_residual\"]\n");
    let target = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_cartan"))
        .args(["--quiet", "run", &cfg])
        .env("CARTAN_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(target.join("report.json").exists());
    assert_eq!(stdout(&out).trim(), "all checks passed");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"abc\"\nchecks = [\"kelvin\", \"helmholtz_lines\"]\nseed = 3\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert!(cartan(&["run", &cfg, "--out", d.to_str().unwrap()]).status.success());
    }
    for name in ["kelvin.csv", "vortex_lines.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}
