use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obstacle_mcf_cli::{parse_config, CliError, ExitStatus, OUTPUT_DIR_ENV};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_obstacle-mcf"));
    c.env_remove(OUTPUT_DIR_ENV);
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{body}\noutput.dir = {}\n", dir.join("out").display())).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stationary_run_with_all_checks_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.cfg",
        "scenario = stationary\ngrid.n = 16\nsolver.output_every = 5\nchecks.bv = true\nchecks.bv.fields = 4",
    );
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["effective.cfg", "trace_e0.csv", "residuals.csv", "summary.txt", "snap_e0_0000.bin"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.ends_with("overall: PASS\n"), "{summary}");
    let residuals = fs::read_to_string(out.join("residuals.csv")).unwrap();
    let rows: Vec<&str> = residuals.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 + 3 + 4);
    for row in rows {
        let value: f64 = row.split(',').nth(6).unwrap().parse().unwrap();
        assert!(value.abs() < 1e-12, "{row}");
    }
}

#[test]
fn effective_config_reloads_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.cfg",
        "scenario = sphere\ngrid.n = 16\nsolver.t_end = 0.001\nsolver.eps = 0.1, 0.05",
    );
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let original = parse_config(&fs::read_to_string(&cfg).unwrap(), "orig").unwrap();
    let echoed = fs::read_to_string(tmp.path().join("out/effective.cfg")).unwrap();
    assert_eq!(parse_config(&echoed, "echo").unwrap(), original);
    assert!(tmp.path().join("out/trace_e1.csv").exists());
}

#[test]
fn zero_tolerance_fails_and_names_the_check() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.cfg",
        "scenario = sphere\ngrid.n = 16\nsolver.t_end = 0.002\nchecks.ledger.tol = 0",
    );
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), ExitStatus::CheckFailed.code());
    assert!(stderr(&o).contains("check failed: ledger"), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "scenario = sphere\nsolver.epz = 0.1");
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.cfg:2:1: unknown key `solver.epz`"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "eps.cfg", "scenario = sphere\nsolver.eps = -0.1");
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("solver.eps"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "name.cfg", "scenario = trefoil");
    let o = run(&["audit", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stationary, sphere, clamping, sandwich"), "{}", stderr(&o));

    let o = run(&["run", tmp.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn numerical_aborts_map_to_three() {
    assert_eq!(CliError::Numerical("NaN".into()).status(), ExitStatus::NumericalAbort);
    assert_eq!(ExitStatus::NumericalAbort.code(), 3);
}

#[test]
fn audit_reports_well_prepared_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "a.cfg", "scenario = sandwich\ngrid.n = 32");
    let o = run(&["audit", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn outputs_are_bit_identical_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    let body = "scenario = sandwich\ngrid.n = 32\nsolver.t_end = 0.004\nsolver.output_every = 10\nchecks.bv = true\nchecks.bv.fields = 3\nrun.seed = 7";
    let mut outputs = Vec::new();
    for (k, threads) in [1, 1, 4].iter().enumerate() {
        let dir = tmp.path().join(format!("r{k}"));
        fs::create_dir(&dir).unwrap();
        let cfg = write_config(&dir, "d.cfg", &format!("{body}\nrun.threads = {threads}"));
        let o = run(&["run", cfg.to_str().unwrap()]);
        assert!(code(&o) <= 1, "{}", stderr(&o));
        let read = |f: &str| fs::read(dir.join("out").join(f)).unwrap();
        outputs.push((read("trace_e0.csv"), read("residuals.csv"), read("snap_e0_0001.bin")));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn output_directory_can_be_overridden() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.cfg", "scenario = stationary\ngrid.n = 16");
    let elsewhere = tmp.path().join("elsewhere");
    let o = bin().env(OUTPUT_DIR_ENV, &elsewhere).args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(elsewhere.join("summary.txt").exists());
    assert!(!tmp.path().join("out").exists());
    let echoed = fs::read_to_string(elsewhere.join("effective.cfg")).unwrap();
    assert!(echoed.contains(&format!("output.dir = {}", elsewhere.display())));
}

#[test]
fn export_writes_csv_for_planar_snapshots() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "s.cfg", "scenario = sphere\ngrid.n = 16\nsolver.t_end = 0.001");
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 0);
    let snap = tmp.path().join("out/snap_e0_0000.bin");
    let o = run(&["export", snap.to_str().unwrap(), "--csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(snap.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,u"));
    assert_eq!(csv.lines().count(), 1 + 16 * 16);

    let cfg = write_config(tmp.path(), "s3.cfg", "scenario = stationary\ngrid.dim = 3\ngrid.n = 8");
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 0);
    let o = run(&["export", tmp.path().join("out/snap_e0_0000.bin").to_str().unwrap(), "--csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dim 1 and 2"), "{}", stderr(&o));
}

#[test]
fn study_tabulates_every_grid_and_eps() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "st.cfg",
        "scenario = sphere\nsolver.t_end = 0.002\nsolver.eps = 0.1, 0.05\nstudy.n = 16, 32\nchecks.sphere = true",
    );
    let o = run(&["study", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/study.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("16,1.0000000000000001e-1,"));
    assert!(lines[4].starts_with("32,5.0000000000000003e-2,"));
    let deviation: f64 = lines[4].rsplit(',').next().unwrap().parse().unwrap();
    assert!(deviation < 0.05, "{deviation}");
}
