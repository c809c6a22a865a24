use std::path::{Path, PathBuf};
use std::process::Command as Process;

use dinsys_cli::report::{CONVERGENCE_HEADER, TRAJECTORY_HEADER};
use dinsys_cli::{execute, parse_config, Command, ExitCode, Options};
use tempfile::TempDir;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn opts(out: PathBuf) -> Options {
    Options {
        out: Some(out),
        jobs: Some(2),
        strict: false,
    }
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let k = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(k).unwrap().to_string())
        .collect()
}

const OSCILLATOR: &str = "[problem]\nid = \"oscillator\"\n[solver]\ntau = 1e-2\nT = 1\n";

#[test]
fn minimal_oscillator_config_parses_from_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = parse_config(&write_config(
        tmp.path(),
        "c.toml",
        "[problem]\nid = \"oscillator\"\n[solver]\ntau = 1e-3\nT = 1\n",
    ))
    .unwrap();
    assert_eq!(cfg.solver.tau, 1e-3);
    assert_eq!(cfg.output.audit_samples, 1000);
}

#[test]
fn oscillator_run_writes_every_report_and_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", OSCILLATOR);
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Run, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );

    let traj = read(out.join("trajectory.csv"));
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], TRAJECTORY_HEADER);
    assert_eq!(lines.len() - 1, 101, "N + 1 rows for N = T/tau = 100");
    assert_eq!(column(&traj, "n").last().unwrap(), "100");
    assert_eq!(
        column(&traj, "t").last().unwrap().parse::<f64>().unwrap(),
        1.0
    );
    assert!(!traj.contains('\r'));

    let edi = read(out.join("edi.csv"));
    assert!(edi.starts_with("s,t,lhs,rhs,slack\n"));
    assert!(column(&edi, "slack")
        .iter()
        .all(|s| s.parse::<f64>().unwrap() >= -1e-8));
    assert!(read(out.join("apriori.csv")).starts_with("quantity,value\n"));
    let audit = read(out.join("audit.txt"));
    assert!(
        audit.contains("energy-dissipation inequality: PASS"),
        "{audit}"
    );
    assert!(audit.contains("verdict: PASS"));
}

#[test]
fn step_above_tau_star_is_flagged_in_the_audit_file() {
    let tmp = TempDir::new().unwrap();
    // A long interval makes the double-well non-convexity large, so tau* drops below 0.5.
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[problem]\nid = \"p1\"\nnodes = 16\nlength = 10\n[solver]\ntau = 0.5\nT = 1\n[output]\naudit = false\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Run, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let audit = read(out.join("audit.txt"));
    let line = audit
        .lines()
        .find(|l| l.starts_with("warning:"))
        .expect("guard warning");
    assert!(line.contains("tau*"), "{line}");

    let strict = Options {
        strict: true,
        ..opts(out.clone())
    };
    assert_eq!(execute(Command::Run, &cfg, &strict), ExitCode::CheckFail);
}

#[test]
fn corrupted_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for body in [
        "[problem\nid = 3",
        "[problem]\nid = \"oscillator\"\nunknown = 1\n",
        "[solver]\ntau = 1e-2\n",
    ] {
        let cfg = write_config(tmp.path(), "bad.toml", body);
        assert_eq!(
            execute(Command::Run, &cfg, &opts(out.clone())),
            ExitCode::Usage,
            "{body}"
        );
    }
    assert_eq!(
        execute(Command::Run, &tmp.path().join("missing.toml"), &opts(out)),
        ExitCode::Usage
    );
}

#[test]
fn binary_maps_outcomes_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let exe = env!("CARGO_BIN_EXE_dinsys");
    let good = write_config(tmp.path(), "c.toml", OSCILLATOR);
    let bad = write_config(tmp.path(), "bad.toml", "not toml at all [");
    let out = tmp.path().join("out");
    let status =
        |args: &[&std::ffi::OsStr]| Process::new(exe).args(args).output().unwrap().status.code();
    assert_eq!(
        status(&[
            "run".as_ref(),
            good.as_os_str(),
            "--out".as_ref(),
            out.as_os_str()
        ]),
        Some(0)
    );
    assert_eq!(status(&["run".as_ref(), bad.as_os_str()]), Some(64));
    assert_eq!(status(&["frobnicate".as_ref()]), Some(64));
    assert_eq!(
        status(&["sweep".as_ref(), good.as_os_str()]),
        Some(64),
        "no [sweep] section"
    );
}

#[test]
fn oscillator_sweep_converges_at_first_order() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("{OSCILLATOR}[sweep]\ntaus = [1e-2, 5e-3, 2.5e-3]\n"),
    );
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Sweep, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let csv = read(out.join("convergence.csv"));
    assert_eq!(csv.lines().next().unwrap(), CONVERGENCE_HEADER);
    let orders = column(&csv, "order_estimate");
    assert_eq!(orders.len(), 3);
    assert!(orders[0].is_empty());
    let finest: f64 = orders[2].parse().unwrap();
    assert!((0.8..=1.2).contains(&finest), "order {finest}");
}

#[test]
fn single_step_sweep_leaves_the_order_column_empty() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("{OSCILLATOR}[sweep]\ntaus = [1e-2]\n"),
    );
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Sweep, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let csv = read(out.join("convergence.csv"));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(','), "{}", rows[0]);
}

#[test]
fn coarse_reference_step_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        &format!("{OSCILLATOR}[sweep]\ntaus = [1e-2, 5e-3]\nreference_tau = 1.25e-3\n"),
    );
    let err = parse_config(&cfg).unwrap_err().to_string();
    assert!(err.contains("sweep.reference_tau"), "{err}");
    assert_eq!(
        execute(Command::Sweep, &cfg, &opts(tmp.path().join("out"))),
        ExitCode::Usage
    );
}

#[test]
fn refined_reference_sweep_on_a_grid_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[problem]\nid = \"p3\"\nnodes = 12\n[solver]\ntau = 2e-2\nT = 0.2\n[sweep]\ntaus = [2e-2, 1e-2]\nreference_tau = 1e-3\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Sweep, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let csv = read(out.join("convergence.csv"));
    let errs: Vec<f64> = column(&csv, "err_CH")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(errs[1] < errs[0], "{errs:?}");

    let no_ref = write_config(
        tmp.path(),
        "n.toml",
        "[problem]\nid = \"p3\"\n[sweep]\ntaus = [2e-2]\n",
    );
    assert_eq!(
        execute(Command::Sweep, &no_ref, &opts(out)),
        ExitCode::Usage
    );
}

#[test]
fn audit_command_writes_the_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[problem]\nid = \"p1\"\nnodes = 12\n[output]\naudit_samples = 200\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Audit, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let text = read(out.join("audit.txt"));
    assert!(
        text.contains("assumption audit: P1 (200 samples)"),
        "{text}"
    );
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn expression_initial_data_and_forcing_drive_the_run() {
    let tmp = TempDir::new().unwrap();
    let body = "[problem]\nid = \"p3\"\nnodes = 12\nu0 = \"0.1 * sin(pi * x)\"\nv0 = \"0\"\nforcing = \"cos(t)\"\n[solver]\ntau = 0.05\nT = 0.5\n";
    let cfg = write_config(tmp.path(), "c.toml", body);
    let out = tmp.path().join("out");
    assert_eq!(
        execute(Command::Run, &cfg, &opts(out.clone())),
        ExitCode::Pass
    );
    let apriori = read(out.join("apriori.csv"));
    let forcing: f64 = apriori
        .lines()
        .find(|l| l.starts_with("forcing_discrete,"))
        .and_then(|l| l.split(',').nth(1))
        .unwrap()
        .parse()
        .unwrap();
    assert!(forcing > 0.0);
    assert!(read(out.join("audit.txt")).contains("problem.forcing = cos(t)"));
}

#[test]
fn identical_configs_give_bitwise_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let body = "[problem]\nid = \"p1\"\nnodes = 10\n[solver]\ntau = 0.05\nT = 0.5\n[output]\nseed = 7\naudit_samples = 100\nshift_gaps = [0.1]\n";
    let cfg = write_config(tmp.path(), "c.toml", body);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        execute(Command::Run, &cfg, &opts(a.clone())),
        ExitCode::Pass
    );
    assert_eq!(
        execute(Command::Run, &cfg, &opts(b.clone())),
        ExitCode::Pass
    );
    for name in ["trajectory.csv", "edi.csv", "apriori.csv", "audit.txt"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert!(read(a.join("apriori.csv")).contains("shift_gap_L2V[h=0.1],"));
}
