//! The `run`, `sweep` and `audit` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dinsys_core::diagnostics::{
    apriori_report, consecutive_pairs, convergence_table, edi_report, forcing_stability,
    initial_pairs, shift_gap, GapNorm, Reference,
};
use dinsys_core::problems::{
    assumption_audit, build, initial_data, AuditConfig, DiagonalOscillatorExact,
};
use dinsys_core::stepper::{estimate_tau_star, run};
use dinsys_core::{Error, ProblemId, SolverConfig, StateVec, SystemSpec, Trajectory};
use rayon::prelude::*;

use crate::config::{parse_config, RunConfig};
use crate::report::{self, num};
use crate::{CliError, ExitCode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    Audit,
}

/// Command-line flags shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct Options {
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Worker threads for `sweep`; `None` uses the available parallelism.
    pub jobs: Option<usize>,
    /// Treat warnings and admissibility notes as check failures.
    pub strict: bool,
}

/// Parses `config_path`, runs `command` and reports errors on stderr.
pub fn execute(command: Command, config_path: &Path, opts: &Options) -> ExitCode {
    let outcome = parse_config(config_path).and_then(|cfg| match command {
        Command::Run => cmd_run(&cfg, opts),
        Command::Sweep => cmd_sweep(&cfg, opts),
        Command::Audit => cmd_audit(&cfg, opts),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dinsys: {e}");
            e.exit_code()
        }
    }
}

fn output_dir(cfg: &RunConfig, opts: &Options) -> Result<PathBuf, CliError> {
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

struct Setup {
    system: Arc<SystemSpec>,
    u0: StateVec,
    v0: StateVec,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let system = Arc::new(build(&cfg.problem)?);
    let (u0, v0) = initial_data(&cfg.problem)?;
    Ok(Setup { system, u0, v0 })
}

fn header(cfg: &RunConfig, system: &SystemSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "system: {}", system.name);
    let _ = writeln!(s, "lambda: {}", num(system.lambda));
    let _ = writeln!(s, "estimated tau*: {}", num(estimate_tau_star(system)));
    let _ = writeln!(
        s,
        "tau: {}  T: {}",
        num(cfg.solver.tau),
        num(cfg.solver.horizon)
    );
    for (field, src) in &cfg.expressions {
        let _ = writeln!(s, "{field} = {src}");
    }
    s
}

fn run_audit(cfg: &RunConfig, system: &SystemSpec, text: &mut String) -> Result<bool, CliError> {
    let audit = assumption_audit(
        system,
        &AuditConfig {
            samples: cfg.output.audit_samples,
            seed: cfg.output.seed,
            horizon: cfg.solver.horizon,
            ..AuditConfig::default()
        },
    )?;
    text.push_str(&audit.to_string());
    Ok(audit.passed())
}

/// Lines to prepend to `audit.txt`, and whether `--strict` turns them into a failure.
fn notes(cfg: &RunConfig, warnings: &[String], text: &mut String) -> usize {
    let notes = cfg.problem.admissibility_warnings();
    for line in warnings.iter().chain(&notes) {
        let _ = writeln!(text, "{line}");
    }
    warnings.len() + notes.len()
}

fn strict_verdict(opts: &Options, flagged: usize, text: &mut String) -> ExitCode {
    if opts.strict && flagged > 0 {
        let _ = writeln!(text, "strict: {flagged} warning(s) count as failures");
        ExitCode::CheckFail
    } else {
        ExitCode::Pass
    }
}

/// Runs one trajectory and writes `trajectory.csv`, `edi.csv`, `apriori.csv`
/// and `audit.txt` according to the toggles of `[output]`.
pub fn cmd_run(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let dir = output_dir(cfg, opts)?;
    let Setup { system, u0, v0 } = setup(cfg)?;
    let mut text = header(cfg, &system);

    let traj = match run(&system, &u0, &v0, &cfg.solver) {
        Ok(t) => t,
        Err(Error::StepFailure {
            step,
            source,
            partial,
        }) => {
            notes(cfg, &partial.warnings, &mut text);
            let _ = writeln!(text, "run failed at step {step}: {source}");
            report::write(&dir, "trajectory.csv", &report::trajectory_csv(&partial)?)?;
            report::write(&dir, "audit.txt", &text)?;
            eprintln!(
                "dinsys: step {step} failed: {source}; partial outputs in {}",
                dir.display()
            );
            return Ok(ExitCode::RunFail);
        }
        Err(e) => return Err(e.into()),
    };
    let flagged = notes(cfg, &traj.warnings, &mut text);
    report::write(&dir, "trajectory.csv", &report::trajectory_csv(&traj)?)?;

    let mut code = ExitCode::Pass;
    if cfg.output.edi {
        let mut pairs = consecutive_pairs(&traj);
        pairs.extend(initial_pairs(&traj));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs.dedup();
        let edi = edi_report(&traj, &pairs)?;
        report::write(&dir, "edi.csv", &report::edi_csv(&edi))?;
        text.push_str(&report::edi_summary(&edi));
        if !edi.passed() {
            code = ExitCode::CheckFail;
        }
    }
    if cfg.output.apriori {
        let apriori = apriori_report(&traj)?;
        let gaps = cfg
            .output
            .shift_gaps
            .iter()
            .map(|&h| Ok((h, shift_gap(&traj, h, GapNorm::L2V)?)))
            .collect::<Result<Vec<_>, Error>>()?;
        report::write(
            &dir,
            "apriori.csv",
            &report::apriori_csv(&apriori, &forcing_stability(&traj), &gaps),
        )?;
    }
    if cfg.output.audit && !run_audit(cfg, &system, &mut text)? {
        code = ExitCode::CheckFail;
    }
    code = code.worst(strict_verdict(opts, flagged, &mut text));
    let _ = writeln!(
        text,
        "verdict: {}",
        if code == ExitCode::Pass {
            "PASS"
        } else {
            "FAIL"
        }
    );
    report::write(&dir, "audit.txt", &text)?;
    println!(
        "{} steps of {} written to {}",
        traj.steps(),
        system.name,
        dir.display()
    );
    Ok(code)
}

/// Samples the structural assumptions of the configured system; writes `audit.txt`.
pub fn cmd_audit(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let dir = output_dir(cfg, opts)?;
    let system = build(&cfg.problem)?;
    let mut text = header(cfg, &system);
    let flagged = notes(cfg, &[], &mut text);
    let mut code = if run_audit(cfg, &system, &mut text)? {
        ExitCode::Pass
    } else {
        ExitCode::CheckFail
    };
    code = code.worst(strict_verdict(opts, flagged, &mut text));
    report::write(&dir, "audit.txt", &text)?;
    print!("{}", text);
    Ok(code)
}

/// Runs the `[sweep]` step list in a worker pool and writes `convergence.csv`.
///
/// Without `reference_tau` the oscillator is compared with its closed form;
/// other problems require a reference step.
pub fn cmd_sweep(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("the sweep command needs a [sweep] section".into()))?;
    let exact = match (sweep.reference_tau, cfg.problem.id) {
        (Some(_), _) => None,
        (None, ProblemId::Oscillator) => Some(DiagonalOscillatorExact::new(&cfg.problem.oscillator).ok_or_else(|| {
            CliError::Usage("sweep.reference_tau is required: the oscillator has no closed form for these matrices".into())
        })?),
        (None, _) => return Err(CliError::Usage("sweep.reference_tau is required for this problem".into())),
    };
    let dir = output_dir(cfg, opts)?;
    let Setup { system, u0, v0 } = setup(cfg)?;

    let mut taus = sweep.taus.clone();
    taus.extend(sweep.reference_tau);
    let solve = |tau: f64| {
        let config = SolverConfig {
            tau,
            ..cfg.solver.clone()
        };
        run(&system, &u0, &v0, &config)
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    let mut runs: Vec<Result<Trajectory, Error>> =
        pool.install(|| taus.par_iter().map(|&t| solve(t)).collect());

    let reference = match sweep.reference_tau {
        Some(_) => match runs.pop().expect("reference run") {
            Ok(r) => Some(r),
            Err(e) => {
                eprintln!("dinsys: reference run failed: {e}");
                report::write(
                    &dir,
                    "convergence.csv",
                    &report::convergence_csv(&Default::default()),
                )?;
                return Ok(ExitCode::RunFail);
            }
        },
        None => None,
    };
    let refr = match (&reference, &exact) {
        (Some(r), _) => Reference::Trajectory(r),
        (None, Some(x)) => Reference::Exact(x),
        (None, None) => unreachable!("a reference was selected above"),
    };

    let mut done = Vec::new();
    let mut failure = None;
    for (tau, r) in sweep.taus.iter().zip(runs) {
        match r {
            Ok(t) => done.push(t),
            Err(e) => {
                failure = Some((*tau, e));
                break;
            }
        }
    }
    let table = convergence_table(&done, refr)?;
    report::write(&dir, "convergence.csv", &report::convergence_csv(&table))?;

    let warnings: Vec<&String> = done
        .iter()
        .chain(reference.as_ref())
        .flat_map(|t| &t.warnings)
        .collect();
    for w in &warnings {
        eprintln!("dinsys: {w}");
    }
    if let Some((tau, e)) = failure {
        eprintln!("dinsys: run at tau = {} failed: {e}", num(tau));
        return Ok(ExitCode::RunFail);
    }
    println!(
        "{} step sizes written to {}",
        table.rows.len(),
        dir.join("convergence.csv").display()
    );
    let flagged = warnings.len() + cfg.problem.admissibility_warnings().len();
    Ok(if opts.strict && flagged > 0 {
        ExitCode::CheckFail
    } else {
        ExitCode::Pass
    })
}
