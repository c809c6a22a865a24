//! TOML run configuration with sections `[problem]`, `[solver]`, `[output]`, `[sweep]`.

use std::path::{Path, PathBuf};

use dinsys_core::problems::{OscillatorSpec, Reaction, StressLaw, StressRoute};
use dinsys_core::{GridSpec, ProblemConfig, ProblemId, SolverConfig};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::expr::Expr;
use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
    sweep: Option<RawSweep>,
}

/// Initial data: an expression in `x`, `y` for grid problems, a list for the oscillator.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInitial {
    Expr(String),
    Values(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    id: String,
    nodes: Option<usize>,
    length: Option<f64>,
    nodes_y: Option<usize>,
    length_y: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
    r: Option<f64>,
    s_u: Option<f64>,
    s_v: Option<f64>,
    mu: Option<f64>,
    nu: Option<f64>,
    rho: Option<f64>,
    double_well: Option<bool>,
    reaction: Option<String>,
    stress: Option<String>,
    route: Option<String>,
    forcing: Option<String>,
    u0: Option<RawInitial>,
    v0: Option<RawInitial>,
    amplitude: Option<f64>,
    stiffness: Option<Vec<Vec<f64>>>,
    damping: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(rename = "T", alias = "horizon", default = "default_horizon")]
    horizon: f64,
    inner_tol: Option<f64>,
    inner_max_iters: Option<usize>,
    tau_star_guard: Option<bool>,
}

fn default_tau() -> f64 {
    1e-2
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for RawSolver {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            horizon: default_horizon(),
            inner_tol: None,
            inner_max_iters: None,
            tau_star_guard: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    edi: Option<bool>,
    apriori: Option<bool>,
    audit: Option<bool>,
    audit_samples: Option<usize>,
    seed: Option<u64>,
    shift_gaps: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    taus: Vec<f64>,
    reference_tau: Option<f64>,
}

/// Which reports a run writes, and where.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub edi: bool,
    pub apriori: bool,
    pub audit: bool,
    pub audit_samples: usize,
    pub seed: u64,
    /// Shifts `h` at which the `L²(0, T-h; V)` shift gap is reported.
    pub shift_gaps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    /// Strictly decreasing.
    pub taus: Vec<f64>,
    /// Step of the reference run; `None` uses the closed form when available.
    pub reference_tau: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
    /// Source strings of the expression fields, for the report header.
    pub expressions: Vec<(String, String)>,
}

/// Reads, parses and validates the file at `path`.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(path, format!("cannot read: {e}")))?;
    parse_config_str(&text).map_err(|m| CliError::config(path, m))
}

/// As [`parse_config`] on an in-memory document.
pub fn parse_config_str(text: &str) -> Result<RunConfig, String> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())?;
    convert(raw)
}

fn parse_enum<T>(
    field: &str,
    value: &Option<String>,
    options: &[(&str, T)],
) -> Result<Option<T>, String>
where
    T: Copy,
{
    let Some(v) = value else { return Ok(None) };
    options
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(v))
        .map(|(_, t)| Some(*t))
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("{field} must be one of {names:?}, got '{v}'")
        })
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(format!("{field} must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn expression(field: &str, src: &str, exprs: &mut Vec<(String, String)>) -> Result<Expr, String> {
    let e = Expr::parse(src).map_err(|m| format!("{field}: {m}"))?;
    exprs.push((field.to_string(), src.to_string()));
    Ok(e)
}

fn positive(field: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{field} must be positive"))
    }
}

fn convert(raw: RawConfig) -> Result<RunConfig, String> {
    let p = raw.problem;
    let id: ProblemId = p.id.parse().map_err(|_| {
        format!(
            "problem.id must be one of p1, p2, p3, p4, oscillator, got '{}'",
            p.id
        )
    })?;
    let mut cfg = ProblemConfig::new(id);
    let mut expressions = Vec::new();

    let length = p.length.unwrap_or(1.0);
    let nodes = p.nodes.unwrap_or(32);
    positive("problem.length", length)?;
    cfg.grid = match (p.nodes_y, p.length_y) {
        (None, None) => GridSpec::line(length, nodes),
        (ny, ly) => {
            let ly = ly.unwrap_or(length);
            positive("problem.length_y", ly)?;
            GridSpec::rectangle(length, ly, nodes, ny.unwrap_or(nodes))
        }
    }
    .map_err(|e| format!("problem.nodes: {e}"))?;

    macro_rules! set {
        ($($name:ident),*) => {$(if let Some(v) = p.$name { cfg.$name = v; })*};
    }
    set!(p, q, r, s_u, s_v, mu, nu, rho, double_well, amplitude);
    if let Some(v) = parse_enum(
        "problem.reaction",
        &p.reaction,
        &[
            ("linear", Reaction::Linear),
            ("truncated_cubic", Reaction::TruncatedCubic),
        ],
    )? {
        cfg.reaction = v;
    }
    if let Some(v) = parse_enum(
        "problem.stress",
        &p.stress,
        &[
            ("linear", StressLaw::Linear),
            ("double_well", StressLaw::DoubleWell),
        ],
    )? {
        cfg.stress = v;
    }
    if let Some(v) = parse_enum(
        "problem.route",
        &p.route,
        &[
            ("energy", StressRoute::Energy),
            ("perturbation", StressRoute::Perturbation),
        ],
    )? {
        cfg.route = v;
    }
    if let Some(src) = &p.forcing {
        cfg.forcing =
            Some(expression("problem.forcing", src, &mut expressions)?.space_time_field());
    }

    if id == ProblemId::Oscillator {
        let mut osc = OscillatorSpec::unit();
        if let Some(k) = &p.stiffness {
            osc.stiffness = matrix("problem.stiffness", k)?;
        }
        if let Some(c) = &p.damping {
            osc.damping = matrix("problem.damping", c)?;
        }
        let n = osc.stiffness.nrows();
        if osc.damping.nrows() != n {
            return Err("problem.damping must have the size of problem.stiffness".into());
        }
        let values = |field: &str, v: &Option<RawInitial>, default: Vec<f64>| match v {
            None => Ok(default),
            Some(RawInitial::Values(x)) if x.len() == n => Ok(x.clone()),
            Some(RawInitial::Values(_)) => Err(format!("{field} must list {n} values")),
            Some(RawInitial::Expr(_)) => Err(format!(
                "{field} must be a list of numbers for the oscillator"
            )),
        };
        osc.u0 = values("problem.u0", &p.u0, vec![1.0; n])?;
        osc.v0 = values("problem.v0", &p.v0, vec![0.0; n])?;
        cfg.oscillator = osc;
        if cfg.forcing.is_some() {
            return Err("problem.forcing is not supported for the oscillator".into());
        }
    } else {
        if p.stiffness.is_some() || p.damping.is_some() {
            return Err(
                "problem.stiffness and problem.damping apply to the oscillator only".into(),
            );
        }
        let field = |name: &str, v: &Option<RawInitial>, exprs: &mut Vec<(String, String)>| match v
        {
            None => Ok(None),
            Some(RawInitial::Expr(s)) => expression(name, s, exprs).map(|e| Some(e.space_field())),
            Some(RawInitial::Values(_)) => Err(format!("{name} must be an expression in x and y")),
        };
        cfg.u0 = field("problem.u0", &p.u0, &mut expressions)?;
        cfg.v0 = field("problem.v0", &p.v0, &mut expressions)?;
    }
    cfg.validate().map_err(|e| strip_invalid(&e.to_string()))?;

    let s = raw.solver;
    if !(s.tau > 0.0 && s.tau.is_finite()) {
        return Err("solver.tau must be positive".into());
    }
    positive("solver.T", s.horizon)?;
    if s.tau > s.horizon {
        return Err("solver.tau must not exceed solver.T".into());
    }
    let mut solver = SolverConfig::new(s.tau, s.horizon);
    if let Some(t) = s.inner_tol {
        positive("solver.inner_tol", t)?;
        solver.inner_tol = t;
    }
    if let Some(n) = s.inner_max_iters {
        if n == 0 {
            return Err("solver.inner_max_iters must be at least 1".into());
        }
        solver.inner_max_iters = n;
    }
    if let Some(g) = s.tau_star_guard {
        solver.tau_star_guard = g;
    }

    let o = raw.output;
    let shift_gaps = o.shift_gaps.unwrap_or_default();
    for &h in &shift_gaps {
        if !(h > 0.0 && h < s.horizon) {
            return Err(format!(
                "output.shift_gaps entries must lie in (0, T), got {h}"
            ));
        }
    }
    let output = OutputConfig {
        dir: o.dir.unwrap_or_else(|| PathBuf::from("out")),
        edi: o.edi.unwrap_or(true),
        apriori: o.apriori.unwrap_or(true),
        audit: o.audit.unwrap_or(true),
        audit_samples: o.audit_samples.unwrap_or(1000),
        seed: o.seed.unwrap_or(0),
        shift_gaps,
    };
    if output.audit_samples == 0 {
        return Err("output.audit_samples must be at least 1".into());
    }

    let sweep = match raw.sweep {
        None => None,
        Some(sw) => {
            if sw.taus.is_empty() {
                return Err("sweep.taus must not be empty".into());
            }
            if sw
                .taus
                .iter()
                .any(|t| !(*t > 0.0 && t.is_finite() && *t <= s.horizon))
            {
                return Err("sweep.taus entries must be positive and not exceed solver.T".into());
            }
            if sw.taus.windows(2).any(|w| !(w[1] < w[0])) {
                return Err("sweep.taus must be strictly decreasing".into());
            }
            if let Some(r) = sw.reference_tau {
                let min = sw.taus[sw.taus.len() - 1];
                if !(r > 0.0 && r < min / 4.0) {
                    return Err(format!(
                        "sweep.reference_tau must be positive and below min(sweep.taus)/4 = {}",
                        min / 4.0
                    ));
                }
            }
            Some(SweepConfig {
                taus: sw.taus,
                reference_tau: sw.reference_tau,
            })
        }
    };

    Ok(RunConfig {
        problem: cfg,
        solver,
        output,
        sweep,
        expressions,
    })
}

fn strip_invalid(msg: &str) -> String {
    msg.strip_prefix("invalid argument: ")
        .unwrap_or(msg)
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_oscillator_config_fills_defaults() {
        let cfg = parse_config_str("[problem]\nid = \"oscillator\"\n[solver]\ntau = 1e-3\nT = 1\n")
            .unwrap();
        assert_eq!(cfg.problem.id, ProblemId::Oscillator);
        assert_eq!(cfg.solver.tau, 1e-3);
        assert_eq!(cfg.solver.horizon, 1.0);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert!(cfg.output.edi && cfg.output.apriori && cfg.output.audit);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn zero_tau_names_the_field() {
        let err = parse_config_str("[problem]\nid = \"p1\"\n[solver]\ntau = 0.0\n").unwrap_err();
        assert_eq!(err, "solver.tau must be positive");
    }

    #[test]
    fn sweep_list_must_decrease() {
        let err =
            parse_config_str("[problem]\nid = \"oscillator\"\n[sweep]\ntaus = [1e-2, 2e-2]\n")
                .unwrap_err();
        assert_eq!(err, "sweep.taus must be strictly decreasing");
    }

    #[test]
    fn reference_tau_must_be_fine_enough() {
        let err = parse_config_str(
            "[problem]\nid = \"oscillator\"\n[sweep]\ntaus = [1e-2, 5e-3]\nreference_tau = 2e-3\n",
        )
        .unwrap_err();
        assert!(err.starts_with("sweep.reference_tau"), "{err}");
        assert!(parse_config_str(
            "[problem]\nid = \"oscillator\"\n[sweep]\ntaus = [1e-2, 5e-3]\nreference_tau = 1e-3\n"
        )
        .is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = parse_config_str("[problem]\nid = \"p1\"\nbogus = 3\n").unwrap_err();
        assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
        assert!(parse_config_str("[problem]\nid = \"p1\"\n[extra]\n").is_err());
    }

    #[test]
    fn problem_fields_and_expressions() {
        let text = r#"
[problem]
id = "p4"
nodes = 17
route = "perturbation"
stress = "double_well"
mu = 0.2
u0 = "x * (1 - x)"
forcing = "sin(pi * x) * exp(-t)"
"#;
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.problem.grid.nodes(0), 17);
        assert_eq!(cfg.problem.route, StressRoute::Perturbation);
        assert_eq!(cfg.problem.stress, StressLaw::DoubleWell);
        assert_eq!(cfg.problem.mu, 0.2);
        let u0 = cfg.problem.u0.as_ref().unwrap();
        assert!((u0(0.5, 0.0) - 0.25).abs() < 1e-15);
        let f = cfg.problem.forcing.as_ref().unwrap();
        assert!((f(0.5, 0.0, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(cfg.expressions.len(), 2);
    }

    #[test]
    fn bad_values_name_their_field() {
        let cases = [
            ("[problem]\nid = \"p9\"\n", "problem.id"),
            ("[problem]\nid = \"p1\"\np = 1.5\n", "problem.p"),
            (
                "[problem]\nid = \"p3\"\nreaction = \"quartic\"\n",
                "problem.reaction",
            ),
            ("[problem]\nid = \"p1\"\nu0 = \"sin(\"\n", "problem.u0"),
            (
                "[problem]\nid = \"oscillator\"\nu0 = [1.0, 2.0]\n",
                "problem.u0",
            ),
            (
                "[problem]\nid = \"oscillator\"\nstiffness = [[1.0, 0.0]]\n",
                "problem.stiffness",
            ),
            (
                "[problem]\nid = \"p1\"\n[output]\nshift_gaps = [2.0]\n",
                "output.shift_gaps",
            ),
        ];
        for (text, field) in cases {
            let err = parse_config_str(text).unwrap_err();
            assert!(err.contains(field), "{text:?}: {err}");
        }
    }
}
