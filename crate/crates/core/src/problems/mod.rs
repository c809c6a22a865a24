//! Concrete damped inertial systems on finite-difference grids, plus linear
//! oscillators used for calibration.
//!
//! | id | equation (strong form) | dissipation |
//! |----|------------------------|-------------|
//! | P1 | `u'' - Δu' - Δ_p u + (u²-1)u ± |u|^{q-1} ± |u'|^{r-1} = f` | quadratic |
//! | P2 | P1 with `|u'|^{r-2}u'` moved into `Ψ` | quadratic + `L^r` |
//! | P3 | `u'' - μΔu' - Δu + b(u) = f` | quadratic |
//! | P4 | `ρu'' - νΔu' - (σ(u_x))_x + μu_xxxx = f` (1D) | quadratic |
//!
//! Every builder returns an immutable [`SystemSpec`] whose energy gradient is
//! the exact derivative of the discrete energy.

mod audit;
pub mod fd;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::convex::{DissipationSpec, PowerPart};
use crate::diagnostics::ExactSolution;
use crate::error::{Error, Result};
use crate::spaces::{
    GradientOperator, GridSpec, Norm, NormFamily, PowerNorm, SpdOperator, StateVec,
};
use crate::stepper::{Energy, FnForcing, GrowthConstants, Perturbation, SystemSpec};

pub use audit::{assumption_audit, AuditCheck, AuditConfig, AuditEntry, AuditReport, AuditStatus};
pub use fd::{gradient_operator, mass_weights, ClampedLaplacian};

/// Scalar field `(x, y) -> value` for initial data.
pub type SpaceField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Scalar field `(t, x, y) -> value` for the external force.
pub type SpaceTimeField = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Regularization of `|v|^{r-1}` near zero in the explicit perturbation.
pub const VELOCITY_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemId {
    P1,
    P2,
    P3,
    P4,
    Oscillator,
}

impl std::str::FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "p3" => Ok(Self::P3),
            "p4" => Ok(Self::P4),
            "oscillator" => Ok(Self::Oscillator),
            other => Err(Error::invalid(format!("unknown problem '{other}'"))),
        }
    }
}

/// Lower-order term `b(u)` of P3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reaction {
    /// `b(u) = u`.
    Linear,
    /// `b(u) = u³` for `|u| <= 1`, continued linearly (`3|u| - 2`) beyond.
    TruncatedCubic,
}

/// Stored-energy density of P4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StressLaw {
    /// `φ(F) = F²/2`.
    Linear,
    /// `φ(F) = (F² - 1)²/4`.
    DoubleWell,
}

impl StressLaw {
    fn density(self, f: f64) -> f64 {
        match self {
            StressLaw::Linear => 0.5 * f * f,
            StressLaw::DoubleWell => 0.25 * (f * f - 1.0).powi(2),
        }
    }

    fn stress(self, f: f64) -> f64 {
        match self {
            StressLaw::Linear => f,
            StressLaw::DoubleWell => f * f * f - f,
        }
    }

    fn tangent(self, f: f64) -> f64 {
        match self {
            StressLaw::Linear => 1.0,
            StressLaw::DoubleWell => 3.0 * f * f - 1.0,
        }
    }

    /// Semi-monotonicity constant: `(σ(F) - σ(G))(F - G) >= -λ_AB (F - G)²`.
    pub fn semi_monotonicity(self) -> f64 {
        match self {
            StressLaw::Linear => 0.0,
            StressLaw::DoubleWell => 1.0,
        }
    }
}

/// Where the P4 stress enters the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StressRoute {
    /// Explicit: `B = -div σ(∇u)`.
    Perturbation,
    /// Implicit: `∫φ(∇u)` is part of the energy.
    Energy,
}

/// Matrices and initial data of the linear oscillator `u'' + Cu' + Ku = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct OscillatorSpec {
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl OscillatorSpec {
    /// `u'' + u' + u = 0`, `u(0) = 1`, `u'(0) = 0`.
    pub fn unit() -> Self {
        Self {
            stiffness: DMatrix::identity(1, 1),
            damping: DMatrix::identity(1, 1),
            u0: vec![1.0],
            v0: vec![0.0],
        }
    }
}

/// Every knob of the shipped problems. Fields irrelevant to a problem are ignored.
#[derive(Clone)]
pub struct ProblemConfig {
    pub id: ProblemId,
    pub grid: GridSpec,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s_u: f64,
    pub s_v: f64,
    pub mu: f64,
    pub nu: f64,
    pub rho: f64,
    pub double_well: bool,
    pub reaction: Reaction,
    pub stress: StressLaw,
    pub route: StressRoute,
    pub forcing: Option<SpaceTimeField>,
    pub u0: Option<SpaceField>,
    pub v0: Option<SpaceField>,
    /// Amplitude of the default initial displacement `a·sin(πx/L)(·sin(πy/L_y))`,
    /// squared in `x` for P4.
    pub amplitude: f64,
    pub oscillator: OscillatorSpec,
}

impl std::fmt::Debug for ProblemConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemConfig")
            .field("id", &self.id)
            .field("grid", &self.grid)
            .field("p", &self.p)
            .field("q", &self.q)
            .field("r", &self.r)
            .field("s_u", &self.s_u)
            .field("s_v", &self.s_v)
            .field("mu", &self.mu)
            .field("nu", &self.nu)
            .field("rho", &self.rho)
            .field("double_well", &self.double_well)
            .field("reaction", &self.reaction)
            .field("stress", &self.stress)
            .field("route", &self.route)
            .field("amplitude", &self.amplitude)
            .finish_non_exhaustive()
    }
}

impl ProblemConfig {
    /// Defaults: 32-node unit interval, `p = 4`, `q = r = 2`, positive signs.
    pub fn new(id: ProblemId) -> Self {
        Self {
            id,
            grid: GridSpec::line(1.0, 32).expect("valid default grid"),
            p: 4.0,
            q: 2.0,
            r: 2.0,
            s_u: 1.0,
            s_v: 1.0,
            mu: if id == ProblemId::P4 { 0.1 } else { 1.0 },
            nu: 1.0,
            rho: 1.0,
            double_well: true,
            reaction: Reaction::Linear,
            stress: StressLaw::Linear,
            route: StressRoute::Energy,
            forcing: None,
            u0: None,
            v0: None,
            amplitude: 0.5,
            oscillator: OscillatorSpec::unit(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m));
        if !(self.p >= 2.0) {
            return bad("problem.p must be at least 2");
        }
        if !(self.q > 1.0) {
            return bad("problem.q must exceed 1");
        }
        if !(self.r > 1.0) {
            return bad("problem.r must exceed 1");
        }
        if self.s_u.abs() != 1.0 || self.s_v.abs() != 1.0 {
            return bad("problem.s_u and problem.s_v must be +1 or -1");
        }
        for (name, v) in [("mu", self.mu), ("nu", self.nu), ("rho", self.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("problem.{name} must be positive")));
            }
        }
        if !self.amplitude.is_finite() {
            return bad("problem.amplitude must be finite");
        }
        Ok(())
    }

    /// Notes for configurations outside the parameter ranges of the continuous
    /// theory. These never block a run.
    pub fn admissibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.grid.dimension() as f64;
        match self.id {
            ProblemId::P1 | ProblemId::P2 => {
                if d < 3.0 || self.p <= d {
                    out.push(format!(
                        "note: d = {d}, p = {} lies outside d >= 3, p > d; the compactness argument does not cover this grid",
                        self.p
                    ));
                }
                if !(self.q < self.p / 2.0 + 1.0) {
                    out.push(format!(
                        "note: q = {} is not below p/2 + 1 = {}",
                        self.q,
                        self.p / 2.0 + 1.0
                    ));
                }
                if self.id == ProblemId::P1 && self.r > 2.0 {
                    out.push(format!("note: r = {} exceeds 2", self.r));
                }
            }
            ProblemId::P4 if self.grid.dimension() != 1 => {
                out.push("note: P4 is one-dimensional".into())
            }
            _ => {}
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Energies and perturbations

/// `sum_q w_q (1/p)|∇u|^p + sum_i m_i (u_i² - 1)²/4 + c`.
///
/// The constant accounts for the boundary nodes of the trapezoidal rule, so that
/// the discrete well energy of a constant field matches its integral.
pub struct PLaplaceEnergy {
    pub gradient: Arc<GradientOperator>,
    pub p: f64,
    pub well: Option<(DVector<f64>, f64)>,
}

impl PLaplaceEnergy {
    /// Double-well part alone.
    pub fn well_energy(&self, u: &DVector<f64>) -> f64 {
        match &self.well {
            Some((m, c)) => {
                c + m
                    .iter()
                    .zip(u.iter())
                    .map(|(m, u)| 0.25 * m * (u * u - 1.0).powi(2))
                    .sum::<f64>()
            }
            None => 0.0,
        }
    }
}

impl Energy for PLaplaceEnergy {
    fn dim(&self) -> usize {
        self.gradient.dim()
    }
    fn value(&self, _t: f64, u: &DVector<f64>) -> f64 {
        self.gradient.power_energy(u, self.p) + self.well_energy(u)
    }
    fn gradient(&self, _t: f64, u: &DVector<f64>) -> DVector<f64> {
        let mut g = self.gradient.power_gradient(u, self.p);
        if let Some((m, _)) = &self.well {
            g += m.component_mul(&u.map(|x| x * x * x - x));
        }
        g
    }
    fn hessian(&self, _t: f64, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = self.gradient.power_hessian(u, self.p);
        if let Some((m, _)) = &self.well {
            for i in 0..u.len() {
                h[(i, i)] += m[i] * (3.0 * u[i] * u[i] - 1.0);
            }
        }
        Some(h)
    }
}

/// `½<Ku, u>` with a fixed symmetric matrix.
pub struct GramEnergy {
    pub matrix: DMatrix<f64>,
    pub factor: f64,
}

impl Energy for GramEnergy {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, _t: f64, u: &DVector<f64>) -> f64 {
        0.5 * self.factor * u.dot(&(&self.matrix * u))
    }
    fn gradient(&self, _t: f64, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u * self.factor
    }
    fn hessian(&self, _t: f64, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(&self.matrix * self.factor)
    }
}

/// `sum_q w_q φ(∇u) + (μ/2) sum w |Lu|²` for the one-dimensional beam.
pub struct BeamEnergy {
    pub gradient: Arc<GradientOperator>,
    pub law: Option<StressLaw>,
    pub bending: DMatrix<f64>,
    pub mu: f64,
}

impl Energy for BeamEnergy {
    fn dim(&self) -> usize {
        self.bending.nrows()
    }
    fn value(&self, _t: f64, u: &DVector<f64>) -> f64 {
        let mut e = 0.5 * self.mu * u.dot(&(&self.bending * u));
        if let Some(law) = self.law {
            let f = &self.gradient.components[0] * u;
            e += f
                .iter()
                .zip(self.gradient.weights.iter())
                .map(|(f, w)| w * law.density(*f))
                .sum::<f64>();
        }
        e
    }
    fn gradient(&self, _t: f64, u: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.bending * u * self.mu;
        if let Some(law) = self.law {
            g += stress_divergence(&self.gradient, law, u);
        }
        g
    }
    fn hessian(&self, _t: f64, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = &self.bending * self.mu;
        if let Some(law) = self.law {
            let d = &self.gradient.components[0];
            let f = d * u;
            let wd = DMatrix::from_fn(d.nrows(), d.ncols(), |q, j| {
                self.gradient.weights[q] * law.tangent(f[q]) * d[(q, j)]
            });
            h += d.tr_mul(&wd);
        }
        Some(h)
    }
}

/// `Dᵀ(w ⊙ σ(Du))`, the discrete `-div σ(∇u)`.
fn stress_divergence(grad: &GradientOperator, law: StressLaw, u: &DVector<f64>) -> DVector<f64> {
    let f = &grad.components[0] * u;
    grad.weighted_adjoint(&[f.map(|x| law.stress(x))])
}

/// Explicit stress of P4 on the perturbation route.
pub struct StressPerturbation {
    pub gradient: Arc<GradientOperator>,
    pub law: StressLaw,
}

impl Perturbation for StressPerturbation {
    fn eval(&self, _t: f64, u: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        stress_divergence(&self.gradient, self.law, u)
    }
}

/// `m ⊙ (s_u |u|^{q-1} + s_v (v² + ε²)^{(r-1)/2})`; the velocity term is optional.
pub struct PowerPerturbation {
    pub mass: DVector<f64>,
    pub q: f64,
    pub s_u: f64,
    pub velocity: Option<(f64, f64)>,
}

impl Perturbation for PowerPerturbation {
    fn eval(&self, _t: f64, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let mut b = self.s_u * u[i].abs().powf(self.q - 1.0);
            if let Some((r, s_v)) = self.velocity {
                b += s_v * (v[i] * v[i] + VELOCITY_EPS * VELOCITY_EPS).powf(0.5 * (r - 1.0));
            }
            self.mass[i] * b
        })
    }
}

/// `m ⊙ b(u)` for P3.
pub struct ReactionPerturbation {
    pub mass: DVector<f64>,
    pub reaction: Reaction,
}

impl Reaction {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Reaction::Linear => u,
            Reaction::TruncatedCubic => {
                if u.abs() <= 1.0 {
                    u * u * u
                } else {
                    u.signum() * (3.0 * u.abs() - 2.0)
                }
            }
        }
    }

    /// `sup |b(u)| / |u|`.
    fn linear_bound(self) -> f64 {
        match self {
            Reaction::Linear => 1.0,
            Reaction::TruncatedCubic => 3.0,
        }
    }
}

impl Perturbation for ReactionPerturbation {
    fn eval(&self, _t: f64, u: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| self.mass[i] * self.reaction.eval(u[i]))
    }
}

// ---------------------------------------------------------------------------
// Builders

fn grid_forcing(cfg: &ProblemConfig, system: SystemSpec) -> SystemSpec {
    match &cfg.forcing {
        None => system,
        Some(field) => {
            let pts = cfg.grid.interior_points();
            let field = field.clone();
            system.with_forcing(Arc::new(FnForcing(move |t: f64| {
                DVector::from_iterator(pts.len(), pts.iter().map(|[x, y]| field(t, *x, *y)))
            })))
        }
    }
}

struct GridParts {
    grad: Arc<GradientOperator>,
    mass: DVector<f64>,
    stiffness: DMatrix<f64>,
}

fn grid_parts(grid: &GridSpec) -> GridParts {
    let grad = Arc::new(gradient_operator(grid));
    let stiffness = grad.stiffness();
    GridParts {
        grad,
        mass: mass_weights(grid),
        stiffness,
    }
}

fn p_laplace_energy(cfg: &ProblemConfig, parts: &GridParts) -> PLaplaceEnergy {
    let well = cfg.double_well.then(|| {
        let boundary = cfg.grid.domain_measure() - parts.mass.sum();
        (parts.mass.clone(), 0.25 * boundary)
    });
    PLaplaceEnergy {
        gradient: parts.grad.clone(),
        p: cfg.p,
        well,
    }
}

/// `β` with `cΨ*(-B/c) <= β(1 + E + |v|²)` for the P1/P2 perturbation, valid for
/// `q <= 3`, `r <= 2` and an active double well.
fn p1_beta(cfg: &ProblemConfig, c: f64, c_vh: f64) -> Option<f64> {
    (cfg.double_well && cfg.q <= 3.0 && cfg.r <= 2.0)
        .then(|| c_vh * c_vh / (2.0 * c) * (8.0 * cfg.grid.domain_measure()).max(16.0))
}

/// `Ĉ` with `||ξ||_{U*} <= Ĉ(1 + E + ||u||_U)` for the 1D p-Laplacian with double well.
fn p1_subgradient_constant(cfg: &ProblemConfig) -> Option<(f64, f64)> {
    if cfg.grid.dimension() != 1 || !cfg.double_well {
        return None;
    }
    let omega = cfg.grid.domain_measure();
    let inv_pp = 1.0 - 1.0 / cfg.p;
    let c = (1.0 + 3.0 * omega.powf(1.0 + inv_pp)).max(cfg.p + 8.0 * omega.powf(inv_pp));
    Some((c, 1.0))
}

fn p1_like(cfg: &ProblemConfig, name: &str, power_dissipation: bool) -> Result<SystemSpec> {
    cfg.validate()?;
    let parts = grid_parts(&cfg.grid);
    let h = SpdOperator::diagonal(&parts.mass, "lumped mass")?;
    let v = SpdOperator::new(parts.stiffness.clone(), "stiffness")?;
    let w_exp = if power_dissipation { cfg.r } else { cfg.q };
    let w = Norm::Power(PowerNorm::lebesgue(parts.mass.clone(), w_exp)?);
    let u = Norm::Power(PowerNorm::sobolev(parts.grad.clone(), cfg.p)?);
    let norms = Arc::new(NormFamily::new(h, v.clone(), w, u, Default::default())?);
    let c_vh = norms.embedding_vh();

    let diss = if power_dissipation {
        let part = PowerPart::Norm(PowerNorm::lebesgue(parts.mass.clone(), cfg.r)?);
        DissipationSpec::with_power(parts.stiffness.clone(), &v, part)?
    } else {
        DissipationSpec::quadratic(parts.stiffness.clone(), &v)?
    };
    let energy = Arc::new(p_laplace_energy(cfg, &parts));
    let lambda = if cfg.double_well {
        0.5 * c_vh * c_vh
    } else {
        0.0
    };

    let mut growth = GrowthConstants {
        time_control: Some(0.0),
        subgradient: p1_subgradient_constant(cfg),
        ..GrowthConstants::default()
    };
    growth.beta = p1_beta(cfg, growth.c, c_vh);
    if power_dissipation {
        growth.holder_gamma = Some((cfg.r - 1.0).min(1.0));
    }
    let velocity = (!power_dissipation).then_some((cfg.r, cfg.s_v));
    let b = Arc::new(PowerPerturbation {
        mass: parts.mass.clone(),
        q: cfg.q,
        s_u: cfg.s_u,
        velocity,
    });
    let sys = SystemSpec::new(name, energy, diss, norms)?
        .with_lambda(lambda)
        .with_perturbation(b)
        .with_growth(growth);
    Ok(grid_forcing(cfg, sys))
}

/// P1: p-Laplacian wave equation with double well and explicit power terms.
pub fn build_p1(cfg: &ProblemConfig) -> Result<SystemSpec> {
    p1_like(cfg, "P1", false)
}

/// P2: as P1 with the velocity power moved into a mode (b) dissipation.
pub fn build_p2(cfg: &ProblemConfig) -> Result<SystemSpec> {
    p1_like(cfg, "P2", true)
}

/// P3: viscously damped Klein–Gordon type equation.
pub fn build_p3(cfg: &ProblemConfig) -> Result<SystemSpec> {
    cfg.validate()?;
    let parts = grid_parts(&cfg.grid);
    let h = SpdOperator::diagonal(&parts.mass, "lumped mass")?;
    let v = SpdOperator::new(parts.stiffness.clone(), "stiffness")?;
    let norms = Arc::new(NormFamily::new(
        h.clone(),
        v.clone(),
        Norm::Gram(h),
        Norm::Gram(v.clone()),
        Default::default(),
    )?);
    let c_vh = norms.embedding_vh();
    let diss = DissipationSpec::quadratic(&parts.stiffness * cfg.mu, &v)?;
    let energy = Arc::new(GramEnergy {
        matrix: parts.stiffness.clone(),
        factor: 1.0,
    });
    let growth = GrowthConstants {
        time_control: Some(0.0),
        subgradient: Some((1.0, 1.0)),
        ..GrowthConstants::default()
    };
    // |B|²_{V*} <= C² |b(u)|²_H <= C² k² |u|²_H <= 2 C⁴ k² E, with k = sup|b(u)/u|.
    let k = cfg.reaction.linear_bound();
    let growth = GrowthConstants {
        beta: Some(c_vh.powi(4) * k * k / (growth.c * cfg.mu)),
        ..growth
    };
    let b = Arc::new(ReactionPerturbation {
        mass: parts.mass.clone(),
        reaction: cfg.reaction,
    });
    let sys = SystemSpec::new("P3", energy, diss, norms)?
        .with_perturbation(b)
        .with_growth(growth);
    Ok(grid_forcing(cfg, sys))
}

/// Smallest `C` with `sum w|Lu|² >= C ||u||²_V`.
pub fn bending_constant(bending: &DMatrix<f64>, v: &SpdOperator) -> f64 {
    v.generalized_eigenvalues(bending)[0]
}

/// P4: one-dimensional viscoelastic beam with capillarity, stress routed either
/// into the energy or into the explicit perturbation.
pub fn build_p4(cfg: &ProblemConfig) -> Result<SystemSpec> {
    cfg.validate()?;
    if cfg.grid.dimension() != 1 {
        return Err(Error::invalid(
            "P4 is implemented on one-dimensional grids only",
        ));
    }
    let lap = ClampedLaplacian::new(&cfg.grid)?;
    let parts = grid_parts(&cfg.grid);
    let h = SpdOperator::diagonal(&(&parts.mass * cfg.rho), "density-weighted mass")?;
    let v = SpdOperator::new(parts.stiffness.clone(), "stiffness")?;
    let bending = lap.gram();
    let u_gram = SpdOperator::new(bending.clone(), "bending Gram matrix")?;
    let norms = Arc::new(NormFamily::new(
        h,
        v.clone(),
        Norm::Gram(v.clone()),
        Norm::Gram(u_gram),
        Default::default(),
    )?);
    let diss = DissipationSpec::quadratic(&parts.stiffness * cfg.nu, &v)?;
    let c_bend = bending_constant(&bending, &v);

    let mut growth = GrowthConstants {
        time_control: Some(0.0),
        ..GrowthConstants::default()
    };
    let sys = match cfg.route {
        StressRoute::Energy => {
            let lam_ab = cfg.stress.semi_monotonicity();
            if lam_ab >= cfg.mu * c_bend {
                return Err(Error::invalid(format!(
                    "energy route loses convexity: semi-monotonicity constant {lam_ab} is not below mu * C = {}",
                    cfg.mu * c_bend
                )));
            }
            growth.beta = Some(0.0);
            let energy = Arc::new(BeamEnergy {
                gradient: parts.grad.clone(),
                law: Some(cfg.stress),
                bending,
                mu: cfg.mu,
            });
            SystemSpec::new("P4", energy, diss, norms)?
                .with_lambda(0.5 * (lam_ab - cfg.mu * c_bend))
        }
        StressRoute::Perturbation => {
            // Linear stress: cΨ*(-B/c) = |u|²_V / (2cν) <= E / (cνμC).
            if cfg.stress == StressLaw::Linear {
                growth.beta = Some(1.0 / (growth.c * cfg.nu * cfg.mu * c_bend));
            }
            let energy = Arc::new(BeamEnergy {
                gradient: parts.grad.clone(),
                law: None,
                bending,
                mu: cfg.mu,
            });
            let b = Arc::new(StressPerturbation {
                gradient: parts.grad.clone(),
                law: cfg.stress,
            });
            SystemSpec::new("P4", energy, diss, norms)?.with_perturbation(b)
        }
    };
    Ok(grid_forcing(cfg, sys.with_growth(growth)))
}

/// Linear oscillator `u'' + C u' + K u = 0` on Euclidean spaces.
pub fn build_oscillator(stiffness: &DMatrix<f64>, damping: &DMatrix<f64>) -> Result<SystemSpec> {
    let n = stiffness.nrows();
    if stiffness.ncols() != n || damping.nrows() != n || damping.ncols() != n {
        return Err(Error::invalid(
            "oscillator matrices must be square and of equal size",
        ));
    }
    let k = SpdOperator::new(stiffness.clone(), "oscillator stiffness")?;
    let norms = Arc::new(NormFamily::euclidean(n));
    let diss = DissipationSpec::quadratic(damping.clone(), &norms.v)?;
    let k_max = k
        .generalized_eigenvalues(&DMatrix::identity(n, n))
        .iter()
        .fold(0.0f64, |m, x| m.max(1.0 / x));
    let growth = GrowthConstants {
        beta: Some(0.0),
        time_control: Some(0.0),
        subgradient: Some((k_max, 1.0)),
        ..GrowthConstants::default()
    };
    let energy = Arc::new(GramEnergy {
        matrix: stiffness.clone(),
        factor: 1.0,
    });
    Ok(SystemSpec::new("oscillator", energy, diss, norms)?.with_growth(growth))
}

/// Dispatches on [`ProblemConfig::id`].
pub fn build(cfg: &ProblemConfig) -> Result<SystemSpec> {
    match cfg.id {
        ProblemId::P1 => build_p1(cfg),
        ProblemId::P2 => build_p2(cfg),
        ProblemId::P3 => build_p3(cfg),
        ProblemId::P4 => build_p4(cfg),
        ProblemId::Oscillator => {
            build_oscillator(&cfg.oscillator.stiffness, &cfg.oscillator.damping)
        }
    }
}

/// Initial displacement and velocity for the configured problem.
pub fn initial_data(cfg: &ProblemConfig) -> Result<(StateVec, StateVec)> {
    if cfg.id == ProblemId::Oscillator {
        let n = cfg.oscillator.stiffness.nrows();
        if cfg.oscillator.u0.len() != n || cfg.oscillator.v0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cfg.oscillator.u0.len().max(cfg.oscillator.v0.len()),
            });
        }
        return Ok((
            StateVec::from_slice(&cfg.oscillator.u0),
            StateVec::from_slice(&cfg.oscillator.v0),
        ));
    }
    let grid = &cfg.grid;
    let lx = grid.extent(0);
    let ly = if grid.dimension() == 2 {
        Some(grid.extent(1))
    } else {
        None
    };
    let a = cfg.amplitude;
    // The clamped beam also needs a vanishing slope at the ends.
    let power = if cfg.id == ProblemId::P4 { 2 } else { 1 };
    let u0 = match &cfg.u0 {
        Some(f) => grid.sample(|x, y| f(x, y)),
        None => grid.sample(|x, y| {
            let base = a * (std::f64::consts::PI * x / lx).sin().powi(power);
            ly.map_or(base, |ly| base * (std::f64::consts::PI * y / ly).sin())
        }),
    };
    let v0 = match &cfg.v0 {
        Some(f) => grid.sample(|x, y| f(x, y)),
        None => StateVec::zeros(grid.interior_count()),
    };
    Ok((u0, v0))
}

/// Closed-form solution of a diagonal, underdamped oscillator.
#[derive(Clone, Debug)]
pub struct DiagonalOscillatorExact {
    modes: Vec<(f64, f64, f64, f64)>,
}

impl DiagonalOscillatorExact {
    /// `None` unless both matrices are diagonal and every mode is underdamped.
    pub fn new(spec: &OscillatorSpec) -> Option<Self> {
        let (k, c) = (&spec.stiffness, &spec.damping);
        let n = k.nrows();
        let off = |m: &DMatrix<f64>| (0..n).any(|i| (0..n).any(|j| i != j && m[(i, j)] != 0.0));
        if off(k) || off(c) || spec.u0.len() != n || spec.v0.len() != n {
            return None;
        }
        let mut modes = Vec::with_capacity(n);
        for i in 0..n {
            let (ki, ci) = (k[(i, i)], c[(i, i)]);
            let disc = ki - 0.25 * ci * ci;
            if !(disc > 0.0) {
                return None;
            }
            let omega = disc.sqrt();
            let amp_sin = (spec.v0[i] + 0.5 * ci * spec.u0[i]) / omega;
            modes.push((0.5 * ci, omega, spec.u0[i], amp_sin));
        }
        Some(Self { modes })
    }
}

impl ExactSolution for DiagonalOscillatorExact {
    fn state(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.modes.len(),
            self.modes
                .iter()
                .map(|&(d, w, a, b)| (-d * t).exp() * (a * (w * t).cos() + b * (w * t).sin())),
        )
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.modes.len(),
            self.modes.iter().map(|&(d, w, a, b)| {
                let (s, c) = (w * t).sin_cos();
                (-d * t).exp() * ((b * w - d * a) * c - (a * w + d * b) * s)
            }),
        )
    }
}

#[cfg(test)]
mod tests;
