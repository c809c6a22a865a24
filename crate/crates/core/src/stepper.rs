//! Semi-implicit variational time stepping.
//!
//! Each step minimizes the incremental functional
//! `Φ(r, t, v, w, η; u) = |u - 2v + w|²_H / (2r²) + rΨ((u - v)/r) + E_{t+r}(u) - <η, u>`
//! with `v = U^{n-1}`, `w = U^{n-2}`, `r = τ` and `η = S^n = f̄^n - B(t_n, U^{n-1}, V^{n-1})`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::convex::{psi_conjugate, DissipationSpec};
use crate::error::{check_dim, Error, Result};
use crate::optim::{minimize, FailureReason, MinimizeOptions, Objective};
use crate::spaces::{DualTag, DualVec, NormFamily, StateVec};

/// Time-dependent energy `E_t(u)` with its state gradient and time derivative.
pub trait Energy: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, u: &DVector<f64>) -> f64;
    fn gradient(&self, t: f64, u: &DVector<f64>) -> DVector<f64>;
    /// `∂_t E_t(u)`.
    fn time_derivative(&self, _t: f64, _u: &DVector<f64>) -> f64 {
        0.0
    }
    fn hessian(&self, _t: f64, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Non-variational perturbation `B(t, u, v)`, returned as a functional.
pub trait Perturbation: Send + Sync {
    fn eval(&self, t: f64, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
}

/// External force `f(t)`, returned as a state in `H`.
pub trait Forcing: Send + Sync {
    fn eval(&self, t: f64) -> DVector<f64>;
}

/// `E(u) = ½ uᵀ K u`.
#[derive(Clone, Debug)]
pub struct QuadraticEnergy {
    pub matrix: DMatrix<f64>,
}

impl Energy for QuadraticEnergy {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, _t: f64, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.matrix * u))
    }
    fn gradient(&self, _t: f64, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }
    fn hessian(&self, _t: f64, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// Time-independent energy from closures.
pub struct FnEnergy<F, G> {
    pub dim: usize,
    pub value: F,
    pub gradient: G,
}

impl<F, G> Energy for FnEnergy<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _t: f64, u: &DVector<f64>) -> f64 {
        (self.value)(u)
    }
    fn gradient(&self, _t: f64, u: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(u)
    }
}

/// `E_t(u) = (1 + a sin(ωt)) E(u)` with `|a| < 1`.
pub struct TimeModulatedEnergy {
    pub inner: Arc<dyn Energy>,
    pub amplitude: f64,
    pub frequency: f64,
}

impl TimeModulatedEnergy {
    pub fn new(inner: Arc<dyn Energy>, amplitude: f64, frequency: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0) {
            return Err(Error::invalid("modulation amplitude must lie in (-1, 1)"));
        }
        Ok(Self {
            inner,
            amplitude,
            frequency,
        })
    }

    fn factor(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (self.frequency * t).sin()
    }

    /// Smallest `C1` with `|∂_t E_t| <= C1 E_t` for nonnegative `E`.
    pub fn time_control_constant(&self) -> f64 {
        (self.amplitude * self.frequency).abs() / (1.0 - self.amplitude.abs())
    }
}

impl Energy for TimeModulatedEnergy {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, t: f64, u: &DVector<f64>) -> f64 {
        self.factor(t) * self.inner.value(t, u)
    }
    fn gradient(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(t, u) * self.factor(t)
    }
    fn time_derivative(&self, t: f64, u: &DVector<f64>) -> f64 {
        self.amplitude * self.frequency * (self.frequency * t).cos() * self.inner.value(t, u)
            + self.factor(t) * self.inner.time_derivative(t, u)
    }
    fn hessian(&self, t: f64, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.inner.hessian(t, u).map(|h| h * self.factor(t))
    }
}

/// `E_t(u) + shift`.
pub struct ShiftedEnergy {
    pub inner: Arc<dyn Energy>,
    pub shift: f64,
}

impl Energy for ShiftedEnergy {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, t: f64, u: &DVector<f64>) -> f64 {
        self.inner.value(t, u) + self.shift
    }
    fn gradient(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(t, u)
    }
    fn time_derivative(&self, t: f64, u: &DVector<f64>) -> f64 {
        self.inner.time_derivative(t, u)
    }
    fn hessian(&self, t: f64, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.inner.hessian(t, u)
    }
}

pub struct ZeroPerturbation {
    pub dim: usize,
}

impl Perturbation for ZeroPerturbation {
    fn eval(&self, _t: f64, _u: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

pub struct FnPerturbation<F>(pub F);

impl<F> Perturbation for FnPerturbation<F>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn eval(&self, t: f64, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (self.0)(t, u, v)
    }
}

pub struct ZeroForcing {
    pub dim: usize,
}

impl Forcing for ZeroForcing {
    fn eval(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

pub struct FnForcing<F>(pub F);

impl<F> Forcing for FnForcing<F>
where
    F: Fn(f64) -> DVector<f64> + Send + Sync,
{
    fn eval(&self, t: f64) -> DVector<f64> {
        (self.0)(t)
    }
}

/// Constants of the growth assumptions, used by the step-size estimate and the audits.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthConstants {
    /// `c` in the perturbation growth bound, in `(0, 1)`.
    pub c: f64,
    /// `c̃` from the Young splitting of `Ψ^ν`, with `c + c̃ < 1`.
    pub c_tilde: f64,
    /// `ν` in `(0, 1)`.
    pub nu: f64,
    /// `β` bounding `cΨ*(-B/c)`; `None` when not derived for the system.
    pub beta: Option<f64>,
    /// `C1` bounding `|∂_t E| <= C1 E`.
    pub time_control: Option<f64>,
    /// `(Ĉ, σ)` bounding `||ξ||_{U*}^σ <= Ĉ (1 + E + ||u||_U)`.
    pub subgradient: Option<(f64, f64)>,
    /// Hölder exponent `γ` of `DΨ2` in mode (b).
    pub holder_gamma: Option<f64>,
}

impl Default for GrowthConstants {
    fn default() -> Self {
        Self {
            c: 0.25,
            c_tilde: 0.25,
            nu: 0.5,
            beta: None,
            time_control: None,
            subgradient: None,
            holder_gamma: None,
        }
    }
}

/// The damped inertial system `u'' + ∂Ψ(u') + ∂E_t(u) + B(t, u, u') ∋ f`.
///
/// `lambda` is the constant with `E_t + λ||·||²_V` convex (negative values mean
/// strong convexity).
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub energy: Arc<dyn Energy>,
    pub lambda: f64,
    pub dissipation: DissipationSpec,
    pub perturbation: Arc<dyn Perturbation>,
    pub forcing: Arc<dyn Forcing>,
    pub norms: Arc<NormFamily>,
    pub growth: GrowthConstants,
    /// `false` only when the perturbation is identically zero.
    pub has_perturbation: bool,
    pub has_forcing: bool,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("lambda", &self.lambda)
            .field("mode", &self.dissipation.mode())
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    pub fn new(
        name: impl Into<String>,
        energy: Arc<dyn Energy>,
        dissipation: DissipationSpec,
        norms: Arc<NormFamily>,
    ) -> Result<Self> {
        let n = norms.dim();
        check_dim(n, energy.dim())?;
        check_dim(n, dissipation.dim())?;
        Ok(Self {
            name: name.into(),
            energy,
            lambda: 0.0,
            dissipation,
            perturbation: Arc::new(ZeroPerturbation { dim: n }),
            forcing: Arc::new(ZeroForcing { dim: n }),
            norms,
            growth: GrowthConstants::default(),
            has_perturbation: false,
            has_forcing: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.norms.dim()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_perturbation(mut self, b: Arc<dyn Perturbation>) -> Self {
        self.perturbation = b;
        self.has_perturbation = true;
        self
    }

    pub fn with_forcing(mut self, f: Arc<dyn Forcing>) -> Self {
        self.forcing = f;
        self.has_forcing = true;
        self
    }

    pub fn with_growth(mut self, growth: GrowthConstants) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_energy(mut self, energy: Arc<dyn Energy>) -> Self {
        self.energy = energy;
        self
    }
}

/// Step size, horizon and inner-solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub tau: f64,
    pub horizon: f64,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub tau_star_guard: bool,
}

impl SolverConfig {
    pub fn new(tau: f64, horizon: f64) -> Self {
        Self {
            tau,
            horizon,
            inner_tol: 1e-10,
            inner_max_iters: 200,
            tau_star_guard: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau must be positive"));
        }
        if !(self.horizon.is_finite() && self.tau <= self.horizon) {
            return Err(Error::invalid("tau must not exceed the horizon"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::invalid("inner_tol must be positive"));
        }
        if self.inner_max_iters == 0 {
            return Err(Error::invalid("inner_max_iters must be at least 1"));
        }
        Ok(())
    }

    /// Number of steps `N` and the snapped step `T/N`.
    pub fn partition(&self) -> (usize, f64) {
        let n = (self.horizon / self.tau).round().max(1.0) as usize;
        (n, self.horizon / n as f64)
    }
}

/// One node of the discrete trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    pub u: StateVec,
    pub v: StateVec,
    /// Recovered energy subgradient `ξ^n`.
    pub xi: DualVec,
    /// Interval-averaged force `f̄^n` (a state in `H`).
    pub force: StateVec,
    /// `B(t_n, U^{n-1}, V^{n-1})`.
    pub perturbation: DualVec,
    /// `S^n = G_H f̄^n - B(t_n, U^{n-1}, V^{n-1})`.
    pub drive: DualVec,
    pub psi_value: f64,
    /// `Ψ*(S^n - G_H(V^n - V^{n-1})/τ - ξ^n)`.
    pub psi_star_value: f64,
    /// Accuracy bound of `psi_star_value`.
    pub psi_star_error: f64,
    pub energy_value: f64,
    pub inner_iterations: usize,
    /// `||∇Φ(U^n)|| / (1 + ||∇Φ(U^{n-1})||)`.
    pub optimality_residual: f64,
    /// `||ξ^n - ∂E_{t_n}(U^n)||_{V*}`.
    pub xi_residual: f64,
    /// Raw Fenchel–Young defect of the dissipation at this step.
    pub fenchel_young: f64,
    /// `Φ` at the warm start `U^{n-1}` and at the minimizer.
    pub phi_start: f64,
    pub phi_value: f64,
}

/// Output of [`run`].
#[derive(Clone)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub u0: StateVec,
    pub v0: StateVec,
    pub config: SolverConfig,
    /// Effective (snapped) step size.
    pub tau: f64,
    pub system: Arc<SystemSpec>,
    pub warnings: Vec<String>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("system", &self.system.name)
            .field("steps", &self.steps())
            .field("tau", &self.tau)
            .field("requested_tau", &self.config.tau)
            .finish_non_exhaustive()
    }
}

impl Trajectory {
    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn requested_tau(&self) -> f64 {
        self.config.tau
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &StepRecord {
        self.records
            .last()
            .expect("trajectory holds the initial record")
    }

    /// `½|V^n|²_H + E_{t_n}(U^n)`.
    pub fn total_energy(&self, n: usize) -> f64 {
        let r = &self.records[n];
        0.5 * self.system.norms.h.quad(&r.v) + r.energy_value
    }
}

struct Increment<'a> {
    sys: &'a SystemSpec,
    r: f64,
    t: f64,
    v: &'a DVector<f64>,
    w: &'a DVector<f64>,
    eta: &'a DVector<f64>,
}

impl Increment<'_> {
    fn accel(&self, u: &DVector<f64>) -> DVector<f64> {
        u - self.v * 2.0 + self.w
    }
    fn rate(&self, u: &DVector<f64>) -> DVector<f64> {
        (u - self.v) / self.r
    }
}

impl Objective for Increment<'_> {
    fn dim(&self) -> usize {
        self.v.len()
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let a = self.accel(u);
        self.sys.norms.h.quad(&a) / (2.0 * self.r * self.r)
            + self.r * self.sys.dissipation.value(&self.rate(u))
            + self.sys.energy.value(self.t + self.r, u)
            - self.eta.dot(u)
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        self.sys.norms.h.apply(&self.accel(u)) / (self.r * self.r)
            + self.sys.dissipation.gradient(&self.rate(u))
            + self.sys.energy.gradient(self.t + self.r, u)
            - self.eta
    }

    fn hessian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let he = self.sys.energy.hessian(self.t + self.r, u)?;
        let hp = self.sys.dissipation.hessian(&self.rate(u))?;
        Some(self.sys.norms.h.matrix() / (self.r * self.r) + hp / self.r + he)
    }
}

fn check_increment_args(system: &SystemSpec, r: f64, vecs: &[&DVector<f64>]) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::invalid("step r must be positive"));
    }
    for v in vecs {
        check_dim(system.dim(), v.len())?;
    }
    Ok(())
}

/// `Φ(r, t, v, w, η; u)`.
pub fn incremental_value(
    system: &SystemSpec,
    r: f64,
    t: f64,
    v: &StateVec,
    w: &StateVec,
    eta: &DualVec,
    u: &StateVec,
) -> Result<f64> {
    check_increment_args(system, r, &[v, w, eta, u])?;
    Ok(Increment {
        sys: system,
        r,
        t,
        v,
        w,
        eta,
    }
    .value(u))
}

/// `∇_u Φ(r, t, v, w, η; u)`.
pub fn incremental_gradient(
    system: &SystemSpec,
    r: f64,
    t: f64,
    v: &StateVec,
    w: &StateVec,
    eta: &DualVec,
    u: &StateVec,
) -> Result<DualVec> {
    check_increment_args(system, r, &[v, w, eta, u])?;
    Ok(DualVec::new(
        Increment {
            sys: system,
            r,
            t,
            v,
            w,
            eta,
        }
        .gradient(u),
    ))
}

/// Minimizer of one increment.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementSolution {
    pub u: StateVec,
    /// `||∇Φ(u)|| / (1 + ||∇Φ(warm_start)||)`.
    pub residual: f64,
    pub iterations: usize,
    pub value: f64,
    pub start_value: f64,
}

/// An element of `argmin_u Φ(r, t, v, w, η; u)`, started from `warm_start`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_increment(
    system: &SystemSpec,
    r: f64,
    t: f64,
    v: &StateVec,
    w: &StateVec,
    eta: &DualVec,
    warm_start: &StateVec,
    config: &SolverConfig,
) -> Result<IncrementSolution> {
    check_increment_args(system, r, &[v, w, eta, warm_start])?;
    if !warm_start.is_finite() {
        return Err(Error::NonFinite {
            what: "warm start".into(),
        });
    }
    let obj = Increment {
        sys: system,
        r,
        t,
        v,
        w,
        eta,
    };
    let precond = system.norms.h.matrix() / (r * r) + system.dissipation.operator().matrix() / r;
    let opts = MinimizeOptions {
        tol: config.inner_tol,
        max_iters: config.inner_max_iters,
        preconditioner: Some(&precond),
        ..Default::default()
    };
    let start_value = obj.value(warm_start);
    if !start_value.is_finite() {
        return Err(Error::NonFinite {
            what: "incremental functional at warm start".into(),
        });
    }
    match minimize(&obj, warm_start, &opts) {
        Ok(m) => {
            let residual = m.relative_residual();
            if !m.converged() && residual > 10.0 * config.inner_tol {
                return Err(Error::IterationLimit {
                    what: "incremental minimization (line search stalled)".into(),
                    iterations: m.iterations,
                    residual,
                });
            }
            Ok(IncrementSolution {
                u: StateVec::new(m.x),
                residual,
                iterations: m.iterations,
                value: m.value,
                start_value,
            })
        }
        Err(fail) => Err(match fail.reason {
            FailureReason::NonFiniteStart => Error::NonFinite {
                what: "incremental functional".into(),
            },
            _ => Error::IterationLimit {
                what: "incremental minimization".into(),
                iterations: fail.best.iterations,
                residual: fail.best.relative_residual(),
            },
        }),
    }
}

/// Moreau–Yosida value `min_u Φ(r, t, v, w, η; u)`.
pub fn moreau_yosida(
    system: &SystemSpec,
    r: f64,
    t: f64,
    v: &StateVec,
    w: &StateVec,
    eta: &DualVec,
    config: &SolverConfig,
) -> Result<f64> {
    minimize_increment(system, r, t, v, w, eta, v, config).map(|s| s.value)
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// `f̄^n = (1/τ) ∫_{t_{n-1}}^{t_n} f`, by 3-point Gauss quadrature.
pub fn average_force(system: &SystemSpec, n: usize, tau: f64) -> Result<StateVec> {
    if n == 0 {
        return Err(Error::invalid("average_force needs n >= 1"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    let mid = (n as f64 - 0.5) * tau;
    let mut acc = DVector::zeros(system.dim());
    for (x, w) in GAUSS3 {
        acc += system.forcing.eval(mid + 0.5 * tau * x) * (0.5 * w);
    }
    Ok(StateVec::new(acc))
}

/// `ξ^n = S^n - G_H(V^n - V^{n-1})/τ - DΨ(V^n)`.
pub fn recover_subgradient(
    record: &StepRecord,
    previous: &StepRecord,
    system: &SystemSpec,
    tau: f64,
) -> DualVec {
    let dv = record.v.as_vector() - previous.v.as_vector();
    DualVec::new(
        record.drive.as_vector()
            - system.norms.h.apply(&dv) / tau
            - system.dissipation.gradient(&record.v),
    )
}

/// `min{2μ(1 - c - c̃)/|λ|, 1}`, or `+∞` for `λ = 0`.
pub fn estimate_tau_star(system: &SystemSpec) -> f64 {
    if system.lambda == 0.0 {
        return f64::INFINITY;
    }
    let g = &system.growth;
    (2.0 * system.dissipation.mu() * (1.0 - g.c - g.c_tilde) / system.lambda.abs()).min(1.0)
}

fn initial_record(system: &SystemSpec, u0: &StateVec, v0: &StateVec) -> StepRecord {
    let n = system.dim();
    StepRecord {
        index: 0,
        t: 0.0,
        u: u0.clone(),
        v: v0.clone(),
        xi: DualVec::new(system.energy.gradient(0.0, u0)),
        force: StateVec::new(system.forcing.eval(0.0)),
        perturbation: DualVec::zeros(n),
        drive: DualVec::zeros(n),
        psi_value: system.dissipation.value(v0),
        psi_star_value: 0.0,
        psi_star_error: 0.0,
        energy_value: system.energy.value(0.0, u0),
        inner_iterations: 0,
        optimality_residual: 0.0,
        xi_residual: 0.0,
        fenchel_young: 0.0,
        phi_start: 0.0,
        phi_value: 0.0,
    }
}

/// Runs the scheme from `U^0 = u0`, `U^{-1} = u0 - τ v0` to the horizon.
pub fn run(
    system: &Arc<SystemSpec>,
    u0: &StateVec,
    v0: &StateVec,
    config: &SolverConfig,
) -> Result<Trajectory> {
    config.validate()?;
    check_dim(system.dim(), u0.len())?;
    check_dim(system.dim(), v0.len())?;
    if !u0.is_finite() || !v0.is_finite() {
        return Err(Error::NonFinite {
            what: "initial data".into(),
        });
    }
    let e0 = system.energy.value(0.0, u0);
    if !e0.is_finite() {
        return Err(Error::invalid(
            "u0 lies outside the effective domain of the energy",
        ));
    }
    let (steps, tau) = config.partition();
    let mut warnings = Vec::new();
    let tau_star = estimate_tau_star(system);
    if config.tau_star_guard && tau >= tau_star {
        warnings.push(format!(
            "warning: tau = {tau} is not below the estimated tau* = {tau_star}"
        ));
    }

    let mut traj = Trajectory {
        records: Vec::with_capacity(steps + 1),
        u0: u0.clone(),
        v0: v0.clone(),
        config: config.clone(),
        tau,
        system: system.clone(),
        warnings,
    };
    traj.records.push(initial_record(system, u0, v0));
    let seed = StateVec::new(u0.as_vector() - v0.as_vector() * tau);

    for n in 1..=steps {
        match advance(system, &traj, &seed, n, tau, config) {
            Ok(rec) => traj.records.push(rec),
            Err(source) => {
                return Err(Error::StepFailure {
                    step: n,
                    source: Box::new(source),
                    partial: Box::new(traj),
                })
            }
        }
    }
    Ok(traj)
}

fn advance(
    system: &SystemSpec,
    traj: &Trajectory,
    seed: &StateVec,
    n: usize,
    tau: f64,
    config: &SolverConfig,
) -> Result<StepRecord> {
    let prev = &traj.records[n - 1];
    let w = if n == 1 { seed } else { &traj.records[n - 2].u };
    let t_prev = (n - 1) as f64 * tau;
    let t_n = n as f64 * tau;

    let b = DualVec::new(system.perturbation.eval(t_n, &prev.u, &prev.v));
    let force = average_force(system, n, tau)?;
    let drive = DualVec::new(system.norms.h.apply(&force) - b.as_vector());
    if !b.is_finite() || !drive.is_finite() {
        return Err(Error::NonFinite {
            what: "perturbation or forcing".into(),
        });
    }

    let sol = minimize_increment(system, tau, t_prev, &prev.u, w, &drive, &prev.u, config)?;
    let u = sol.u;
    let v = StateVec::new((u.as_vector() - prev.u.as_vector()) / tau);

    let mut rec = StepRecord {
        index: n,
        t: t_n,
        u,
        v,
        xi: DualVec::zeros(system.dim()),
        force,
        perturbation: b,
        drive,
        psi_value: 0.0,
        psi_star_value: 0.0,
        psi_star_error: 0.0,
        energy_value: 0.0,
        inner_iterations: sol.iterations,
        optimality_residual: sol.residual,
        xi_residual: 0.0,
        fenchel_young: 0.0,
        phi_start: sol.start_value,
        phi_value: sol.value,
    };
    rec.xi = recover_subgradient(&rec, prev, system, tau);
    rec.energy_value = system.energy.value(t_n, &rec.u);

    let dv = rec.v.as_vector() - prev.v.as_vector();
    let zeta =
        DualVec::new(rec.drive.as_vector() - system.norms.h.apply(&dv) / tau - rec.xi.as_vector());
    let conj = psi_conjugate(&system.dissipation, &zeta, config.inner_tol.min(1e-12))?;
    rec.psi_value = system.dissipation.value(&rec.v);
    rec.psi_star_value = conj.value;
    rec.psi_star_error = conj.gap_estimate;
    rec.fenchel_young = rec.psi_value + rec.psi_star_value - zeta.pair(&rec.v);

    let grad_e = system.energy.gradient(t_n, &rec.u);
    rec.xi_residual = system
        .norms
        .dual_norm(DualTag::VStar, &DualVec::new(rec.xi.as_vector() - grad_e))?;
    Ok(rec)
}
