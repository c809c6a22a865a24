//! Dissipation potentials, convex conjugates and subgradient checks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::optim::{minimize, FailureReason, MinimizeOptions, Objective};
use crate::spaces::{DualVec, GradientOperator, PowerNorm, PowerOperator, SpdOperator, StateVec};

/// A convex functional on the coefficient space with first (and optionally second) derivatives.
pub trait SmoothFunctional: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<T: SmoothFunctional + ?Sized> SmoothFunctional for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).hessian(x)
    }
}

/// `x ↦ ½ xᵀ M x`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub matrix: DMatrix<f64>,
}

impl SmoothFunctional for Quadratic {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.matrix * x))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// `x ↦ (1/r) ||x||^r` for a quadrature power norm.
#[derive(Clone, Debug)]
pub struct PowerFunctional {
    pub norm: PowerNorm,
}

impl SmoothFunctional for PowerFunctional {
    fn dim(&self) -> usize {
        self.norm.dim()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = self.norm.exponent;
        match &self.norm.operator {
            PowerOperator::Identity { weights } => {
                x.iter()
                    .zip(weights.iter())
                    .map(|(v, w)| w * v.abs().powf(r))
                    .sum::<f64>()
                    / r
            }
            PowerOperator::Gradient(g) => g.power_energy(x, r),
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.norm.exponent;
        match &self.norm.operator {
            PowerOperator::Identity { weights } => {
                DVector::from_fn(x.len(), |i, _| weights[i] * signed_power(x[i], r - 1.0))
            }
            PowerOperator::Gradient(g) => g.power_gradient(x, r),
        }
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let r = self.norm.exponent;
        if r < 2.0 {
            return None;
        }
        Some(match &self.norm.operator {
            PowerOperator::Identity { weights } => {
                DMatrix::from_diagonal(&DVector::from_fn(x.len(), |i, _| {
                    weights[i]
                        * (r - 1.0)
                        * if r == 2.0 {
                            1.0
                        } else {
                            x[i].abs().powf(r - 2.0)
                        }
                }))
            }
            PowerOperator::Gradient(g) => g.power_hessian(x, r),
        })
    }
}

/// Closed-form conjugate of `(1/r) sum_i w_i |x_i|^r`: `(1/r') sum_i w_i^{1-r'} |ξ_i|^{r'}`.
#[derive(Clone, Debug)]
pub struct SeparablePowerConjugate {
    pub weights: DVector<f64>,
    pub exponent: f64,
}

impl SeparablePowerConjugate {
    fn dual_exponent(&self) -> f64 {
        self.exponent / (self.exponent - 1.0)
    }
}

impl SmoothFunctional for SeparablePowerConjugate {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, xi: &DVector<f64>) -> f64 {
        let rp = self.dual_exponent();
        xi.iter()
            .zip(self.weights.iter())
            .map(|(v, w)| w.powf(1.0 - rp) * v.abs().powf(rp))
            .sum::<f64>()
            / rp
    }
    fn gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        let rp = self.dual_exponent();
        DVector::from_fn(xi.len(), |i, _| {
            self.weights[i].powf(1.0 - rp) * signed_power(xi[i], rp - 1.0)
        })
    }
    fn hessian(&self, xi: &DVector<f64>) -> Option<DMatrix<f64>> {
        let rp = self.dual_exponent();
        (rp >= 2.0).then(|| {
            DMatrix::from_diagonal(&DVector::from_fn(xi.len(), |i, _| {
                self.weights[i].powf(1.0 - rp) * (rp - 1.0) * xi[i].abs().powf(rp - 2.0)
            }))
        })
    }
}

/// Functional given by a value closure and a gradient closure.
pub struct FnFunctional<F, G> {
    pub dim: usize,
    pub value: F,
    pub gradient: G,
}

impl<F, G> SmoothFunctional for FnFunctional<F, G>
where
    F: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }
}

/// `sign(x) |x|^e`.
pub(crate) fn signed_power(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

struct AsObjective<'a, F: ?Sized> {
    f: &'a F,
    shift: &'a DVector<f64>,
}

/// `x ↦ F(x) - <shift, x>`.
impl<F: SmoothFunctional + ?Sized> Objective for AsObjective<'_, F> {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x) - self.shift.dot(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f.gradient(x) - self.shift
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.f.hessian(x)
    }
}

/// Which case of the dissipation assumption a potential belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DissipationMode {
    /// Quadratic potential only.
    A,
    /// Quadratic potential plus a power-growth part on `W`.
    B,
}

/// The non-quadratic part `Ψ2`.
#[derive(Clone)]
pub enum PowerPart {
    /// `Ψ2(v) = (1/r) ||v||_W^r`.
    Norm(PowerNorm),
    Custom(Arc<dyn SmoothFunctional>),
}

impl std::fmt::Debug for PowerPart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PowerPart::Norm(n) => f.debug_tuple("Norm").field(n).finish(),
            PowerPart::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PowerPart {
    fn functional(&self) -> Arc<dyn SmoothFunctional> {
        match self {
            PowerPart::Norm(n) => Arc::new(PowerFunctional { norm: n.clone() }),
            PowerPart::Custom(f) => f.clone(),
        }
    }

    /// Closed-form conjugate when the part is a weighted `L^r` power.
    pub fn closed_conjugate(&self) -> Option<SeparablePowerConjugate> {
        match self {
            PowerPart::Norm(PowerNorm {
                operator: PowerOperator::Identity { weights },
                exponent,
            }) => Some(SeparablePowerConjugate {
                weights: weights.clone(),
                exponent: *exponent,
            }),
            _ => None,
        }
    }
}

/// `Ψ(v) = ½<Av, v> (+ Ψ2(v))`.
#[derive(Clone, Debug)]
pub struct DissipationSpec {
    a: SpdOperator,
    mu: f64,
    upper: f64,
    power: Option<PowerPart>,
    power_fn: Option<Arc<dyn SmoothFunctional>>,
    mode: DissipationMode,
}

impl std::fmt::Debug for dyn SmoothFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SmoothFunctional(dim = {})", self.dim())
    }
}

impl DissipationSpec {
    /// Quadratic dissipation; `mu` and the upper constant are measured against `gram_v`.
    pub fn quadratic(a: DMatrix<f64>, gram_v: &SpdOperator) -> Result<Self> {
        let a = SpdOperator::new(a, "dissipation operator A")?;
        check_dim(gram_v.dim(), a.dim())?;
        let ev = gram_v.generalized_eigenvalues(a.matrix());
        let mu = ev[0];
        if !(mu > 0.0) {
            return Err(Error::NotPositiveDefinite {
                what: "dissipation operator A".into(),
            });
        }
        Ok(Self {
            a,
            mu,
            upper: ev[ev.len() - 1],
            power: None,
            power_fn: None,
            mode: DissipationMode::A,
        })
    }

    pub fn with_power(a: DMatrix<f64>, gram_v: &SpdOperator, power: PowerPart) -> Result<Self> {
        let mut spec = Self::quadratic(a, gram_v)?;
        if let PowerPart::Norm(n) = &power {
            if !(n.exponent > 1.0) {
                return Err(Error::invalid("power dissipation exponent must exceed 1"));
            }
        }
        let f = power.functional();
        check_dim(spec.dim(), f.dim())?;
        if f.value(&DVector::zeros(spec.dim())).abs() > 1e-14 {
            return Err(Error::invalid("power dissipation must vanish at zero"));
        }
        spec.power_fn = Some(f);
        spec.power = Some(power);
        spec.mode = DissipationMode::B;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn mode(&self) -> DissipationMode {
        self.mode
    }

    pub fn operator(&self) -> &SpdOperator {
        &self.a
    }

    /// Strong positivity: `<Av, v> >= mu ||v||_V^2`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Continuity: `<Av, v> <= upper ||v||_V^2`.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn power(&self) -> Option<&PowerPart> {
        self.power.as_ref()
    }

    pub fn psi1(&self, v: &DVector<f64>) -> f64 {
        0.5 * self.a.quad(v)
    }

    pub fn psi2(&self, v: &DVector<f64>) -> f64 {
        self.power_fn.as_ref().map_or(0.0, |f| f.value(v))
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        self.psi1(v) + self.psi2(v)
    }

    pub fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut g = self.a.apply(v);
        if let Some(f) = &self.power_fn {
            g += f.gradient(v);
        }
        g
    }

    pub fn hessian(&self, v: &DVector<f64>) -> Option<DMatrix<f64>> {
        match &self.power_fn {
            None => Some(self.a.matrix().clone()),
            Some(f) => f.hessian(v).map(|h| h + self.a.matrix()),
        }
    }
}

impl SmoothFunctional for DissipationSpec {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        DissipationSpec::value(self, x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DissipationSpec::gradient(self, x)
    }
    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        DissipationSpec::hessian(self, x)
    }
}

/// Value of a conjugate together with its maximizer (or optimal split).
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateResult {
    pub value: f64,
    pub witness: Option<StateVec>,
    pub iterations: usize,
    pub gap_estimate: f64,
}

pub fn psi_eval(spec: &DissipationSpec, v: &StateVec) -> Result<f64> {
    check_dim(spec.dim(), v.len())?;
    Ok(spec.value(v))
}

pub fn psi_grad(spec: &DissipationSpec, v: &StateVec) -> Result<DualVec> {
    check_dim(spec.dim(), v.len())?;
    Ok(DualVec::new(spec.gradient(v)))
}

/// `Ψ1*(ξ) = ½<ξ, A⁻¹ξ>`.
pub fn psi1_conjugate(spec: &DissipationSpec, xi: &DualVec) -> Result<ConjugateResult> {
    check_dim(spec.dim(), xi.len())?;
    let w = spec.a.solve(xi);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSolve {
            what: "A⁻¹ξ".into(),
            condition_estimate: spec.a.condition_estimate(),
        });
    }
    Ok(ConjugateResult {
        value: 0.5 * xi.dot(&w).max(0.0),
        witness: Some(StateVec::new(w)),
        iterations: 0,
        gap_estimate: 0.0,
    })
}

/// Conjugate of the full dissipation potential.
///
/// Closed form in mode (a); in mode (b) a numerical supremum warm-started at `A⁻¹ξ`.
pub fn psi_conjugate(spec: &DissipationSpec, xi: &DualVec, tol: f64) -> Result<ConjugateResult> {
    match spec.mode {
        DissipationMode::A => psi1_conjugate(spec, xi),
        DissipationMode::B => {
            check_dim(spec.dim(), xi.len())?;
            let start = spec.a.solve(xi);
            conjugate_numeric_with(
                spec,
                xi,
                &ConjugateOptions {
                    tol,
                    start: Some(&start),
                    preconditioner: Some(spec.a.matrix()),
                    ..Default::default()
                },
            )
        }
    }
}

/// Options for [`conjugate_numeric_with`].
#[derive(Clone, Debug)]
pub struct ConjugateOptions<'a> {
    pub tol: f64,
    pub max_iters: usize,
    pub start: Option<&'a DVector<f64>>,
    pub preconditioner: Option<&'a DMatrix<f64>>,
    /// Iterate norm beyond which the supremum is declared `+∞`.
    pub divergence_radius: f64,
}

impl Default for ConjugateOptions<'_> {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 500,
            start: None,
            preconditioner: None,
            divergence_radius: 1e8,
        }
    }
}

/// `F*(ξ) = sup_u <ξ, u> - F(u)`.
pub fn conjugate_numeric(
    f: &dyn SmoothFunctional,
    xi: &DualVec,
    tol: f64,
) -> Result<ConjugateResult> {
    conjugate_numeric_with(
        f,
        xi,
        &ConjugateOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn conjugate_numeric_with<F: SmoothFunctional + ?Sized>(
    f: &F,
    xi: &DualVec,
    opts: &ConjugateOptions<'_>,
) -> Result<ConjugateResult> {
    check_dim(f.dim(), xi.len())?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("conjugate tolerance must be positive"));
    }
    let obj = AsObjective {
        f,
        shift: xi.as_vector(),
    };
    let x0 = opts
        .start
        .cloned()
        .unwrap_or_else(|| DVector::zeros(f.dim()));
    let mopts = MinimizeOptions {
        tol: opts.tol,
        max_iters: opts.max_iters,
        preconditioner: opts.preconditioner,
        divergence_radius: Some(opts.divergence_radius),
        ..Default::default()
    };
    let m = match minimize(&obj, &x0, &mopts) {
        Ok(m) => m,
        Err(fail) => {
            return Err(match fail.reason {
                FailureReason::Diverged { norm } => Error::Unbounded { iterate_norm: norm },
                FailureReason::NonFiniteStart => Error::NonFinite {
                    what: "conjugate objective at start".into(),
                },
                FailureReason::IterationLimit => Error::IterationLimit {
                    what: "conjugate supremum".into(),
                    iterations: fail.best.iterations,
                    residual: fail.best.relative_residual(),
                },
            })
        }
    };
    let gap_estimate = newton_decrement(&obj, &m.x, &m.gradient);
    Ok(ConjugateResult {
        value: -m.value,
        witness: Some(StateVec::new(m.x)),
        iterations: m.iterations,
        gap_estimate,
    })
}

/// `½ gᵀ H⁻¹ g` when a Hessian is available, else `|g|²` as a crude surrogate.
fn newton_decrement<O: Objective + ?Sized>(obj: &O, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
    obj.hessian(x)
        .and_then(|h| h.cholesky())
        .map(|c| 0.5 * g.dot(&c.solve(g)))
        .unwrap_or_else(|| g.norm_squared())
        .max(0.0)
}

/// Second argument of the infimal-convolution formula.
#[derive(Clone, Copy)]
pub enum DualTerm<'a> {
    Smooth(&'a dyn SmoothFunctional),
    /// `0` at the origin, `+∞` elsewhere.
    ZeroIndicator,
}

/// `(F1 + F2)*(ξ) = min_η F1*(ξ - η) + F2*(η)`.
pub fn infimal_convolution_conjugate(
    f1_star: &dyn SmoothFunctional,
    f2_star: DualTerm<'_>,
    xi: &DualVec,
    tol: f64,
) -> Result<ConjugateResult> {
    check_dim(f1_star.dim(), xi.len())?;
    if !(tol > 0.0) {
        return Err(Error::invalid(
            "infimal convolution tolerance must be positive",
        ));
    }
    let f2 = match f2_star {
        DualTerm::ZeroIndicator => {
            return Ok(ConjugateResult {
                value: f1_star.value(xi),
                witness: Some(StateVec::zeros(xi.len())),
                iterations: 0,
                gap_estimate: 0.0,
            })
        }
        DualTerm::Smooth(f) => f,
    };
    check_dim(f1_star.dim(), f2.dim())?;
    struct Split<'a> {
        f1: &'a dyn SmoothFunctional,
        f2: &'a dyn SmoothFunctional,
        xi: &'a DVector<f64>,
    }
    impl Objective for Split<'_> {
        fn dim(&self) -> usize {
            self.xi.len()
        }
        fn value(&self, eta: &DVector<f64>) -> f64 {
            self.f1.value(&(self.xi - eta)) + self.f2.value(eta)
        }
        fn gradient(&self, eta: &DVector<f64>) -> DVector<f64> {
            self.f2.gradient(eta) - self.f1.gradient(&(self.xi - eta))
        }
        fn hessian(&self, eta: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(self.f1.hessian(&(self.xi - eta))? + self.f2.hessian(eta)?)
        }
    }
    let obj = Split {
        f1: f1_star,
        f2,
        xi: xi.as_vector(),
    };
    let opts = MinimizeOptions {
        tol,
        max_iters: 1000,
        ..Default::default()
    };
    let m =
        minimize(&obj, &(xi.as_vector() * 0.5), &opts).map_err(|fail| Error::IterationLimit {
            what: "infimal convolution split".into(),
            iterations: fail.best.iterations,
            residual: fail.best.relative_residual(),
        })?;
    let gap_estimate = newton_decrement(&obj, &m.x, &m.gradient);
    Ok(ConjugateResult {
        value: m.value,
        witness: Some(StateVec::new(m.x)),
        iterations: m.iterations,
        gap_estimate,
    })
}

/// Fenchel–Young defect `F(v) + F*(ξ) - <ξ, v>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FenchelYoungGap {
    /// Raw defect, negative only through round-off or an inexact conjugate.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub gap: f64,
}

pub fn fenchel_young_gap<F, G>(
    f: F,
    f_star: G,
    v: &StateVec,
    xi: &DualVec,
) -> Result<FenchelYoungGap>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> Result<f64>,
{
    check_dim(v.len(), xi.len())?;
    let raw = f(v) + f_star(xi)? - xi.pair(v);
    Ok(FenchelYoungGap {
        raw,
        gap: raw.max(0.0),
    })
}

/// Slack of `E(u) <= E(v) + <ξ, u - v> + λ ||u - v||²` at one probe.
pub fn subgradient_slack<E, N>(
    energy: &E,
    u: &DVector<f64>,
    xi: &DVector<f64>,
    lambda: f64,
    norm: &N,
    v: &DVector<f64>,
) -> f64
where
    E: Fn(&DVector<f64>) -> f64 + ?Sized,
    N: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    let d = u - v;
    let n = norm(&d);
    energy(v) + xi.dot(&d) + lambda * n * n - energy(u)
}

/// Random probes `v = u + s d` with `|d_i| <= 1` and `s` uniform in `[0, radius]`.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSpec {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            radius: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgradientCheck {
    pub passed: bool,
    /// Most negative slack over all probes (or the smallest slack if none is negative).
    pub worst_slack: f64,
    pub worst_probe: Option<DVector<f64>>,
}

/// λ-convex subgradient inequality at `samples` random probes around `u`.
///
/// A probe fails when its slack is below `-1e-10 (1 + |E(u)|)`.
pub fn lambda_subgradient_check<E, N>(
    energy: &E,
    u: &StateVec,
    xi: &DualVec,
    lambda: f64,
    norm: &N,
    probes: &ProbeSpec,
) -> Result<SubgradientCheck>
where
    E: Fn(&DVector<f64>) -> f64 + ?Sized,
    N: Fn(&DVector<f64>) -> f64 + ?Sized,
{
    check_dim(u.len(), xi.len())?;
    if probes.samples == 0 {
        return Err(Error::invalid(
            "lambda_subgradient_check needs at least one sample",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probes.seed);
    let tol = 1e-10 * (1.0 + energy(u).abs());
    let mut worst = f64::INFINITY;
    let mut worst_probe = None;
    for _ in 0..probes.samples {
        let s = rng.random_range(0.0..=probes.radius);
        let d = DVector::from_fn(u.len(), |_, _| rng.random_range(-1.0..=1.0));
        let v = u.as_vector() + d * s;
        let slack = subgradient_slack(energy, u, xi, lambda, norm, &v);
        if slack < worst {
            worst = slack;
            worst_probe = Some(v);
        }
    }
    Ok(SubgradientCheck {
        passed: worst >= -tol,
        worst_slack: worst,
        worst_probe,
    })
}

/// Convenience: the L^r-type `Ψ2` for a gradient operator, `(1/r)||∇v||^r`.
pub fn gradient_power_part(gradient: Arc<GradientOperator>, r: f64) -> Result<PowerPart> {
    Ok(PowerPart::Norm(PowerNorm::sobolev(gradient, r)?))
}
