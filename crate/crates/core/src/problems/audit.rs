//! Randomized audit of the structural inequalities a system is assumed to satisfy.

use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convex::{lambda_subgradient_check, psi_conjugate, ProbeSpec};
use crate::error::{Error, Result};
use crate::spaces::{DualTag, DualVec, SpaceTag, StateVec};
use crate::stepper::SystemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AuditCheck {
    /// `E_t(u) >= 0`.
    LowerBound,
    /// `|∂_t E_t(u)| <= C1 E_t(u)`.
    PowerControl,
    /// `E_t(u) <= exp(C1 |t - s|) E_s(u)`.
    EnergyComparability,
    /// `E(w) <= E(u) + <ξ, w - u> + λ||w - u||²_V` at random probes.
    LambdaConvexity,
    /// `||ξ||_{U*}^σ <= Ĉ (1 + E + ||u||_U)`.
    SubgradientControl,
    /// `cΨ*(-B/c) <= β (1 + E + |v|² + Ψ(v)^ν)`.
    PerturbationGrowth,
    /// `Ψ(v) >= (μ/2)||v||²_V`.
    DissipationLower,
    /// `Ψ1(v) <= (upper/2)||v||²_V`.
    DissipationUpper,
}

impl AuditCheck {
    pub fn label(self) -> &'static str {
        match self {
            AuditCheck::LowerBound => "energy lower bound",
            AuditCheck::PowerControl => "power control",
            AuditCheck::EnergyComparability => "energy comparability",
            AuditCheck::LambdaConvexity => "lambda-convexity",
            AuditCheck::SubgradientControl => "subgradient control",
            AuditCheck::PerturbationGrowth => "perturbation growth",
            AuditCheck::DissipationLower => "dissipation lower growth",
            AuditCheck::DissipationUpper => "dissipation upper growth",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditStatus {
    Pass,
    Fail,
    /// No constant configured; the measured value is reported only.
    Reported,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub check: AuditCheck,
    /// Worst value over the samples: a minimum for lower bounds, a maximal ratio otherwise.
    pub measured: f64,
    pub bound: Option<f64>,
    pub status: AuditStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub system: String,
    pub samples: usize,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn entry(&self, check: AuditCheck) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    pub fn status(&self, check: AuditCheck) -> Option<AuditStatus> {
        self.entry(check).map(|e| e.status)
    }

    /// `true` when no entry failed.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != AuditStatus::Fail)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "assumption audit: {} ({} samples)",
            self.system, self.samples
        )?;
        for e in &self.entries {
            let status = match e.status {
                AuditStatus::Pass => "PASS",
                AuditStatus::Fail => "FAIL",
                AuditStatus::Reported => "REPORTED",
            };
            match e.bound {
                Some(b) => writeln!(
                    f,
                    "{status:9} {:26} measured {:e} bound {:e}",
                    e.check.label(),
                    e.measured,
                    b
                )?,
                None => writeln!(
                    f,
                    "{status:9} {:26} measured {:e}",
                    e.check.label(),
                    e.measured
                )?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditConfig {
    pub samples: usize,
    pub seed: u64,
    /// Samples `u`, `v` have `V`-norm uniform in `[0, radius]`.
    pub radius: f64,
    /// Sample times are uniform in `[0, horizon]`.
    pub horizon: f64,
    /// Number of sample points at which the λ-convexity probes run.
    pub lambda_points: usize,
    pub lambda_probes: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            radius: 2.0,
            horizon: 1.0,
            lambda_points: 10,
            lambda_probes: 100,
        }
    }
}

struct Sample {
    t: f64,
    s: f64,
    u: StateVec,
    v: StateVec,
}

fn random_in_ball(system: &SystemSpec, radius: f64, rng: &mut ChaCha8Rng) -> StateVec {
    let n = system.dim();
    let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let norm = system.norms.v.quad(&d).sqrt();
    let s = rng.random_range(0.0..=radius);
    StateVec::new(if norm > 0.0 { d * (s / norm) } else { d })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn upper_entry(check: AuditCheck, measured: f64, bound: Option<f64>) -> AuditEntry {
    let status = match bound {
        None => AuditStatus::Reported,
        Some(b) if measured <= b * (1.0 + 1e-9) + 1e-12 => AuditStatus::Pass,
        Some(_) => AuditStatus::Fail,
    };
    AuditEntry {
        check,
        measured,
        bound,
        status,
    }
}

fn lower_entry(check: AuditCheck, measured: f64, bound: f64) -> AuditEntry {
    AuditEntry {
        check,
        measured,
        bound: Some(bound),
        status: if measured >= bound * (1.0 - 1e-9) - 1e-12 {
            AuditStatus::Pass
        } else {
            AuditStatus::Fail
        },
    }
}

/// Samples `(t, u, v)` and measures the worst constant of every structural inequality.
///
/// Checks whose constant the system does not carry are reported without a verdict.
pub fn assumption_audit(system: &SystemSpec, config: &AuditConfig) -> Result<AuditReport> {
    if config.samples == 0 {
        return Err(Error::invalid("audit needs at least one sample"));
    }
    if !(config.radius > 0.0 && config.horizon >= 0.0) {
        return Err(Error::invalid(
            "audit radius must be positive and horizon nonnegative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples: Vec<Sample> = (0..config.samples)
        .map(|_| Sample {
            t: rng.random_range(0.0..=config.horizon),
            s: rng.random_range(0.0..=config.horizon),
            u: random_in_ball(system, config.radius, &mut rng),
            v: random_in_ball(system, config.radius, &mut rng),
        })
        .collect();

    let e = &system.energy;
    let g = &system.growth;
    let norms = &system.norms;
    let diss = &system.dissipation;

    let mut min_energy = f64::INFINITY;
    let mut power = 0.0f64;
    let mut comparability = 0.0f64;
    let mut subgrad = 0.0f64;
    let mut growth = 0.0f64;
    let mut psi_lower = f64::INFINITY;
    let mut psi_upper = 0.0f64;

    for smp in &samples {
        let et = e.value(smp.t, &smp.u);
        min_energy = min_energy.min(et);
        power = power.max(ratio(e.time_derivative(smp.t, &smp.u).abs(), et));
        let es = e.value(smp.s, &smp.u);
        if et > 0.0 && es > 0.0 && smp.t != smp.s {
            comparability = comparability.max((et / es).ln().abs() / (smp.t - smp.s).abs());
        } else if (et <= 0.0) != (es <= 0.0) {
            comparability = f64::INFINITY;
        }

        let xi = DualVec::new(e.gradient(smp.t, &smp.u));
        let sigma = g.subgradient.map_or(1.0, |(_, s)| s);
        let unorm = norms.norm(SpaceTag::U, &smp.u)?;
        let xnorm = norms.dual_norm(DualTag::UStar, &xi)?;
        subgrad = subgrad.max(ratio(xnorm.powf(sigma), 1.0 + et + unorm));

        if system.has_perturbation {
            let b = system.perturbation.eval(smp.t, &smp.u, &smp.v);
            let arg = DualVec::new(-b / g.c);
            let conj = psi_conjugate(diss, &arg, 1e-10)?;
            let psi = diss.value(&smp.v);
            let den = 1.0 + et + norms.h.quad(&smp.v) + psi.max(0.0).powf(g.nu);
            growth = growth.max(ratio(g.c * conj.value, den));
        }

        let vv = norms.v.quad(&smp.v);
        if vv > 0.0 {
            psi_lower = psi_lower.min(diss.value(&smp.v) / vv);
            psi_upper = psi_upper.max(diss.psi1(&smp.v) / vv);
        }
    }

    let mut lambda_worst = f64::INFINITY;
    let mut lambda_ok = true;
    for (k, smp) in samples.iter().take(config.lambda_points).enumerate() {
        let t = smp.t;
        let xi = DualVec::new(e.gradient(t, &smp.u));
        let probes = ProbeSpec {
            samples: config.lambda_probes,
            radius: 1.0,
            seed: config.seed.wrapping_add(k as u64 + 1),
        };
        let check = lambda_subgradient_check(
            &|x: &DVector<f64>| e.value(t, x),
            &smp.u,
            &xi,
            system.lambda,
            &|d: &DVector<f64>| norms.v.quad(d).max(0.0).sqrt(),
            &probes,
        )?;
        lambda_ok &= check.passed;
        lambda_worst = lambda_worst.min(check.worst_slack);
    }

    let mut entries = vec![
        lower_entry(AuditCheck::LowerBound, min_energy, 0.0),
        upper_entry(AuditCheck::PowerControl, power, g.time_control),
        upper_entry(
            AuditCheck::EnergyComparability,
            comparability,
            g.time_control,
        ),
        AuditEntry {
            check: AuditCheck::LambdaConvexity,
            measured: lambda_worst,
            bound: Some(0.0),
            status: if lambda_ok {
                AuditStatus::Pass
            } else {
                AuditStatus::Fail
            },
        },
        upper_entry(
            AuditCheck::SubgradientControl,
            subgrad,
            g.subgradient.map(|(c, _)| c),
        ),
    ];
    if system.has_perturbation {
        entries.push(upper_entry(AuditCheck::PerturbationGrowth, growth, g.beta));
    }
    entries.push(lower_entry(
        AuditCheck::DissipationLower,
        psi_lower,
        0.5 * diss.mu(),
    ));
    entries.push(upper_entry(
        AuditCheck::DissipationUpper,
        psi_upper,
        Some(0.5 * diss.upper()),
    ));

    Ok(AuditReport {
        system: system.name.clone(),
        samples: config.samples,
        entries,
    })
}
