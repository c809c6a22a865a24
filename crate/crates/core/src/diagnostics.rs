//! Post-processing of completed trajectories: time interpolants, the discrete
//! energy-dissipation inequality, a-priori bounds, shift gaps and convergence tables.
//!
//! Every function here is a pure reader of a [`Trajectory`]. Time integrals of
//! piecewise-constant or piecewise-linear integrands are evaluated exactly from the
//! node values; only the conjugate term carries a solver tolerance, and that
//! tolerance is added to the EDI acceptance threshold.

use nalgebra::DVector;
use thiserror::Error as ThisError;

use crate::error::{Error, Result};
use crate::spaces::{DualTag, DualVec, SpaceTag, StateVec};
use crate::stepper::{run, SolverConfig, SystemSpec, Trajectory};

// ---------------------------------------------------------------------------
// Interpolants

/// Which time reconstruction of the discrete values to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interpolant {
    /// Right-continuous step: `U^n` on `(t_{n-1}, t_n]`.
    UBar,
    /// Left step: `U^{n-1}` on `[t_{n-1}, t_n)`.
    UUnder,
    /// Piecewise linear through the nodes.
    UHat,
    VBar,
    VUnder,
    VHat,
    /// `ξ^n` on `[t_{n-1}, t_n)`.
    Xi,
    /// `f̄^n` on `[t_{n-1}, t_n)`.
    Force,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InterpolantValue {
    State(StateVec),
    Dual(DualVec),
}

impl InterpolantValue {
    pub fn as_vector(&self) -> &DVector<f64> {
        match self {
            InterpolantValue::State(s) => s.as_vector(),
            InterpolantValue::Dual(d) => d.as_vector(),
        }
    }

    pub fn into_state(self) -> Option<StateVec> {
        match self {
            InterpolantValue::State(s) => Some(s),
            InterpolantValue::Dual(_) => None,
        }
    }
}

/// Read-only view of a trajectory as functions of time.
#[derive(Clone, Copy, Debug)]
pub struct Interpolants<'a> {
    traj: &'a Trajectory,
}

impl<'a> Interpolants<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        Self { traj }
    }

    pub fn trajectory(&self) -> &'a Trajectory {
        self.traj
    }

    /// Final node time `t_N`.
    pub fn horizon(&self) -> f64 {
        self.traj.last().t
    }

    fn check(&self, t: f64) -> Result<f64> {
        let end = self.horizon();
        let slack = 1e-12 * end.max(1.0);
        if !(t >= -slack && t <= end + slack) || t.is_nan() {
            return Err(Error::OutOfRange { t, horizon: end });
        }
        Ok(t.clamp(0.0, end))
    }

    /// Index `n` with `t ∈ (t_{n-1}, t_n]`, and `0` at `t = 0`.
    fn upper_index(&self, t: f64) -> usize {
        self.traj.records.partition_point(|r| r.t < t)
    }

    /// Index `k` with `t ∈ [t_k, t_{k+1})`, and `N` at `t = t_N`.
    fn lower_index(&self, t: f64) -> usize {
        self.traj
            .records
            .partition_point(|r| r.t <= t)
            .saturating_sub(1)
    }

    /// `t̄_τ(t)`: the right node of the interval containing `t`.
    pub fn t_bar(&self, t: f64) -> Result<f64> {
        let t = self.check(t)?;
        Ok(self.traj.records[self.upper_index(t)].t)
    }

    /// `t̲_τ(t)`: the left node of the interval containing `t`.
    pub fn t_under(&self, t: f64) -> Result<f64> {
        let t = self.check(t)?;
        Ok(self.traj.records[self.lower_index(t)].t)
    }

    pub fn eval(&self, which: Interpolant, t: f64) -> Result<InterpolantValue> {
        let t = self.check(t)?;
        let recs = &self.traj.records;
        let last = recs.len() - 1;
        let state = |v: &DVector<f64>| InterpolantValue::State(StateVec::new(v.clone()));
        let hat = |pick: fn(&crate::stepper::StepRecord) -> &DVector<f64>| {
            let k = self.lower_index(t);
            if k == last {
                return state(pick(&recs[k]));
            }
            let (a, b) = (&recs[k], &recs[k + 1]);
            let theta = (t - a.t) / (b.t - a.t);
            InterpolantValue::State(StateVec::new(pick(a) * (1.0 - theta) + pick(b) * theta))
        };
        // Right-open families take the value of the step that ends the interval.
        let ahead = || {
            let k = self.lower_index(t);
            if k == last {
                k
            } else {
                k + 1
            }
        };
        Ok(match which {
            Interpolant::UBar => state(&recs[self.upper_index(t)].u),
            Interpolant::VBar => state(&recs[self.upper_index(t)].v),
            Interpolant::UUnder => state(&recs[self.lower_index(t)].u),
            Interpolant::VUnder => state(&recs[self.lower_index(t)].v),
            Interpolant::UHat => hat(|r| r.u.as_vector()),
            Interpolant::VHat => hat(|r| r.v.as_vector()),
            Interpolant::Xi => InterpolantValue::Dual(recs[ahead()].xi.clone()),
            Interpolant::Force => state(&recs[ahead()].force),
        })
    }

    pub fn state(&self, which: Interpolant, t: f64) -> Result<StateVec> {
        match self.eval(which, t)? {
            InterpolantValue::State(s) => Ok(s),
            InterpolantValue::Dual(_) => Err(Error::invalid(format!(
                "{which:?} is a dual-valued interpolant"
            ))),
        }
    }
}

pub fn eval_interpolant(
    interp: &Interpolants<'_>,
    which: Interpolant,
    t: f64,
) -> Result<InterpolantValue> {
    interp.eval(which, t)
}

// ---------------------------------------------------------------------------
// Energy-dissipation inequality

/// One `(s, t)` row of the EDI audit.
#[derive(Clone, Debug, PartialEq)]
pub struct EdiPair {
    pub s: f64,
    pub t: f64,
    /// Node indices the pair snapped to.
    pub from: usize,
    pub to: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Slack with the `λ` correction halved.
    pub slack_half_lambda: f64,
    /// Accumulated accuracy bound of the conjugate values on the pair.
    pub quadrature_error: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdiReport {
    pub pairs: Vec<EdiPair>,
    /// Slack of the one-step inequality on `[t_{n-1}, t_n]`, `n = 1..=N`.
    pub step_slacks: Vec<f64>,
    pub step_slacks_half_lambda: Vec<f64>,
    /// `1 + max_n (½|V^n|² + E(U^n))`.
    pub scale: f64,
    /// Largest relative mismatch between a pair slack and the sum of its step slacks.
    pub telescoping_defect: f64,
}

impl EdiReport {
    pub fn worst(&self) -> Option<&EdiPair> {
        self.pairs
            .iter()
            .min_by(|a, b| (a.slack + a.tolerance).total_cmp(&(b.slack + b.tolerance)))
    }

    pub fn passed(&self) -> bool {
        self.pairs.iter().all(|p| p.slack >= -p.tolerance)
    }

    pub fn verify(&self) -> Result<()> {
        match self.pairs.iter().find(|p| p.slack < -p.tolerance) {
            None => Ok(()),
            Some(p) => Err(Error::EdiViolation {
                s: p.s,
                t: p.t,
                slack: p.slack,
                tolerance: p.tolerance,
            }),
        }
    }
}

/// Consecutive node pairs `(t_{n-1}, t_n)`.
pub fn consecutive_pairs(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.records.windows(2).map(|w| (w[0].t, w[1].t)).collect()
}

/// `(0, t_n)` for every node.
pub fn initial_pairs(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.records.iter().skip(1).map(|r| (0.0, r.t)).collect()
}

struct StepTerms {
    kinetic_energy: Vec<f64>,
    dissipation: Vec<f64>,
    power: Vec<f64>,
    work: Vec<f64>,
    lambda_term: Vec<f64>,
    conj_error: Vec<f64>,
}

fn step_terms(traj: &Trajectory) -> StepTerms {
    let sys = &traj.system;
    let tau = traj.tau;
    let recs = &traj.records;
    let n = recs.len();
    let mut terms = StepTerms {
        kinetic_energy: (0..n).map(|k| traj.total_energy(k)).collect(),
        dissipation: vec![0.0; n],
        power: vec![0.0; n],
        work: vec![0.0; n],
        lambda_term: vec![0.0; n],
        conj_error: vec![0.0; n],
    };
    for k in 1..n {
        let (prev, cur) = (&recs[k - 1], &recs[k]);
        terms.dissipation[k] = tau * (cur.psi_value + cur.psi_star_value);
        terms.power[k] = sys.energy.value(cur.t, &prev.u) - sys.energy.value(prev.t, &prev.u);
        terms.work[k] = tau * cur.drive.pair(&cur.v);
        terms.lambda_term[k] = tau * tau * sys.norms.v.quad(&cur.v);
        terms.conj_error[k] = tau * cur.psi_star_error;
    }
    terms
}

fn prefix(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Evaluates the discrete EDI on each requested pair without gating.
///
/// Pair endpoints snap to nodes through `t̄_τ`. The slack is `rhs - lhs` with
/// `lhs = ½|V(t)|² + E_t(U(t)) + ∫_s^t (Ψ + Ψ*)` and
/// `rhs = ½|V(s)|² + E_s(U(s)) + ∫ ∂_r E(U̲) + ∫ ⟨S, V̄⟩ + λτ ∫ ||V̄||²_V`.
pub fn edi_report(traj: &Trajectory, pairs: &[(f64, f64)]) -> Result<EdiReport> {
    let interp = Interpolants::new(traj);
    let lambda = traj.system.lambda;
    let terms = step_terms(traj);
    let scale = 1.0
        + terms
            .kinetic_energy
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));

    let step = |k: usize, lam: f64| {
        let rhs = terms.kinetic_energy[k - 1]
            + terms.power[k]
            + terms.work[k]
            + lam * terms.lambda_term[k];
        let lhs = terms.kinetic_energy[k] + terms.dissipation[k];
        rhs - lhs
    };
    let nsteps = traj.records.len() - 1;
    let step_slacks: Vec<f64> = (1..=nsteps).map(|k| step(k, lambda)).collect();
    let step_slacks_half_lambda: Vec<f64> = (1..=nsteps).map(|k| step(k, 0.5 * lambda)).collect();

    let diss = prefix(&terms.dissipation);
    let power = prefix(&terms.power);
    let work = prefix(&terms.work);
    let lam = prefix(&terms.lambda_term);
    let qerr = prefix(&terms.conj_error);

    let mut out = Vec::with_capacity(pairs.len());
    let mut telescoping_defect = 0.0f64;
    for &(s, t) in pairs {
        if !(s < t) {
            return Err(Error::invalid(format!(
                "EDI pair needs s < t, got ({s}, {t})"
            )));
        }
        let s = interp.check(s)?;
        let t = interp.check(t)?;
        let (i, j) = (interp.upper_index(s), interp.upper_index(t));
        let lhs = terms.kinetic_energy[j] + diss[j] - diss[i];
        let base = terms.kinetic_energy[i] + (power[j] - power[i]) + (work[j] - work[i]);
        let lam_int = lam[j] - lam[i];
        let rhs = base + lambda * lam_int;
        let slack = rhs - lhs;
        let slack_half = base + 0.5 * lambda * lam_int - lhs;
        let quadrature_error = qerr[j] - qerr[i];

        let summed: f64 = step_slacks[i..j].iter().sum();
        let defect = (slack - summed).abs() / (1.0 + lhs.abs().max(rhs.abs()));
        telescoping_defect = telescoping_defect.max(defect);

        out.push(EdiPair {
            s,
            t,
            from: i,
            to: j,
            lhs,
            rhs,
            slack,
            slack_half_lambda: slack_half,
            quadrature_error,
            tolerance: 1e-8 * scale + quadrature_error,
        });
    }
    Ok(EdiReport {
        pairs: out,
        step_slacks,
        step_slacks_half_lambda,
        scale,
        telescoping_defect,
    })
}

/// [`edi_report`] followed by [`EdiReport::verify`].
pub fn edi_check(traj: &Trajectory, pairs: &[(f64, f64)]) -> Result<EdiReport> {
    let report = edi_report(traj, pairs)?;
    report.verify()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// A-priori quantities

/// The four interpolant gaps, as suprema over nodes and interval midpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterpolantGaps {
    /// `sup ||U̲ - Ū||_V`.
    pub u_under_bar: f64,
    /// `sup ||Û - Ū||_V`.
    pub u_hat_bar: f64,
    /// `sup ||V̄ - V̂||_{U*}`.
    pub v_bar_hat: f64,
    /// `sup ||V̲ - V̄||_{U*}`.
    pub v_under_bar: f64,
}

impl InterpolantGaps {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.u_under_bar,
            self.u_hat_bar,
            self.v_bar_hat,
            self.v_under_bar,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AprioriReport {
    /// `sup |V̄(t)|_H`.
    pub m_velocity: f64,
    /// `sup E_t(Ū(t))`.
    pub m_energy: f64,
    /// `sup |∂_t E_t(U̲(t))|`.
    pub m_power: f64,
    /// `∫ Ψ(V̄) + Ψ*(S - V̂' - ξ)`.
    pub dissipation_integral: f64,
    pub gaps: InterpolantGaps,
}

/// Sample times: every node and every interval midpoint.
fn sample_times(traj: &Trajectory) -> Vec<f64> {
    let mut ts = Vec::with_capacity(2 * traj.records.len());
    for w in traj.records.windows(2) {
        ts.push(w[0].t);
        ts.push(0.5 * (w[0].t + w[1].t));
    }
    ts.push(traj.last().t);
    ts
}

pub fn apriori_report(traj: &Trajectory) -> Result<AprioriReport> {
    let sys = &traj.system;
    let norms = &sys.norms;
    let interp = Interpolants::new(traj);
    let dual_u = |x: &StateVec| norms.dual_norm(DualTag::UStar, &norms.riesz_h(x));
    let diff = |a: StateVec, b: StateVec| StateVec::new(a.as_vector() - b.as_vector());

    let mut rep = AprioriReport {
        m_velocity: 0.0,
        m_energy: f64::NEG_INFINITY,
        m_power: 0.0,
        dissipation_integral: traj
            .records
            .iter()
            .skip(1)
            .map(|r| traj.tau * (r.psi_value + r.psi_star_value))
            .sum(),
        gaps: InterpolantGaps::default(),
    };
    for t in sample_times(traj) {
        let ubar = interp.state(Interpolant::UBar, t)?;
        let uunder = interp.state(Interpolant::UUnder, t)?;
        let vbar = interp.state(Interpolant::VBar, t)?;
        rep.m_velocity = rep.m_velocity.max(norms.norm(SpaceTag::H, &vbar)?);
        rep.m_energy = rep.m_energy.max(sys.energy.value(t, &ubar));
        rep.m_power = rep
            .m_power
            .max(sys.energy.time_derivative(t, &uunder).abs());

        let g = &mut rep.gaps;
        g.u_under_bar = g
            .u_under_bar
            .max(norms.norm(SpaceTag::V, &diff(uunder, ubar.clone()))?);
        g.u_hat_bar = g.u_hat_bar.max(norms.norm(
            SpaceTag::V,
            &diff(interp.state(Interpolant::UHat, t)?, ubar),
        )?);
        g.v_bar_hat = g.v_bar_hat.max(dual_u(&diff(
            vbar.clone(),
            interp.state(Interpolant::VHat, t)?,
        ))?);
        g.v_under_bar = g
            .v_under_bar
            .max(dual_u(&diff(interp.state(Interpolant::VUnder, t)?, vbar))?);
    }
    Ok(rep)
}

/// Discrete and continuous forcing energies `Σ τ|f̄^n|²_H` and `∫_0^T |f|²_H`.
///
/// Interval averaging is an `H`-contraction, so the first never exceeds the
/// second beyond quadrature error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForcingStability {
    pub discrete: f64,
    pub continuous: f64,
}

pub fn forcing_stability(traj: &Trajectory) -> ForcingStability {
    const SUB: usize = 8;
    let sys = &traj.system;
    let h = &sys.norms.h;
    let mut discrete = 0.0;
    let mut continuous = 0.0;
    for w in traj.records.windows(2) {
        discrete += traj.tau * h.quad(&w[1].force);
        let dt = (w[1].t - w[0].t) / SUB as f64;
        for k in 0..SUB {
            let mid = w[0].t + (k as f64 + 0.5) * dt;
            for (x, wt) in GAUSS3 {
                continuous += 0.5 * dt * wt * h.quad(&sys.forcing.eval(mid + 0.5 * dt * x));
            }
        }
    }
    ForcingStability {
        discrete,
        continuous,
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

// ---------------------------------------------------------------------------
// Shift gap

/// Norm in which [`shift_gap`] measures `σ_h Ū - Ū`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GapNorm {
    /// `L²(0, T-h; V)`.
    L2V,
    /// `L^r(0, T-h; W)`.
    LrW(f64),
    /// `L²(0, T-h; V) ∩ L^r(0, T-h; W)` with the sum norm.
    Intersection(f64),
}

/// `||Ū(· + h) - Ū||` over `[0, T - h]`, integrated exactly over the common
/// refinement of the two step functions.
pub fn shift_gap(traj: &Trajectory, h: f64, norm: GapNorm) -> Result<f64> {
    let interp = Interpolants::new(traj);
    let end = interp.horizon();
    if !(h > 0.0 && h < end) {
        return Err(Error::invalid(format!(
            "shift must lie in (0, {end}), got {h}"
        )));
    }
    let stop = end - h;
    let mut cuts: Vec<f64> = traj
        .records
        .iter()
        .flat_map(|r| [r.t, r.t - h])
        .filter(|&c| c > 0.0 && c < stop)
        .collect();
    cuts.push(0.0);
    cuts.push(stop);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * end);

    let norms = &traj.system.norms;
    let (mut l2, mut lr) = (0.0, 0.0);
    let r = match norm {
        GapNorm::L2V => None,
        GapNorm::LrW(r) | GapNorm::Intersection(r) => {
            if !(r > 1.0) {
                return Err(Error::invalid("shift-gap exponent must exceed 1"));
            }
            Some(r)
        }
    };
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let d = StateVec::new(
            interp.state(Interpolant::UBar, mid + h)?.as_vector()
                - interp.state(Interpolant::UBar, mid)?.as_vector(),
        );
        if !matches!(norm, GapNorm::LrW(_)) {
            l2 += len * norms.v.quad(&d);
        }
        if let Some(r) = r {
            lr += len * norms.norm(SpaceTag::W, &d)?.powf(r);
        }
    }
    Ok(match (norm, r) {
        (GapNorm::L2V, _) => l2.sqrt(),
        (GapNorm::LrW(_), Some(r)) => lr.powf(1.0 / r),
        (GapNorm::Intersection(_), Some(r)) => l2.sqrt() + lr.powf(1.0 / r),
        _ => unreachable!("exponent validated above"),
    })
}

// ---------------------------------------------------------------------------
// Convergence

/// Closed-form solution used as a convergence oracle.
pub trait ExactSolution: Send + Sync {
    fn state(&self, t: f64) -> DVector<f64>;
    fn velocity(&self, t: f64) -> DVector<f64>;
}

#[derive(Clone, Copy)]
pub enum Reference<'a> {
    Trajectory(&'a Trajectory),
    Exact(&'a dyn ExactSolution),
}

/// Errors of one coarse run against a reference.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrajectoryErrors {
    /// `sup_t |Û - u|_H`.
    pub err_ch: f64,
    /// `||Û - u||_{L²(0,T;V)}`.
    pub err_l2v: f64,
    /// `sup_t |V̂ - u'|_H`.
    pub err_v_ch: f64,
}

/// Errors of `coarse` against `reference`.
///
/// Against a trajectory both reconstructions are piecewise linear, so the
/// maxima sit on the union of the two node sets and the `L²` integral is exact.
/// Against a closed form the maxima are taken over the coarse nodes and the
/// integral uses 3-point Gauss quadrature per step.
pub fn trajectory_errors(
    coarse: &Trajectory,
    reference: Reference<'_>,
) -> Result<TrajectoryErrors> {
    let norms = &coarse.system.norms;
    let ci = Interpolants::new(coarse);
    let end = ci.horizon();
    let mut out = TrajectoryErrors::default();
    match reference {
        Reference::Trajectory(fine) => {
            let fi = Interpolants::new(fine);
            if (fi.horizon() - end).abs() > 1e-9 * end.max(1.0) {
                return Err(Error::invalid(
                    "reference trajectory has a different horizon",
                ));
            }
            if fine.system.dim() != coarse.system.dim() {
                return Err(Error::DimensionMismatch {
                    expected: coarse.system.dim(),
                    found: fine.system.dim(),
                });
            }
            let mut ts: Vec<f64> = coarse
                .records
                .iter()
                .chain(fine.records.iter())
                .map(|r| r.t.min(end))
                .collect();
            ts.sort_by(f64::total_cmp);
            ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * end);
            let err_at = |which, t| -> Result<DVector<f64>> {
                Ok(ci.state(which, t)?.into_inner() - fi.state(which, t)?.into_inner())
            };
            let mut prev: Option<(f64, DVector<f64>)> = None;
            for &t in &ts {
                let e = err_at(Interpolant::UHat, t)?;
                let ev = err_at(Interpolant::VHat, t)?;
                out.err_ch = out.err_ch.max(norms.h.quad(&e).max(0.0).sqrt());
                out.err_v_ch = out.err_v_ch.max(norms.h.quad(&ev).max(0.0).sqrt());
                if let Some((a, ea)) = &prev {
                    let cross = ea.dot(&norms.v.apply(&e));
                    out.err_l2v += (t - a) / 3.0 * (norms.v.quad(ea) + cross + norms.v.quad(&e));
                }
                prev = Some((t, e));
            }
        }
        Reference::Exact(exact) => {
            for r in &coarse.records {
                let e = r.u.as_vector() - exact.state(r.t);
                let ev = r.v.as_vector() - exact.velocity(r.t);
                out.err_ch = out.err_ch.max(norms.h.quad(&e).max(0.0).sqrt());
                if r.index > 0 {
                    out.err_v_ch = out.err_v_ch.max(norms.h.quad(&ev).max(0.0).sqrt());
                }
            }
            // At t = 0 the velocity reconstruction equals v0 exactly.
            let ev0 = coarse.v0.as_vector() - exact.velocity(0.0);
            out.err_v_ch = out.err_v_ch.max(norms.h.quad(&ev0).max(0.0).sqrt());
            for w in coarse.records.windows(2) {
                let (a, b) = (w[0].t, w[1].t);
                for (x, wt) in GAUSS3 {
                    let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    let e = ci.state(Interpolant::UHat, t)?.into_inner() - exact.state(t);
                    out.err_l2v += 0.5 * (b - a) * wt * norms.v.quad(&e);
                }
            }
        }
    }
    out.err_l2v = out.err_l2v.max(0.0).sqrt();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub tau: f64,
    pub errors: TrajectoryErrors,
    /// `log(e_{k-1}/e_k) / log(τ_{k-1}/τ_k)` on the `C([0,T];H)` error.
    pub order_estimate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Step of the reference run, absent for a closed-form reference.
    pub reference_tau: Option<f64>,
}

impl ConvergenceTable {
    fn push(&mut self, tau: f64, errors: TrajectoryErrors) {
        let order_estimate = self.rows.last().and_then(|prev| {
            let (e0, e1) = (prev.errors.err_ch, errors.err_ch);
            (e0 > 0.0 && e1 > 0.0 && prev.tau != tau)
                .then(|| (e0 / e1).ln() / (prev.tau / tau).ln())
        });
        self.rows.push(ConvergenceRow {
            tau,
            errors,
            order_estimate,
        });
    }
}

/// Builds the table from already computed runs, in the given order.
pub fn convergence_table(
    trajs: &[Trajectory],
    reference: Reference<'_>,
) -> Result<ConvergenceTable> {
    let mut table = ConvergenceTable {
        rows: Vec::with_capacity(trajs.len()),
        reference_tau: match reference {
            Reference::Trajectory(r) => Some(r.tau),
            Reference::Exact(_) => None,
        },
    };
    for traj in trajs {
        table.push(traj.tau, trajectory_errors(traj, reference)?);
    }
    Ok(table)
}

/// How the reference of a [`convergence_study`] is obtained.
#[derive(Clone, Copy)]
pub enum ReferenceSpec<'a> {
    /// A run of the same scheme at this step.
    Refined(f64),
    Exact(&'a dyn ExactSolution),
}

#[derive(Debug, ThisError)]
#[error("convergence study aborted: {source}")]
pub struct StudyFailure {
    /// Rows completed before the failure.
    pub partial: ConvergenceTable,
    #[source]
    pub source: Error,
}

/// Checks a step list for a study: nonempty, positive and strictly decreasing.
pub fn validate_taus(taus: &[f64], reference: Option<f64>) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::invalid("step list is empty"));
    }
    if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("steps must be positive"));
    }
    if taus.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("steps must be strictly decreasing"));
    }
    if let Some(r) = reference {
        let min = taus[taus.len() - 1];
        if !(r > 0.0 && r < min / 4.0) {
            return Err(Error::invalid(format!(
                "reference step {r} must be below a quarter of the smallest step {min}"
            )));
        }
    }
    Ok(())
}

/// Runs the scheme at each step of `taus` (horizon and inner settings from
/// `base`) and tabulates errors against the reference.
pub fn convergence_study(
    system: &std::sync::Arc<SystemSpec>,
    u0: &StateVec,
    v0: &StateVec,
    taus: &[f64],
    reference: ReferenceSpec<'_>,
    base: &SolverConfig,
) -> std::result::Result<ConvergenceTable, StudyFailure> {
    let fail = |partial: ConvergenceTable, source: Error| StudyFailure { partial, source };
    let ref_tau = match reference {
        ReferenceSpec::Refined(t) => Some(t),
        ReferenceSpec::Exact(_) => None,
    };
    validate_taus(taus, ref_tau).map_err(|e| fail(ConvergenceTable::default(), e))?;
    let config = |tau| SolverConfig {
        tau,
        ..base.clone()
    };

    let ref_traj = match ref_tau {
        Some(t) => Some(
            run(system, u0, v0, &config(t)).map_err(|e| fail(ConvergenceTable::default(), e))?,
        ),
        None => None,
    };
    let refr = match (&ref_traj, reference) {
        (Some(r), _) => Reference::Trajectory(r),
        (None, ReferenceSpec::Exact(x)) => Reference::Exact(x),
        (None, ReferenceSpec::Refined(_)) => unreachable!("reference run exists"),
    };
    let mut table = ConvergenceTable {
        rows: Vec::new(),
        reference_tau: ref_traj.as_ref().map(|r| r.tau),
    };
    for &tau in taus {
        let traj = match run(system, u0, v0, &config(tau)) {
            Ok(t) => t,
            Err(e) => return Err(fail(table, e)),
        };
        match trajectory_errors(&traj, refr) {
            Ok(e) => table.push(traj.tau, e),
            Err(e) => return Err(fail(table, e)),
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Gradient consistency

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Largest `||g - g_fd|| / max(||g||, ||g_fd||, floor)` over the probes.
    pub worst_relative_error: f64,
    pub worst_probe: Option<usize>,
}

/// Compares an analytic gradient with central differences at each probe.
pub fn gradient_check<F, G>(value: F, gradient: G, probes: &[DVector<f64>]) -> GradientCheck
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut worst = GradientCheck {
        worst_relative_error: 0.0,
        worst_probe: None,
    };
    for (k, x) in probes.iter().enumerate() {
        let g = gradient(x);
        let mut fd = DVector::zeros(x.len());
        let mut y = x.clone();
        for i in 0..x.len() {
            let h = 1e-5 * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let fp = value(&y);
            y[i] = x[i] - h;
            let fm = value(&y);
            y[i] = x[i];
            fd[i] = (fp - fm) / (2.0 * h);
        }
        let denom = g.norm().max(fd.norm()).max(1e-8 * (1.0 + value(x).abs()));
        let rel = (&g - &fd).norm() / denom;
        if !(rel <= worst.worst_relative_error) {
            worst = GradientCheck {
                worst_relative_error: rel,
                worst_probe: Some(k),
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::DissipationSpec;
    use crate::spaces::NormFamily;
    use crate::stepper::QuadraticEnergy;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn oscillator(dim: usize) -> Arc<SystemSpec> {
        let norms = Arc::new(NormFamily::euclidean(dim));
        let diss = DissipationSpec::quadratic(DMatrix::identity(dim, dim), &norms.v).unwrap();
        let e = Arc::new(QuadraticEnergy {
            matrix: DMatrix::identity(dim, dim),
        });
        Arc::new(SystemSpec::new("osc", e, diss, norms).unwrap())
    }

    fn osc_run(tau: f64, horizon: f64) -> Trajectory {
        run(
            &oscillator(1),
            &StateVec::from_slice(&[1.0]),
            &StateVec::zeros(1),
            &SolverConfig::new(tau, horizon),
        )
        .unwrap()
    }

    struct Damped;
    impl ExactSolution for Damped {
        fn state(&self, t: f64) -> DVector<f64> {
            let w = 3f64.sqrt() / 2.0;
            DVector::from_element(
                1,
                (-t / 2.0).exp() * ((w * t).cos() + (w * t).sin() / (2.0 * w)),
            )
        }
        fn velocity(&self, t: f64) -> DVector<f64> {
            let w = 3f64.sqrt() / 2.0;
            DVector::from_element(1, -(-t / 2.0).exp() * (w * t).sin() / w)
        }
    }

    #[test]
    fn interpolant_endpoints_and_midpoints() {
        let traj = osc_run(0.1, 1.0);
        let it = Interpolants::new(&traj);
        let r = &traj.records;
        for n in 1..r.len() {
            let hat = it.state(Interpolant::UHat, r[n].t).unwrap();
            assert_eq!(hat.as_vector(), r[n].u.as_vector());
            let mid = 0.5 * (r[n - 1].t + r[n].t);
            let hm = it.state(Interpolant::UHat, mid).unwrap();
            let want = (r[n - 1].u.as_vector() + r[n].u.as_vector()) * 0.5;
            assert!((hm.as_vector() - want).norm() < 1e-14);
            let bar = it.state(Interpolant::UBar, mid).unwrap();
            let under = it.state(Interpolant::UUnder, mid).unwrap();
            assert_eq!(
                bar.as_vector() - under.as_vector(),
                r[n].u.as_vector() - r[n - 1].u.as_vector()
            );
            assert_eq!(it.t_bar(mid).unwrap(), r[n].t);
            assert_eq!(it.t_under(mid).unwrap(), r[n - 1].t);
        }
    }

    #[test]
    fn interpolant_boundary_conventions() {
        let traj = osc_run(0.25, 1.0);
        let it = Interpolants::new(&traj);
        let end = traj.last().t;
        for k in [Interpolant::UBar, Interpolant::UUnder, Interpolant::UHat] {
            assert_eq!(it.state(k, 0.0).unwrap(), traj.u0);
        }
        for k in [Interpolant::VBar, Interpolant::VUnder, Interpolant::VHat] {
            assert_eq!(it.state(k, 0.0).unwrap(), traj.v0);
        }
        assert_eq!(it.state(Interpolant::UUnder, end).unwrap(), traj.last().u);
        assert_eq!(
            it.eval(Interpolant::Xi, end).unwrap().as_vector(),
            traj.last().xi.as_vector()
        );
        assert_eq!(
            it.eval(Interpolant::Xi, 0.0).unwrap().as_vector(),
            traj.records[1].xi.as_vector()
        );
        assert_eq!(it.t_bar(0.0).unwrap(), 0.0);
        assert_eq!(it.t_under(end).unwrap(), end);
        assert!(matches!(
            it.eval(Interpolant::UBar, 1.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(it.eval(Interpolant::UBar, -0.1).is_err());
    }

    #[test]
    fn hat_is_continuous_and_its_slope_is_v_bar() {
        let traj = osc_run(0.05, 1.0);
        let it = Interpolants::new(&traj);
        for w in traj.records.windows(2) {
            let eps = 1e-9;
            let left = it.state(Interpolant::UHat, w[1].t - eps).unwrap();
            let at = it.state(Interpolant::UHat, w[1].t).unwrap();
            assert!((left.as_vector() - at.as_vector()).norm() < 1e-8);
            let a = it
                .state(Interpolant::UHat, w[0].t + 0.25 * traj.tau)
                .unwrap();
            let b = it
                .state(Interpolant::UHat, w[0].t + 0.75 * traj.tau)
                .unwrap();
            let slope = (b.as_vector() - a.as_vector()) / (0.5 * traj.tau);
            let vbar = it
                .state(Interpolant::VBar, w[0].t + 0.5 * traj.tau)
                .unwrap();
            assert!((slope - vbar.as_vector()).norm() < 1e-10);
        }
    }

    #[test]
    fn rest_trajectory_has_zero_slack_and_gaps() {
        let traj = run(
            &oscillator(2),
            &StateVec::zeros(2),
            &StateVec::zeros(2),
            &SolverConfig::new(0.1, 1.0),
        )
        .unwrap();
        let rep = edi_check(&traj, &consecutive_pairs(&traj)).unwrap();
        assert!(rep.pairs.iter().all(|p| p.slack == 0.0 && p.lhs == 0.0));
        let ap = apriori_report(&traj).unwrap();
        assert_eq!(ap.m_velocity, 0.0);
        assert_eq!(ap.gaps.as_array(), [0.0; 4]);
        for h in [0.1, 0.35, 0.9] {
            assert_eq!(shift_gap(&traj, h, GapNorm::L2V).unwrap(), 0.0);
        }
    }

    #[test]
    fn oscillator_edi_and_telescoping() {
        let traj = osc_run(0.01, 1.0);
        let rep = edi_check(&traj, &consecutive_pairs(&traj)).unwrap();
        assert!(rep.pairs.iter().all(|p| p.slack >= -1e-10));
        let long = edi_check(&traj, &initial_pairs(&traj)).unwrap();
        assert!(long.telescoping_defect < 1e-10);
        let mid = edi_report(&traj, &[(0.3, 0.8), (0.305, 0.8049)]).unwrap();
        assert!(mid.telescoping_defect < 1e-10);
        assert_eq!((mid.pairs[0].from, mid.pairs[0].to), (30, 80));
        assert_eq!((mid.pairs[1].from, mid.pairs[1].to), (31, 81));
        assert!(edi_report(&traj, &[(0.5, 0.5)]).is_err());
    }

    #[test]
    fn violated_edi_names_the_interval() {
        let mut traj = osc_run(0.1, 1.0);
        traj.records[4].psi_star_value += 1.0;
        let err = edi_check(&traj, &consecutive_pairs(&traj)).unwrap_err();
        match err {
            Error::EdiViolation { s, t, .. } => {
                assert!((s - 0.3).abs() < 1e-12 && (t - 0.4).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shift_gap_at_one_step_is_tau_times_velocity_norm() {
        let traj = osc_run(0.02, 1.0);
        let tau = traj.tau;
        let tail: f64 = traj
            .records
            .iter()
            .skip(2)
            .map(|r| tau * r.v.as_vector().norm_squared())
            .sum();
        let full: f64 = traj
            .records
            .iter()
            .skip(1)
            .map(|r| tau * r.v.as_vector().norm_squared())
            .sum();
        let g = shift_gap(&traj, tau, GapNorm::L2V).unwrap();
        assert!((g - tau * tail.sqrt()).abs() < 1e-12);
        assert!(g <= tau * full.sqrt() + 1e-15);
        let mut prev = 0.0;
        for k in 1..10 {
            let gk = shift_gap(&traj, k as f64 * tau, GapNorm::L2V).unwrap();
            assert!(gk >= prev - 1e-14, "gap not monotone at {k}");
            prev = gk;
        }
        assert!(shift_gap(&traj, 0.0, GapNorm::L2V).is_err());
        assert!(shift_gap(&traj, 1.0, GapNorm::L2V).is_err());
    }

    #[test]
    fn self_comparison_is_zero_and_errors_fall() {
        let a = osc_run(0.01, 1.0);
        let e = trajectory_errors(&a, Reference::Trajectory(&a)).unwrap();
        assert_eq!(e, TrajectoryErrors::default());
        let table = convergence_table(
            &[osc_run(0.02, 1.0), osc_run(0.01, 1.0), osc_run(0.005, 1.0)],
            Reference::Exact(&Damped),
        )
        .unwrap();
        for w in table.rows.windows(2) {
            assert!(w[1].errors.err_ch < w[0].errors.err_ch);
        }
        let order = table.rows[2].order_estimate.unwrap();
        assert!((0.8..1.2).contains(&order), "{order}");
        assert!(table.rows[0].order_estimate.is_none());
    }

    #[test]
    fn study_validates_steps() {
        let sys = oscillator(1);
        let u0 = StateVec::from_slice(&[1.0]);
        let v0 = StateVec::zeros(1);
        let base = SolverConfig::new(0.1, 1.0);
        assert!(convergence_study(
            &sys,
            &u0,
            &v0,
            &[0.01, 0.02],
            ReferenceSpec::Exact(&Damped),
            &base
        )
        .is_err());
        assert!(convergence_study(
            &sys,
            &u0,
            &v0,
            &[0.02, 0.01],
            ReferenceSpec::Refined(0.0025),
            &base
        )
        .is_err());
        let t = convergence_study(
            &sys,
            &u0,
            &v0,
            &[0.02, 0.01],
            ReferenceSpec::Refined(0.001),
            &base,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.reference_tau, Some(0.001));
    }

    #[test]
    fn gradient_check_flags_a_wrong_gradient() {
        let probes = vec![DVector::from_vec(vec![0.3, -1.2])];
        let f = |x: &DVector<f64>| x[0].powi(3) + x[0] * x[1];
        let good = gradient_check(
            f,
            |x| DVector::from_vec(vec![3.0 * x[0] * x[0] + x[1], x[0]]),
            &probes,
        );
        assert!(good.worst_relative_error < 1e-8);
        let bad = gradient_check(
            f,
            |x| DVector::from_vec(vec![3.0 * x[0] * x[0], x[0]]),
            &probes,
        );
        assert!(bad.worst_relative_error > 0.1);
    }

    #[test]
    fn forcing_averages_do_not_gain_energy() {
        let base = oscillator(1);
        let sys = Arc::new(
            (*base)
                .clone()
                .with_forcing(Arc::new(crate::stepper::FnForcing(|t: f64| {
                    DVector::from_element(1, (7.0 * t).sin() + t)
                }))),
        );
        let traj = run(
            &sys,
            &StateVec::zeros(1),
            &StateVec::zeros(1),
            &SolverConfig::new(0.05, 1.0),
        )
        .unwrap();
        let fs = forcing_stability(&traj);
        assert!(fs.discrete <= fs.continuous + 1e-10);
        assert!(fs.discrete > 0.9 * fs.continuous);
    }
}
