//! CSV and text writers. Numbers are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use dinsys_core::diagnostics::{ConvergenceTable, ForcingStability};
use dinsys_core::{AprioriReport, EdiReport, SpaceTag, Trajectory};

use crate::CliError;

pub const TRAJECTORY_HEADER: &str = "n,t,|V|_H,||U||_V,E,Psi(V),PsiStar,xi_residual,inner_iters";
pub const EDI_HEADER: &str = "s,t,lhs,rhs,slack";
pub const APRIORI_HEADER: &str = "quantity,value";
pub const CONVERGENCE_HEADER: &str = "tau,err_CH,err_L2V,err_V_CH,order_estimate";

/// Shortest decimal string that parses back to `x`; scientific notation
/// outside `[1e-3, 1e16)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-3..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn trajectory_csv(traj: &Trajectory) -> Result<String, CliError> {
    let norms = &traj.system.norms;
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    for r in &traj.records {
        row(
            &mut out,
            &[
                r.index.to_string(),
                num(r.t),
                num(norms.norm(SpaceTag::H, &r.v)?),
                num(norms.norm(SpaceTag::V, &r.u)?),
                num(r.energy_value),
                num(r.psi_value),
                num(r.psi_star_value),
                num(r.xi_residual),
                r.inner_iterations.to_string(),
            ],
        );
    }
    Ok(out)
}

pub fn edi_csv(report: &EdiReport) -> String {
    let mut out = format!("{EDI_HEADER}\n");
    for p in &report.pairs {
        row(
            &mut out,
            &[num(p.s), num(p.t), num(p.lhs), num(p.rhs), num(p.slack)],
        );
    }
    out
}

pub fn apriori_csv(
    report: &AprioriReport,
    forcing: &ForcingStability,
    shift_gaps: &[(f64, f64)],
) -> String {
    let g = &report.gaps;
    let mut rows: Vec<(String, f64)> = [
        ("sup_velocity_H", report.m_velocity),
        ("sup_energy", report.m_energy),
        ("sup_power", report.m_power),
        ("dissipation_integral", report.dissipation_integral),
        ("gap_u_lower_vs_bar_V", g.u_under_bar),
        ("gap_u_hat_vs_bar_V", g.u_hat_bar),
        ("gap_v_bar_vs_hat_Ustar", g.v_bar_hat),
        ("gap_v_lower_vs_bar_Ustar", g.v_under_bar),
        ("forcing_discrete", forcing.discrete),
        ("forcing_continuous", forcing.continuous),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    rows.extend(
        shift_gaps
            .iter()
            .map(|&(h, v)| (format!("shift_gap_L2V[h={}]", num(h)), v)),
    );
    let mut out = format!("{APRIORI_HEADER}\n");
    for (k, v) in rows {
        row(&mut out, &[k, num(v)]);
    }
    out
}

pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for r in &table.rows {
        let e = &r.errors;
        row(
            &mut out,
            &[
                num(r.tau),
                num(e.err_ch),
                num(e.err_l2v),
                num(e.err_v_ch),
                r.order_estimate.map(num).unwrap_or_default(),
            ],
        );
    }
    out
}

/// One-paragraph EDI verdict for `audit.txt`.
pub fn edi_summary(report: &EdiReport) -> String {
    let mut s = String::new();
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let _ = writeln!(
        s,
        "energy-dissipation inequality: {verdict} ({} pairs, scale {})",
        report.pairs.len(),
        num(report.scale)
    );
    if let Some(w) = report.worst() {
        let _ = writeln!(
            s,
            "  tightest pair [{}, {}]: slack {} tolerance {}",
            num(w.s),
            num(w.t),
            num(w.slack),
            num(w.tolerance)
        );
    }
    let _ = writeln!(s, "  telescoping defect {}", num(report.telescoping_defect));
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.0,
            1.0,
            -2.5,
            0.1,
            1.0 / 3.0,
            1e-12,
            6.02e23,
            -7.25e-9,
            123456.789,
            f64::MIN_POSITIVE,
        ] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(num(0.001), "0.001");
        assert_eq!(num(1e-12), "1e-12");
    }
}
