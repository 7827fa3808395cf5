//! Report and trajectory emission: versioned JSON for run reports,
//! plot-ready CSV for trajectories (17 significant digits).

use crate::mech::Trajectory;
use crate::runner::RunReport;

/// Deterministic JSON rendering: struct field order is fixed, maps are
/// ordered, floats use shortest-round-trip formatting. Identical inputs and
/// seed give byte-identical output.
pub fn report_to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with header `t,q1..qn,qd1..qdn[,lam1..lamk][,phi1..phim]`. State rows
/// beyond `2n` (vakonomic multipliers) become `lam` columns; recorded
/// constraint values become `phi` columns.
pub fn trajectory_to_csv(traj: &Trajectory, n: usize) -> String {
    let state_len = traj.states.first().map(Vec::len).unwrap_or(2 * n);
    let lam = state_len.saturating_sub(2 * n);
    let phis = traj.constraint_values.first().map(Vec::len).unwrap_or(0);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.extend((1..=n).map(|i| format!("qd{i}")));
    header.extend((1..=lam).map(|i| format!("lam{i}")));
    header.extend((1..=phis).map(|i| format!("phi{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for (k, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row: Vec<String> = vec![fmt17(*t)];
        row.extend(state.iter().map(|v| fmt17(*v)));
        if phis > 0 {
            row.extend(traj.constraint_values[k].iter().map(|v| fmt17(*v)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// CSV for a constrained-SODE trajectory whose states are M-points
/// `(q^1..q^n, q̇^{a_1}..)`: header names the free velocities explicitly.
pub fn m_trajectory_to_csv(traj: &Trajectory, coords: &[String], free: &[String]) -> String {
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(coords.iter().cloned());
    header.extend(free.iter().map(|c| format!("{c}d")));
    let mut out = header.join(",");
    out.push('\n');
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let mut row: Vec<String> = vec![fmt17(*t)];
        row.extend(state.iter().map(|v| fmt17(*v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
