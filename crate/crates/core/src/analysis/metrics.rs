//! Current-sharing and average-voltage metrics, and the supermartingale check
//! on the closed-loop storage along simulated ensembles.

use serde::Serialize;

use crate::analysis::equilibrium::{solve_equilibrium, Equilibrium};
use crate::analysis::lyapunov::{storage, AnalysisContext, LyapunovWeights, Variant};
use crate::analysis::omega::omega_matrix;
use crate::error::{check_len, GridError, Result};
use crate::grid::ZipLoads;
use crate::sde::{ClosedLoop, EnsembleStats, Trajectory};

/// Tail-window averages of the two control objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoalMetrics {
    /// `max_ij |q_i I_g,i - q_j I_g,j|`.
    pub dispersion: f64,
    /// Mean over nodes of `I_g`.
    pub mean_current: f64,
    /// `1ᵀQ⁻¹V / 1ᵀQ⁻¹1`.
    pub weighted_voltage: f64,
    /// `|1ᵀQ⁻¹(V - V*)| / |1ᵀQ⁻¹V*|`.
    pub voltage_error: f64,
    pub samples: usize,
}

impl GoalMetrics {
    pub fn relative_dispersion(&self) -> f64 {
        self.dispersion / self.mean_current.abs()
    }
}

/// Averages over samples with `window.0 <= t <= window.1`.
pub fn goal_metrics<'a>(
    samples: impl Iterator<Item = (f64, &'a [f64], &'a [f64])>,
    q: &[f64],
    v_star: &[f64],
    window: (f64, f64),
) -> Result<GoalMetrics> {
    let n = q.len();
    check_len("V*", n, v_star.len())?;
    let qinv_sum: f64 = q.iter().map(|x| 1.0 / x).sum();
    let ref_avg: f64 = (0..n).map(|i| v_star[i] / q[i]).sum();
    let mut acc = GoalMetrics {
        dispersion: 0.0,
        mean_current: 0.0,
        weighted_voltage: 0.0,
        voltage_error: 0.0,
        samples: 0,
    };
    for (t, ig, v) in samples {
        if t < window.0 || t > window.1 {
            continue;
        }
        check_len("I_g", n, ig.len())?;
        check_len("V", n, v.len())?;
        let weighted: Vec<f64> = (0..n).map(|i| q[i] * ig[i]).collect();
        let hi = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = weighted.iter().copied().fold(f64::INFINITY, f64::min);
        let vsum: f64 = (0..n).map(|i| v[i] / q[i]).sum();
        acc.dispersion += hi - lo;
        acc.mean_current += ig.iter().sum::<f64>() / n as f64;
        acc.weighted_voltage += vsum / qinv_sum;
        acc.voltage_error += (vsum - ref_avg).abs() / ref_avg.abs();
        acc.samples += 1;
    }
    if acc.samples == 0 {
        return Err(GridError::EmptyWindow {
            start: window.0,
            end: window.1,
        });
    }
    let k = acc.samples as f64;
    acc.dispersion /= k;
    acc.mean_current /= k;
    acc.weighted_voltage /= k;
    acc.voltage_error /= k;
    Ok(acc)
}

pub fn trajectory_goal_metrics(
    traj: &Trajectory,
    q: &[f64],
    v_star: &[f64],
    window: (f64, f64),
) -> Result<GoalMetrics> {
    goal_metrics(
        traj.times
            .iter()
            .zip(&traj.records)
            .map(|(t, r)| (*t, r.state.net.ig.as_slice(), r.state.net.v.as_slice())),
        q,
        v_star,
        window,
    )
}

/// Metrics of the ensemble-mean trajectory.
pub fn ensemble_goal_metrics(
    stats: &EnsembleStats,
    q: &[f64],
    v_star: &[f64],
    window: (f64, f64),
) -> Result<GoalMetrics> {
    let n = stats.nodes;
    let ig = stats.block("ig").expect("ig columns");
    let v = stats.block("v").expect("v columns");
    goal_metrics(
        stats
            .times
            .iter()
            .zip(&stats.mean)
            .map(|(t, row)| (*t, &row[ig..ig + n], &row[v..v + n])),
        q,
        v_star,
        window,
    )
}

/// Steady state of every load segment.
pub fn segment_equilibria(sys: &ClosedLoop, loads: &ZipLoads) -> Result<Vec<Equilibrium>> {
    loads
        .segments()
        .iter()
        .map(|s| solve_equilibrium(sys, &s.constants))
        .collect()
}

/// Ω_ZIP membership of every record, against the steady state of its load segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaTrace {
    pub checked: usize,
    /// `(time, smallest diagonal entry)` of each record outside Ω.
    pub outside: Vec<(f64, f64)>,
}

pub fn omega_trace(
    sys: &ClosedLoop,
    loads: &ZipLoads,
    weights: &LyapunovWeights,
    traj: &Trajectory,
) -> Result<OmegaTrace> {
    let equilibria = segment_equilibria(sys, loads)?;
    let segments = loads.segments();
    let mut trace = OmegaTrace {
        checked: 0,
        outside: Vec::new(),
    };
    for (t, rec) in traj.times.iter().zip(&traj.records) {
        let seg = rec.segment;
        let report = omega_matrix(
            &rec.state.net.v,
            &equilibria[seg].v,
            &segments[seg].constants,
            weights,
            &sys.grid.stochastic,
            Variant::Zip,
        )?;
        trace.checked += 1;
        if !report.member {
            let worst = report.diagonal.iter().copied().fold(f64::INFINITY, f64::min);
            trace.outside.push((*t, worst));
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageStep {
    pub time: f64,
    pub mean_increase: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermartingaleReport {
    pub members: usize,
    /// Record-to-record steps that were tested.
    pub checked_steps: usize,
    /// Steps skipped because a load step fell inside them.
    pub segment_boundaries: usize,
    /// Steps skipped because some member left Ω_ZIP.
    pub outside_omega: usize,
    pub violations: Vec<StorageStep>,
    /// Ensemble-mean storage per record.
    pub mean_storage: Vec<f64>,
}

impl SupermartingaleReport {
    pub fn passed(&self) -> bool {
        self.checked_steps > 0 && self.violations.is_empty()
    }
}

/// Tests `mean(S_{k+1} - S_k) <= n_se · sd(S_{k+1} - S_k)/√R` at every recorded step.
pub fn supermartingale_check(
    sys: &ClosedLoop,
    loads: &ZipLoads,
    weights: &LyapunovWeights,
    members: &[&Trajectory],
    n_se: f64,
) -> Result<SupermartingaleReport> {
    let equilibria = segment_equilibria(sys, loads)?;
    let segments = loads.segments();
    let len = members.iter().map(|t| t.len()).min().unwrap_or(0);
    let r = members.len();

    // storage[member][record], in_omega[member][record]
    let mut values = vec![vec![0.0; len]; r];
    let mut inside = vec![vec![false; len]; r];
    for (m, traj) in members.iter().enumerate() {
        for k in 0..len {
            let rec = &traj.records[k];
            let seg = rec.segment;
            let ctx = AnalysisContext {
                sys,
                loads: &segments[seg].constants,
                eq: &equilibria[seg],
                weights,
            };
            values[m][k] = storage(&ctx, &rec.state, Variant::ClosedLoop)?;
            inside[m][k] = omega_matrix(
                &rec.state.net.v,
                &equilibria[seg].v,
                &segments[seg].constants,
                weights,
                &sys.grid.stochastic,
                Variant::ClosedLoop,
            )?
            .member;
        }
    }

    let mean_storage = (0..len)
        .map(|k| values.iter().map(|v| v[k]).sum::<f64>() / r as f64)
        .collect();
    let mut report = SupermartingaleReport {
        members: r,
        checked_steps: 0,
        segment_boundaries: 0,
        outside_omega: 0,
        violations: Vec::new(),
        mean_storage,
    };
    let times = &members.first().map(|t| t.times.clone()).unwrap_or_default();
    for k in 0..len.saturating_sub(1) {
        if members
            .iter()
            .any(|t| t.records[k].segment != t.records[k + 1].segment)
        {
            report.segment_boundaries += 1;
            continue;
        }
        if inside.iter().any(|row| !row[k] || !row[k + 1]) {
            report.outside_omega += 1;
            continue;
        }
        let diffs: Vec<f64> = values.iter().map(|v| v[k + 1] - v[k]).collect();
        let mean = diffs.iter().sum::<f64>() / r as f64;
        let sd = if r > 1 {
            (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
        } else {
            0.0
        };
        let tolerance = n_se * sd / (r as f64).sqrt();
        report.checked_steps += 1;
        if mean > tolerance {
            report.violations.push(StorageStep {
                time: times[k + 1],
                mean_increase: mean,
                tolerance,
            });
        }
    }
    Ok(report)
}
