//! Sampling-based certification of the storage-function algebra.
//!
//! States are drawn uniformly from a box around the steady state and kept
//! only if they lie in the Ω region of the variant under test. Sample `k` of a
//! suite seeded with `seed` uses noise substream `k`, so results do not depend
//! on thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::lyapunov::{
    expansion_defect, ito_derivative_direct, ito_derivative_expanded, AnalysisContext, Variant,
};
use crate::analysis::omega::omega_matrix;
use crate::controller::ControllerState;
use crate::error::{GridError, Result};
use crate::grid::NetworkState;
use crate::sde::{ClosedLoopState, NoiseStream};

/// Relative half-widths of the sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingBox {
    /// Voltages within `±voltage · V̄`.
    pub voltage: f64,
    /// Currents and controller states within `±current · max(|x̄|, floor)`.
    pub current: f64,
    /// Deviations within `±deviation` times the matching constant component.
    pub deviation: f64,
    /// Floor for near-zero steady values, as a fraction of the mean `|Ī_g|`.
    pub floor_fraction: f64,
    pub max_tries: usize,
}

impl Default for SamplingBox {
    fn default() -> Self {
        Self {
            voltage: 0.3,
            current: 0.5,
            deviation: 0.2,
            floor_fraction: 0.1,
            max_tries: 10_000,
        }
    }
}

fn around<R: Rng>(rng: &mut R, center: f64, half: f64) -> f64 {
    center + half * rng.random_range(-1.0..=1.0)
}

/// One draw from the box; channels outside `variant` are zero.
pub fn sample_state<R: Rng>(ctx: &AnalysisContext, variant: Variant, bx: &SamplingBox, rng: &mut R) -> ClosedLoopState {
    let eq = ctx.eq;
    let n = ctx.sys.node_count();
    let m = ctx.sys.edge_count();
    let floor = bx.floor_fraction * eq.ig.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    let half = |x: f64| bx.current * x.abs().max(floor);
    let mut net = NetworkState::zeros(n, m);
    for i in 0..n {
        net.ig[i] = around(rng, eq.ig[i], half(eq.ig[i]));
        net.v[i] = around(rng, eq.v[i], bx.voltage * eq.v[i]);
        net.i_hat[i] = around(rng, 0.0, bx.deviation * ctx.loads.i[i]);
        if variant.has_power() {
            net.p_hat[i] = around(rng, 0.0, bx.deviation * ctx.loads.p[i]);
        }
        if variant.has_conductance() {
            net.g_hat[i] = around(rng, 0.0, bx.deviation * ctx.loads.g[i]);
        }
    }
    for k in 0..m {
        net.i_line[k] = around(rng, eq.i_line[k], half(eq.i_line[k]));
    }
    let ctrl = ControllerState {
        xi: eq.xi.iter().map(|x| around(rng, *x, half(*x))).collect(),
        eta: eq.eta.iter().map(|x| around(rng, *x, half(*x))).collect(),
    };
    ClosedLoopState { net, ctrl }
}

/// Rejection-sample until the state lies in the variant's Ω region.
pub fn sample_in_omega<R: Rng>(
    ctx: &AnalysisContext,
    variant: Variant,
    bx: &SamplingBox,
    rng: &mut R,
) -> Result<ClosedLoopState> {
    for _ in 0..bx.max_tries {
        let x = sample_state(ctx, variant, bx, rng);
        let report = omega_matrix(
            &x.net.v,
            &ctx.eq.v,
            ctx.loads,
            ctx.weights,
            &ctx.sys.grid.stochastic,
            variant,
        )?;
        if report.member {
            return Ok(x);
        }
    }
    Err(GridError::Domain(format!(
        "no Ω_{} sample found in {} draws",
        variant.label(),
        bx.max_tries
    )))
}

fn draw(ctx: &AnalysisContext, variant: Variant, bx: &SamplingBox, seed: u64, k: usize) -> Result<(ClosedLoopState, NoiseStream)> {
    let mut stream = NoiseStream::substream(seed, k as u64);
    let x = sample_in_omega(ctx, variant, bx, stream.rng())?;
    Ok((x, stream))
}

/// Agreement between the direct and expanded Itô derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub variant: Variant,
    pub samples: usize,
    /// `max |direct - expanded| / (1 + |direct|)`.
    pub max_scaled_error: f64,
    /// Direct and expanded values at the worst sample.
    pub worst: (f64, f64),
    /// `max |expanded - direct - defect| / (1 + |direct| + |expanded|)`: how well the closed-form defect explains the gap.
    pub max_unexplained: f64,
}

impl IdentityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_scaled_error <= tol
    }
}

pub fn identity_suite(
    ctx: &AnalysisContext,
    variant: Variant,
    samples: usize,
    seed: u64,
    bx: &SamplingBox,
) -> Result<IdentityReport> {
    let rows = (0..samples)
        .into_par_iter()
        .map(|k| {
            let (x, _) = draw(ctx, variant, bx, seed, k)?;
            let u = ctx.eq.u.clone();
            let direct = ito_derivative_direct(ctx, &x, Some(&u), variant)?;
            let expanded = ito_derivative_expanded(ctx, &x, Some(&u), variant)?.total();
            let defect = expansion_defect(ctx, &x, variant)?;
            Ok((direct, expanded, defect))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = IdentityReport {
        variant,
        samples,
        max_scaled_error: 0.0,
        worst: (0.0, 0.0),
        max_unexplained: 0.0,
    };
    for (direct, expanded, defect) in rows {
        let scale = 1.0 + direct.abs();
        let err = (direct - expanded).abs() / scale;
        if err > report.max_scaled_error {
            report.max_scaled_error = err;
            report.worst = (direct, expanded);
        }
        report.max_unexplained = report
            .max_unexplained
            .max((expanded - direct - defect).abs() / (scale + expanded.abs()));
    }
    Ok(report)
}

/// Shifted-passivity inequality `𝓛S <= (u - ū)ᵀ(I_g - Ī_g) + tol`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassivityReport {
    pub variant: Variant,
    pub samples: usize,
    pub evaluations: usize,
    /// Largest `𝓛S - supply` seen.
    pub max_excess: f64,
    pub violations: usize,
    /// Samples with at least one violating input.
    pub violating_samples: usize,
}

pub fn passivity_suite(
    ctx: &AnalysisContext,
    variant: Variant,
    samples: usize,
    inputs_per_sample: usize,
    seed: u64,
    tol: f64,
    bx: &SamplingBox,
) -> Result<PassivityReport> {
    if variant.is_closed_loop() {
        return Err(GridError::Domain("passivity is an open-loop property".into()));
    }
    let rows = (0..samples)
        .into_par_iter()
        .map(|k| {
            let (x, mut stream) = draw(ctx, variant, bx, seed, k)?;
            let mut worst = f64::NEG_INFINITY;
            let mut bad = 0usize;
            for _ in 0..inputs_per_sample {
                let u: Vec<f64> = ctx
                    .eq
                    .u
                    .iter()
                    .map(|ub| around(stream.rng(), *ub, 0.5 * ub.abs()))
                    .collect();
                let ls = ito_derivative_direct(ctx, &x, Some(&u), variant)?;
                let supply: f64 = (0..u.len())
                    .map(|i| (u[i] - ctx.eq.u[i]) * (x.net.ig[i] - ctx.eq.ig[i]))
                    .sum();
                let excess = ls - supply;
                worst = worst.max(excess);
                if excess > tol {
                    bad += 1;
                }
            }
            Ok((worst, bad))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PassivityReport {
        variant,
        samples,
        evaluations: samples * inputs_per_sample,
        max_excess: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        violations: rows.iter().map(|r| r.1).sum(),
        violating_samples: rows.iter().filter(|r| r.1 > 0).count(),
    })
}

/// Sign of the closed-loop Itô derivative, by both routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub samples: usize,
    pub max_expanded: f64,
    pub expanded_violations: usize,
    pub max_direct: f64,
    pub direct_violations: usize,
}

pub fn closed_loop_sign_suite(
    ctx: &AnalysisContext,
    samples: usize,
    seed: u64,
    tol: f64,
    bx: &SamplingBox,
) -> Result<SignReport> {
    let rows = (0..samples)
        .into_par_iter()
        .map(|k| {
            let (x, _) = draw(ctx, Variant::ClosedLoop, bx, seed, k)?;
            let expanded = ito_derivative_expanded(ctx, &x, None, Variant::ClosedLoop)?.total();
            let direct = ito_derivative_direct(ctx, &x, None, Variant::ClosedLoop)?;
            Ok((expanded, direct))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignReport {
        samples,
        max_expanded: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        expanded_violations: rows.iter().filter(|r| r.0 > tol).count(),
        max_direct: rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        direct_violations: rows.iter().filter(|r| r.1 > tol).count(),
    })
}
