//! Diagonal of the voltage quadratic form whose positivity defines the
//! certified regions Ω_Z*IP*, Ω_Z*IP and Ω_ZIP.
//!
//! ```text
//! L_ii = ½(G*_i - 1/Π_i) - P*_i/(V_i V̄_i) - ½ Σ_i μP_i / V_i² - (V_i - V̄_i)² Λ_i μG_i
//! ```
//!
//! The last two terms are present only for the Z*IP and ZIP regions respectively.

use serde::Serialize;

use crate::analysis::lyapunov::{LyapunovWeights, Variant};
use crate::error::{GridError, Result};
use crate::grid::ZipConstants;
use crate::load::StochasticParams;

/// Default strictness margin for membership tests.
pub const MEMBERSHIP_MARGIN: f64 = 1e-12;

/// Inputs of a single diagonal entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaEntry {
    pub g_star: f64,
    pub p_star: f64,
    pub v_bar: f64,
    pub pi: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub mu_p: f64,
    pub mu_g: f64,
}

impl OmegaEntry {
    pub fn value(&self, v: f64, variant: Variant) -> Result<f64> {
        if !(v > 0.0) {
            return Err(GridError::Domain(format!("voltage must be positive, got {v}")));
        }
        let mut l = 0.5 * (self.g_star - 1.0 / self.pi) - self.p_star / (v * self.v_bar);
        if variant.has_power() {
            l -= 0.5 * self.sigma * self.mu_p / (v * v);
        }
        if variant.has_conductance() {
            let dv = v - self.v_bar;
            l -= dv * dv * self.lambda * self.mu_g;
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaReport {
    pub diagonal: Vec<f64>,
    pub member: bool,
}

/// Diagonal entries at voltages `v` around steady state `v_bar`, and membership.
pub fn omega_matrix(
    v: &[f64],
    v_bar: &[f64],
    loads: &ZipConstants,
    weights: &LyapunovWeights,
    stochastic: &StochasticParams,
    variant: Variant,
) -> Result<OmegaReport> {
    let diagonal = (0..v.len())
        .map(|i| {
            OmegaEntry {
                g_star: loads.g[i],
                p_star: loads.p[i],
                v_bar: v_bar[i],
                pi: weights.pi[i],
                sigma: weights.sigma[i],
                lambda: weights.lambda[i],
                mu_p: stochastic.mu_p[i],
                mu_g: stochastic.mu_g[i],
            }
            .value(v[i], variant)
        })
        .collect::<Result<Vec<_>>>()?;
    let member = diagonal.iter().all(|l| *l > MEMBERSHIP_MARGIN);
    Ok(OmegaReport { diagonal, member })
}

/// `L_ii` over a `v_points × p_points` grid; rows follow `V`, columns follow `P*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaScan {
    pub voltages: Vec<f64>,
    pub powers: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl OmegaScan {
    pub fn negative_cells(&self) -> usize {
        self.values
            .iter()
            .flatten()
            .filter(|x| !(**x > MEMBERSHIP_MARGIN))
            .count()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn omega_scan(
    entry: OmegaEntry,
    v_range: (f64, f64),
    p_range: (f64, f64),
    v_points: usize,
    p_points: usize,
    variant: Variant,
) -> Result<OmegaScan> {
    let voltages = linspace(v_range.0, v_range.1, v_points);
    let powers = linspace(p_range.0, p_range.1, p_points);
    let values = voltages
        .iter()
        .map(|&v| {
            powers
                .iter()
                .map(|&p| OmegaEntry { p_star: p, ..entry }.value(v, variant))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OmegaScan {
        voltages,
        powers,
        values,
    })
}
