//! Stochastic load deviations.
//!
//! Each deviation channel follows the linear SDE with state-proportional noise
//!
//! ```text
//! dX = -μ X dt + σ X dW
//! ```
//!
//! whose exact solution is `X(t) = X(0) exp((-μ - σ²/2) t + σ W(t))`, so the
//! first two moments are available in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, GridError, Result};

/// Rates of the three per-node deviation SDEs and their initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub mu_i: Vec<f64>,
    pub sigma_i: Vec<f64>,
    pub mu_p: Vec<f64>,
    pub sigma_p: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub sigma_g: Vec<f64>,
    pub initial_i_hat: Vec<f64>,
    pub initial_p_hat: Vec<f64>,
    pub initial_g_hat: Vec<f64>,
    /// Drive the three channels of a node with one Wiener process instead of three.
    #[serde(default)]
    pub shared_wiener: bool,
}

impl StochasticParams {
    /// Same `(μ, σ)` pair for every node; zero initial deviations.
    pub fn uniform(n: usize, current: (f64, f64), power: (f64, f64), conductance: (f64, f64)) -> Self {
        Self {
            mu_i: vec![current.0; n],
            sigma_i: vec![current.1; n],
            mu_p: vec![power.0; n],
            sigma_p: vec![power.1; n],
            mu_g: vec![conductance.0; n],
            sigma_g: vec![conductance.1; n],
            initial_i_hat: vec![0.0; n],
            initial_p_hat: vec![0.0; n],
            initial_g_hat: vec![0.0; n],
            shared_wiener: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.mu_i.len()
    }

    /// Drift rates must be strictly positive; a zero diffusion rate switches
    /// the channel's noise off.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [
            ("μ_I", &self.mu_i),
            ("σ_I", &self.sigma_i),
            ("μ_P", &self.mu_p),
            ("σ_P", &self.sigma_p),
            ("μ_G", &self.mu_g),
            ("σ_G", &self.sigma_g),
            ("Î(0)", &self.initial_i_hat),
            ("P̂(0)", &self.initial_p_hat),
            ("Ĝ(0)", &self.initial_g_hat),
        ] {
            check_len(name, n, v.len())?;
        }
        check_positive("μ_I > 0", &self.mu_i)?;
        check_positive("μ_P > 0", &self.mu_p)?;
        check_positive("μ_G > 0", &self.mu_g)?;
        for (name, v) in [
            ("σ_I >= 0", &self.sigma_i),
            ("σ_P >= 0", &self.sigma_p),
            ("σ_G >= 0", &self.sigma_g),
        ] {
            if let Some(k) = v.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(GridError::Invariant {
                    name,
                    detail: format!("entry {k} = {}", v[k]),
                });
            }
        }
        Ok(())
    }

    /// Copy with every diffusion rate set to zero.
    pub fn without_noise(&self) -> Self {
        let n = self.node_count();
        Self {
            sigma_i: vec![0.0; n],
            sigma_p: vec![0.0; n],
            sigma_g: vec![0.0; n],
            ..self.clone()
        }
    }
}

/// Mean and second moment of a deviation channel at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub second: f64,
}

impl Moments {
    pub fn variance(&self) -> f64 {
        self.second - self.mean * self.mean
    }
}

/// Closed-form moments of `dX = -μ X dt + σ X dW`, `X(0) = x0`.
pub fn analytic_moments(mu: f64, sigma: f64, x0: f64, t: f64) -> Result<Moments> {
    if !(t >= 0.0) {
        return Err(GridError::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(Moments {
        mean: x0 * (-mu * t).exp(),
        second: x0 * x0 * ((-2.0 * mu + sigma * sigma) * t).exp(),
    })
}

/// Per-node outcome of the three parameter conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssumptionReport {
    /// `μ_I > σ_I²/2 - 1/2`
    pub current: Vec<bool>,
    /// `μ_P > σ_P²`
    pub power: Vec<bool>,
    /// `μ_G > σ_G²`
    pub conductance: Vec<bool>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        [&self.current, &self.power, &self.conductance]
            .iter()
            .all(|v| v.iter().all(|b| *b))
    }
}

pub fn check_assumptions(params: &StochasticParams) -> AssumptionReport {
    let strict = |a: &[f64], b: &[f64], f: fn(f64, f64) -> bool| -> Vec<bool> {
        a.iter().zip(b).map(|(m, s)| f(*m, *s)).collect()
    };
    AssumptionReport {
        current: strict(&params.mu_i, &params.sigma_i, |m, s| m > 0.5 * s * s - 0.5),
        power: strict(&params.mu_p, &params.sigma_p, |m, s| m > s * s),
        conductance: strict(&params.mu_g, &params.sigma_g, |m, s| m > s * s),
    }
}
