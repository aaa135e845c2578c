//! Shifted quadratic storage functions and their Itô derivatives.
//!
//! Two independent routes are provided for the Itô derivative `𝓛S`:
//!
//! * [`ito_derivative_direct`] evaluates `∂S/∂x · f(x, u) + ½ tr(gᵀ ∂²S/∂x² g)`
//!   from the model's drift and diffusion and the storage's exact gradient and
//!   (constant, diagonal) Hessian.
//! * [`ito_derivative_expanded`] evaluates the completed-square expansion
//!   term by term (supply or controller gain, line dissipation, deviation
//!   decay, cross-term squares and the voltage quadratic form `L(V, P*)`).
//!
//! The two do not agree in general. [`expansion_defect`] gives the exact
//! closed-form difference `expanded - direct`.

use serde::{Deserialize, Serialize};

use crate::analysis::equilibrium::Equilibrium;
use crate::analysis::omega::OmegaEntry;
use crate::controller::ControllerUpdate;
use crate::error::{check_len, check_positive, GridError, Result};
use crate::grid::{NetworkState, ZipConstants};
use crate::sde::{ClosedLoop, ClosedLoopState};

/// Which load components are stochastic, and whether the controller is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Only the current component fluctuates.
    ZStarIPStar,
    /// Current and power components fluctuate.
    ZStarIP,
    /// All three components fluctuate.
    Zip,
    /// ZIP loads with the consensus controller in the loop.
    ClosedLoop,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ZStarIPStar,
        Variant::ZStarIP,
        Variant::Zip,
        Variant::ClosedLoop,
    ];

    pub fn has_power(self) -> bool {
        !matches!(self, Variant::ZStarIPStar)
    }

    pub fn has_conductance(self) -> bool {
        matches!(self, Variant::Zip | Variant::ClosedLoop)
    }

    pub fn is_closed_loop(self) -> bool {
        matches!(self, Variant::ClosedLoop)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::ZStarIPStar => "Z*IP*",
            Variant::ZStarIP => "Z*IP",
            Variant::Zip => "ZIP",
            Variant::ClosedLoop => "closed-loop",
        }
    }
}

/// Weight of the filter state `½(η - η̄)ᵀ W (η - η̄)` in the closed-loop storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EtaWeighting {
    /// `W = τ_η`
    TauEta,
    /// `W = τ_η K`; makes `-(I_g - η)ᵀK(I_g - η)` the exact controller contribution.
    #[default]
    TauEtaGain,
}

/// Diagonal weights of the deviation terms of the storage function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovWeights {
    pub pi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub eta: EtaWeighting,
}

impl LyapunovWeights {
    /// `Π = 10³`, `Σ = Λ = 10⁻⁷` on every node.
    pub fn standard(n: usize) -> Self {
        Self {
            pi: vec![1e3; n],
            sigma: vec![1e-7; n],
            lambda: vec![1e-7; n],
            eta: EtaWeighting::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("Π", n, self.pi.len())?;
        check_len("Σ", n, self.sigma.len())?;
        check_len("Λ", n, self.lambda.len())?;
        check_positive("Π > 0", &self.pi)?;
        check_positive("Σ > 0", &self.sigma)?;
        check_positive("Λ > 0", &self.lambda)
    }
}

/// Everything the storage function and its derivatives are evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisContext<'a> {
    pub sys: &'a ClosedLoop,
    pub loads: &'a ZipConstants,
    pub eq: &'a Equilibrium,
    pub weights: &'a LyapunovWeights,
}

impl AnalysisContext<'_> {
    fn eta_weight(&self, i: usize) -> f64 {
        let p = &self.sys.controller.params;
        match self.weights.eta {
            EtaWeighting::TauEta => p.tau_eta[i],
            EtaWeighting::TauEtaGain => p.tau_eta[i] * p.k[i],
        }
    }

    pub fn omega_entry(&self, i: usize) -> OmegaEntry {
        OmegaEntry {
            g_star: self.loads.g[i],
            p_star: self.loads.p[i],
            v_bar: self.eq.v[i],
            pi: self.weights.pi[i],
            sigma: self.weights.sigma[i],
            lambda: self.weights.lambda[i],
            mu_p: self.sys.grid.stochastic.mu_p[i],
            mu_g: self.sys.grid.stochastic.mu_g[i],
        }
    }

    fn check(&self, x: &ClosedLoopState) -> Result<()> {
        let n = self.sys.node_count();
        x.net.check_dims(&self.sys.grid.topology)?;
        check_len("ξ", n, x.ctrl.xi.len())?;
        check_len("η", n, x.ctrl.eta.len())?;
        self.weights.validate(n)
    }
}

/// State with the load channels absent from `variant` set to zero.
pub fn restrict(x: &ClosedLoopState, variant: Variant) -> ClosedLoopState {
    let mut y = x.clone();
    if !variant.has_power() {
        y.net.p_hat.fill(0.0);
    }
    if !variant.has_conductance() {
        y.net.g_hat.fill(0.0);
    }
    y
}

/// Storage function of `variant`; the controller terms enter only for the closed loop.
pub fn storage(ctx: &AnalysisContext, x: &ClosedLoopState, variant: Variant) -> Result<f64> {
    ctx.check(x)?;
    let el = &ctx.sys.grid.electrical;
    let w = ctx.weights;
    let eq = ctx.eq;
    let s = &x.net;
    let mut total = 0.0;
    for i in 0..ctx.sys.node_count() {
        total += el.lg[i] * (s.ig[i] - eq.ig[i]).powi(2);
        total += el.cg[i] * (s.v[i] - eq.v[i]).powi(2);
        total += w.pi[i] * s.i_hat[i].powi(2);
        if variant.has_power() {
            total += w.sigma[i] * s.p_hat[i].powi(2);
        }
        if variant.has_conductance() {
            total += w.lambda[i] * s.g_hat[i].powi(2);
        }
        if variant.is_closed_loop() {
            total += ctx.sys.controller.params.tau_xi[i] * (x.ctrl.xi[i] - eq.xi[i]).powi(2);
            total += ctx.eta_weight(i) * (x.ctrl.eta[i] - eq.eta[i]).powi(2);
        }
    }
    for k in 0..ctx.sys.edge_count() {
        total += el.l[k] * (s.i_line[k] - eq.i_line[k]).powi(2);
    }
    Ok(0.5 * total)
}

fn input_for(ctx: &AnalysisContext, x: &ClosedLoopState, u: Option<&[f64]>, variant: Variant) -> Result<Vec<f64>> {
    let n = ctx.sys.node_count();
    if variant.is_closed_loop() {
        let mut out = vec![0.0; n];
        ctx.sys.controller.input(&x.ctrl, &x.net.ig, &mut out);
        Ok(out)
    } else {
        let u = u.ok_or_else(|| GridError::Domain("open-loop variants need an input u".into()))?;
        check_len("u", n, u.len())?;
        Ok(u.to_vec())
    }
}

/// Generator of the storage function applied along the SDE, evaluated from its
/// definition. `u` is required for open-loop variants and ignored for the closed loop.
pub fn ito_derivative_direct(
    ctx: &AnalysisContext,
    x: &ClosedLoopState,
    u: Option<&[f64]>,
    variant: Variant,
) -> Result<f64> {
    ctx.check(x)?;
    let x = restrict(x, variant);
    let u = input_for(ctx, &x, u, variant)?;
    let n = ctx.sys.node_count();
    let grid = &ctx.sys.grid;
    let el = &grid.electrical;
    let w = ctx.weights;
    let eq = ctx.eq;

    let mut f = NetworkState::zeros(n, ctx.sys.edge_count());
    grid.drift_into(&x.net, &u, ctx.loads, &mut f)?;
    let g = grid.diffusion(&x.net);
    let s = &x.net;

    // ∂S/∂x · f
    let mut grad_f = 0.0;
    for i in 0..n {
        grad_f += el.lg[i] * (s.ig[i] - eq.ig[i]) * f.ig[i];
        grad_f += el.cg[i] * (s.v[i] - eq.v[i]) * f.v[i];
        grad_f += w.pi[i] * s.i_hat[i] * f.i_hat[i];
        if variant.has_power() {
            grad_f += w.sigma[i] * s.p_hat[i] * f.p_hat[i];
        }
        if variant.has_conductance() {
            grad_f += w.lambda[i] * s.g_hat[i] * f.g_hat[i];
        }
    }
    for k in 0..ctx.sys.edge_count() {
        grad_f += el.l[k] * (s.i_line[k] - eq.i_line[k]) * f.i_line[k];
    }
    if variant.is_closed_loop() {
        let mut cu = ControllerUpdate {
            dxi: vec![0.0; n],
            deta: vec![0.0; n],
            u: vec![0.0; n],
        };
        ctx.sys.controller.update_into(&x.ctrl, &s.ig, &mut cu);
        let tau_xi = &ctx.sys.controller.params.tau_xi;
        for i in 0..n {
            grad_f += tau_xi[i] * (x.ctrl.xi[i] - eq.xi[i]) * cu.dxi[i];
            grad_f += ctx.eta_weight(i) * (x.ctrl.eta[i] - eq.eta[i]) * cu.deta[i];
        }
    }

    // ½ tr(gᵀ H g); H is diagonal so shared or independent Wiener channels give the same value.
    let mut trace = 0.0;
    for i in 0..n {
        trace += w.pi[i] * g[i] * g[i];
        if variant.has_power() {
            trace += w.sigma[i] * g[n + i] * g[n + i];
        }
        if variant.has_conductance() {
            trace += w.lambda[i] * g[2 * n + i] * g[2 * n + i];
        }
    }
    Ok(grad_f + 0.5 * trace)
}

/// Term-by-term value of the completed-square expansion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ItoTerms {
    /// `(I_g - Ī_g)ᵀ(u - ū)`; open loop only.
    pub supply: f64,
    /// `-(I_g - η)ᵀK(I_g - η)`; closed loop only.
    pub controller_gain: f64,
    pub line_dissipation: f64,
    pub current_decay: f64,
    pub current_square: f64,
    pub power_decay: f64,
    pub power_square: f64,
    pub conductance_decay: f64,
    pub conductance_square: f64,
    /// `-(V - V̄)ᵀ L(V, P*) (V - V̄)`.
    pub voltage_quadratic: f64,
}

impl ItoTerms {
    pub fn total(&self) -> f64 {
        self.supply
            + self.controller_gain
            + self.line_dissipation
            + self.current_decay
            + self.current_square
            + self.power_decay
            + self.power_square
            + self.conductance_decay
            + self.conductance_square
            + self.voltage_quadratic
    }

    /// Everything except the supply term.
    pub fn dissipation(&self) -> f64 {
        self.total() - self.supply
    }
}

/// Completed-square expansion of the Itô derivative for `variant`.
pub fn ito_derivative_expanded(
    ctx: &AnalysisContext,
    x: &ClosedLoopState,
    u: Option<&[f64]>,
    variant: Variant,
) -> Result<ItoTerms> {
    ctx.check(x)?;
    let x = restrict(x, variant);
    let u = input_for(ctx, &x, u, variant)?;
    ctx.sys.grid.guard(&x.net.v)?;
    let n = ctx.sys.node_count();
    let sp = &ctx.sys.grid.stochastic;
    let w = ctx.weights;
    let eq = ctx.eq;
    let s = &x.net;
    let dv: Vec<f64> = (0..n).map(|i| s.v[i] - eq.v[i]).collect();
    let dv_sum: f64 = dv.iter().sum();

    let mut t = ItoTerms::default();
    for i in 0..n {
        let eg = s.ig[i] - eq.ig[i];
        if variant.is_closed_loop() {
            let k = ctx.sys.controller.params.k[i];
            let e = s.ig[i] - x.ctrl.eta[i];
            t.controller_gain -= k * e * e;
        } else {
            t.supply += eg * (u[i] - eq.u[i]);
        }

        let (pi, ih) = (w.pi[i], s.i_hat[i]);
        let si = sp.sigma_i[i];
        t.current_decay -= (sp.mu_i[i] - 0.5 * si * si - 0.5) * pi * ih * ih;
        let sq = dv[i] / pi.sqrt() + pi.sqrt() * ih;
        t.current_square -= 0.5 * sq * sq;

        if variant.has_power() {
            let (sg, mu, ph) = (w.sigma[i], sp.mu_p[i], s.p_hat[i]);
            let sp2 = sp.sigma_p[i] * sp.sigma_p[i];
            t.power_decay -= 0.5 * (mu - sp2) * sg * ph * ph;
            let a = (sg * mu).sqrt();
            let cross = -1.0 + eq.v[i] / s.v[i];
            let sq = a * ph - cross / a;
            t.power_square -= 0.5 * sq * sq;
        }
        if variant.has_conductance() {
            let (lam, mu, gh) = (w.lambda[i], sp.mu_g[i], s.g_hat[i]);
            let sg2 = sp.sigma_g[i] * sp.sigma_g[i];
            t.conductance_decay -= 0.5 * (mu - sg2) * lam * gh * gh;
            let a = (lam * mu).sqrt();
            let z = dv[i] * dv_sum;
            let sq = a * gh + z / a;
            t.conductance_square -= 0.5 * sq * sq;
        }
        let l_ii = ctx.omega_entry(i).value(s.v[i], variant)?;
        t.voltage_quadratic -= dv[i] * l_ii * dv[i];
    }
    let el = &ctx.sys.grid.electrical;
    for k in 0..ctx.sys.edge_count() {
        let e = s.i_line[k] - eq.i_line[k];
        t.line_dissipation -= el.r[k] * e * e;
    }
    Ok(t)
}

/// Exact value of `expanded - direct`.
///
/// Per node, with `e = V - V̄`, `d = η - η̄` and `z = e · Σ_j e_j`:
///
/// ```text
///   ½ G* e²                                           always
/// + ½ (Σ μP - 1/(Σ μP)) e² / V²                       power channel
/// + V Ĝ e - Ĝ z - z²/(2 Λ μG) + Λ μG e⁴               conductance channel
/// + d (K - W/τ_η)(I_g - Ī_g - d)                      closed loop
/// ```
///
/// The first three lines vanish only at `V = V̄` (and `Ĝ = 0`), so the
/// expansion is an identity of the generator only on that slice.
pub fn expansion_defect(ctx: &AnalysisContext, x: &ClosedLoopState, variant: Variant) -> Result<f64> {
    ctx.check(x)?;
    let x = restrict(x, variant);
    let n = ctx.sys.node_count();
    let sp = &ctx.sys.grid.stochastic;
    let w = ctx.weights;
    let eq = ctx.eq;
    let s = &x.net;
    let dv: Vec<f64> = (0..n).map(|i| s.v[i] - eq.v[i]).collect();
    let dv_sum: f64 = dv.iter().sum();
    let mut gap = 0.0;
    for i in 0..n {
        let e = dv[i];
        let v = s.v[i];
        gap += 0.5 * ctx.loads.g[i] * e * e;
        if variant.has_power() {
            let a = w.sigma[i] * sp.mu_p[i];
            gap += 0.5 * (a - 1.0 / a) * e * e / (v * v);
        }
        if variant.has_conductance() {
            let a = w.lambda[i] * sp.mu_g[i];
            let z = e * dv_sum;
            let gh = s.g_hat[i];
            gap += v * gh * e - gh * z - 0.5 * z * z / a + a * e.powi(4);
        }
        if variant.is_closed_loop() {
            let p = &ctx.sys.controller.params;
            let d = x.ctrl.eta[i] - eq.eta[i];
            let eg = s.ig[i] - eq.ig[i];
            gap += d * (p.k[i] - ctx.eta_weight(i) / p.tau_eta[i]) * (eg - d);
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::equilibrium::solve_equilibrium;
    use crate::controller::{CommGraph, CommLink, Controller, ControllerParams};
    use crate::grid::{ElectricalParams, GridModel, Topology};
    use crate::load::StochasticParams;

    fn system(n: usize) -> (ClosedLoop, ZipConstants) {
        let t = Topology::ring(n).unwrap();
        let el = ElectricalParams::typical(&t);
        let sp = StochasticParams::uniform(n, (2.5, 1.0), (2.0, 0.7), (1.3, 0.2));
        let grid = GridModel::new(t, el, sp).unwrap();
        let links: Vec<CommLink> = (0..n)
            .map(|i| CommLink {
                a: i,
                b: (i + 1) % n,
                weight: 1.0,
            })
            .filter(|l| l.a != l.b)
            .collect();
        let params = ControllerParams {
            tau_xi: vec![1.0; n],
            tau_eta: vec![0.005; n],
            k: vec![0.4; n],
            q: vec![1.0; n],
            v_star: vec![380.0; n],
        };
        let comm = CommGraph::from_links(n, &links[..if n == 2 { 1 } else { links.len() }]).unwrap();
        let c = Controller::new(params, &comm).unwrap();
        let loads = ZipConstants {
            g: vec![0.045; n],
            i: (0..n).map(|i| 0.05 + 0.01 * i as f64).collect(),
            p: (0..n).map(|i| 10.0 + 5.0 * i as f64).collect(),
        };
        (ClosedLoop::new(grid, c).unwrap(), loads)
    }

    fn at_equilibrium(eq: &Equilibrium, m: usize) -> ClosedLoopState {
        let n = eq.v.len();
        ClosedLoopState {
            net: NetworkState {
                ig: eq.ig.clone(),
                v: eq.v.clone(),
                i_line: eq.i_line.clone(),
                ..NetworkState::zeros(n, m)
            },
            ctrl: crate::controller::ControllerState {
                xi: eq.xi.clone(),
                eta: eq.eta.clone(),
            },
        }
    }

    #[test]
    fn storage_and_derivatives_vanish_at_equilibrium() {
        let (sys, loads) = system(4);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        let w = LyapunovWeights::standard(4);
        let ctx = AnalysisContext {
            sys: &sys,
            loads: &loads,
            eq: &eq,
            weights: &w,
        };
        let x = at_equilibrium(&eq, 4);
        for v in Variant::ALL {
            assert!(storage(&ctx, &x, v).unwrap().abs() < 1e-20);
            let d = ito_derivative_direct(&ctx, &x, Some(&eq.u), v).unwrap();
            assert!(d.abs() < 1e-9, "{v:?}: {d}");
            let e = ito_derivative_expanded(&ctx, &x, Some(&eq.u), v).unwrap();
            assert!(e.total().abs() < 1e-9, "{v:?}: {e:?}");
        }
    }

    #[test]
    fn single_quadratic_term() {
        let (mut sys, loads) = system(2);
        sys.grid.electrical.lg[0] = 2.0;
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        let w = LyapunovWeights::standard(2);
        let ctx = AnalysisContext {
            sys: &sys,
            loads: &loads,
            eq: &eq,
            weights: &w,
        };
        let mut x = at_equilibrium(&eq, 1);
        x.net.ig[0] += 0.3;
        let s = storage(&ctx, &x, Variant::ClosedLoop).unwrap();
        assert!((s - 0.09).abs() < 1e-14);
    }

    #[test]
    fn current_deviation_only() {
        // Î = 1 at node 0 with Π = 1, every other coordinate at equilibrium:
        // -μ_I Π Î² + ½ σ_I² Π Î² = -2.5 + 0.5.
        let (sys, loads) = system(3);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        let mut w = LyapunovWeights::standard(3);
        w.pi[0] = 1.0;
        let ctx = AnalysisContext {
            sys: &sys,
            loads: &loads,
            eq: &eq,
            weights: &w,
        };
        let mut x = at_equilibrium(&eq, 3);
        x.net.i_hat[0] = 1.0;
        let d = ito_derivative_direct(&ctx, &x, Some(&eq.u), Variant::Zip).unwrap();
        assert!((d + 2.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn open_loop_needs_input() {
        let (sys, loads) = system(2);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        let w = LyapunovWeights::standard(2);
        let ctx = AnalysisContext {
            sys: &sys,
            loads: &loads,
            eq: &eq,
            weights: &w,
        };
        let x = at_equilibrium(&eq, 1);
        assert!(ito_derivative_direct(&ctx, &x, None, Variant::Zip).is_err());
        assert!(ito_derivative_direct(&ctx, &x, None, Variant::ClosedLoop).is_ok());
    }

    #[test]
    fn defect_vanishes_on_the_voltage_slice() {
        // With V = V̄ and Ĝ = 0 only the controller mismatch can remain, and
        // it is zero under the τ_η K weighting.
        let (sys, loads) = system(4);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        let w = LyapunovWeights::standard(4);
        let ctx = AnalysisContext {
            sys: &sys,
            loads: &loads,
            eq: &eq,
            weights: &w,
        };
        let mut x = at_equilibrium(&eq, 4);
        x.net.ig[1] += 2.0;
        x.net.i_line[2] -= 0.3;
        x.net.i_hat[3] = 0.01;
        x.net.p_hat[0] = -1.5;
        x.ctrl.eta[2] += 0.7;
        x.ctrl.xi[0] += 0.2;
        for v in Variant::ALL {
            let direct = ito_derivative_direct(&ctx, &x, Some(&eq.u), v).unwrap();
            let expanded = ito_derivative_expanded(&ctx, &x, Some(&eq.u), v).unwrap().total();
            assert!((direct - expanded).abs() < 1e-9 * (1.0 + direct.abs()), "{v:?}");
            assert!(expansion_defect(&ctx, &x, v).unwrap().abs() < 1e-12);
        }
    }
}
