//! Closed-loop steady state with current sharing and average voltage regulation.
//!
//! Unknowns are the node voltages `V̄` and the shared current `i_g*`:
//!
//! ```text
//! Q⁻¹1 i_g* - A R⁻¹ Aᵀ V̄ - [G*] V̄ - I* - [V̄]⁻¹ P* = 0     (n equations)
//! 1ᵀ Q⁻¹ (V̄ - V*)                                   = 0     (1 equation)
//! ```
//!
//! solved by Newton's method. Everything else follows in closed form.

use nalgebra::{DMatrix, DVector};

use crate::error::{GridError, Result};
use crate::grid::{build_incidence, ZipConstants};
use crate::sde::ClosedLoop;

pub const NEWTON_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub ig: Vec<f64>,
    pub v: Vec<f64>,
    pub i_line: Vec<f64>,
    /// Constant input; equals `v`.
    pub u: Vec<f64>,
    /// Minimum-norm solution of `Q 𝓛 ξ̄ = V̄ - V*`.
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub ig_star: f64,
    pub iterations: usize,
}

/// Largest absolute residual of each steady-state relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumResiduals {
    /// Node current balance.
    pub node_balance: f64,
    /// `Ī + R⁻¹AᵀV̄`.
    pub line: f64,
    /// `ū - V̄`, with `ū` evaluated from the control law at the steady state.
    pub input: f64,
    /// `𝓛 Q Ī_g`.
    pub sharing: f64,
    /// `1ᵀQ⁻¹V̄ - 1ᵀQ⁻¹V*`.
    pub average_voltage: f64,
    /// `η̄ - Ī_g`.
    pub filter: f64,
}

impl EquilibriumResiduals {
    pub fn max(&self) -> f64 {
        [
            self.node_balance,
            self.line,
            self.input,
            self.sharing,
            self.average_voltage,
            self.filter,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `A R⁻¹ Aᵀ`: the line conductance Laplacian.
pub fn line_conductance_matrix(sys: &ClosedLoop) -> DMatrix<f64> {
    let a = build_incidence(&sys.grid.topology);
    let rinv = DMatrix::from_diagonal(&DVector::from_iterator(
        sys.edge_count(),
        sys.grid.electrical.r.iter().map(|r| 1.0 / r),
    ));
    &a * rinv * a.transpose()
}

fn newton_residual(
    y: &DMatrix<f64>,
    loads: &ZipConstants,
    q: &[f64],
    v_star: &[f64],
    v: &DVector<f64>,
    s: f64,
) -> DVector<f64> {
    let n = v.len();
    let yv = y * v;
    let mut f = DVector::zeros(n + 1);
    for i in 0..n {
        f[i] = s / q[i] - yv[i] - loads.g[i] * v[i] - loads.i[i] - loads.p[i] / v[i];
    }
    f[n] = (0..n).map(|i| (v[i] - v_star[i]) / q[i]).sum();
    f
}

pub fn solve_equilibrium(sys: &ClosedLoop, loads: &ZipConstants) -> Result<Equilibrium> {
    let n = sys.node_count();
    loads.validate(n)?;
    let q = &sys.controller.params.q;
    let v_star = &sys.controller.params.v_star;
    let y = line_conductance_matrix(sys);

    let mut v = DVector::from_column_slice(v_star);
    let total_load: f64 = (0..n)
        .map(|i| loads.g[i] * v[i] + loads.i[i] + loads.p[i] / v[i])
        .sum();
    let mut s = total_load / q.iter().map(|x| 1.0 / x).sum::<f64>();

    let mut f = newton_residual(&y, loads, q, v_star, &v, s);
    let mut iterations = 0;
    while f.amax() > 1e-13 * (1.0 + s.abs()) {
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = -y[(i, j)];
            }
            jac[(i, i)] -= loads.g[i] - loads.p[i] / (v[i] * v[i]);
            jac[(i, n)] = 1.0 / q[i];
            jac[(n, i)] = 1.0 / q[i];
        }
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or(GridError::SingularJacobian {
                iteration: iterations,
            })?;
        v += step.rows(0, n);
        s += step[n];
        if v.iter().any(|x| !(*x > 0.0)) {
            return Err(GridError::NoConvergence {
                iterations,
                residual: f.amax(),
            });
        }
        let next = newton_residual(&y, loads, q, v_star, &v, s);
        let stalled = next.amax() >= f.amax() && next.amax() < NEWTON_TOLERANCE;
        f = next;
        if stalled {
            break;
        }
    }
    if !(f.amax() < NEWTON_TOLERANCE) {
        return Err(GridError::NoConvergence {
            iterations,
            residual: f.amax(),
        });
    }

    let a = build_incidence(&sys.grid.topology);
    let atv = a.transpose() * &v;
    let i_line: Vec<f64> = (0..sys.edge_count())
        .map(|k| -atv[k] / sys.grid.electrical.r[k])
        .collect();
    let ig: Vec<f64> = q.iter().map(|qi| s / qi).collect();

    // 𝓛 ξ̄ = Q⁻¹(V̄ - V*); the right-hand side is orthogonal to 1 by construction.
    let rhs = DVector::from_iterator(n, (0..n).map(|i| (v[i] - v_star[i]) / q[i]));
    let pinv = sys
        .controller
        .laplacian
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| GridError::Domain(e.to_string()))?;
    let xi = pinv * rhs;

    Ok(Equilibrium {
        eta: ig.clone(),
        ig,
        u: v.iter().copied().collect(),
        v: v.iter().copied().collect(),
        i_line,
        xi: xi.iter().copied().collect(),
        ig_star: s,
        iterations,
    })
}

/// Residuals of every steady-state relation at `eq`, all in absolute units.
pub fn equilibrium_residuals(
    sys: &ClosedLoop,
    loads: &ZipConstants,
    eq: &Equilibrium,
) -> EquilibriumResiduals {
    let n = sys.node_count();
    let p = &sys.controller.params;
    let mut inj = vec![0.0; n];
    sys.grid.line_injection(&eq.i_line, &mut inj);
    let node_balance = (0..n)
        .map(|i| {
            (eq.ig[i] + inj[i]
                - loads.g[i] * eq.v[i]
                - loads.i[i]
                - loads.p[i] / eq.v[i])
                .abs()
        })
        .fold(0.0, f64::max);
    let line = sys
        .grid
        .topology
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| (eq.i_line[k] + (eq.v[e.positive] - eq.v[e.negative]) / sys.grid.electrical.r[k]).abs())
        .fold(0.0, f64::max);
    let mut u = vec![0.0; n];
    sys.controller.input(
        &crate::controller::ControllerState {
            xi: eq.xi.clone(),
            eta: eq.eta.clone(),
        },
        &eq.ig,
        &mut u,
    );
    let input = (0..n)
        .map(|i| (u[i] - eq.v[i]).abs().max((eq.u[i] - eq.v[i]).abs()))
        .fold(0.0, f64::max);
    let sharing = sys.controller.disagreement(&eq.ig).amax();
    let average_voltage = (0..n)
        .map(|i| (eq.v[i] - p.v_star[i]) / p.q[i])
        .sum::<f64>()
        .abs();
    let filter = (0..n)
        .map(|i| (eq.eta[i] - eq.ig[i]).abs())
        .fold(0.0, f64::max);
    EquilibriumResiduals {
        node_balance,
        line,
        input,
        sharing,
        average_voltage,
        filter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{CommGraph, Controller, ControllerParams};
    use crate::grid::{ElectricalParams, GridModel, Topology};
    use crate::load::StochasticParams;

    fn single(g: f64, i: f64, p: f64) -> (ClosedLoop, ZipConstants) {
        let t = Topology::new(1, vec![]).unwrap();
        let el = ElectricalParams {
            lg: vec![1e-3],
            cg: vec![1e-3],
            r: vec![],
            l: vec![],
        };
        let sp = StochasticParams::uniform(1, (2.5, 1.0), (2.0, 0.7), (1.3, 0.2));
        let grid = GridModel::new(t, el, sp).unwrap();
        let params = ControllerParams {
            tau_xi: vec![1.0],
            tau_eta: vec![0.005],
            k: vec![0.4],
            q: vec![1.0],
            v_star: vec![380.0],
        };
        let c = Controller::new(params, &CommGraph::from_links(1, &[]).unwrap()).unwrap();
        let loads = ZipConstants {
            g: vec![g],
            i: vec![i],
            p: vec![p],
        };
        (ClosedLoop::new(grid, c).unwrap(), loads)
    }

    #[test]
    fn single_node_ohmic() {
        // Constant-current and constant-power parts must be positive; keep them negligible.
        let (sys, loads) = single(0.045, 1e-300, 1e-300);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        assert_eq!(eq.v, vec![380.0]);
        assert_eq!(eq.u, vec![380.0]);
        assert!((eq.ig[0] - 17.1).abs() < 1e-12);
        assert!((eq.ig_star - 17.1).abs() < 1e-12);
        assert_eq!(eq.xi, vec![0.0]);
    }

    #[test]
    fn single_node_vanishing_load() {
        let (sys, loads) = single(1e-300, 1e-300, 1e-300);
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        assert_eq!(eq.v, vec![380.0]);
        assert!(eq.ig[0].abs() < 1e-12);
    }
}
