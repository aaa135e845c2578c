//! Electrical network: DGUs with output filters, resistive-inductive lines
//! and ZIP loads whose components carry a stochastic deviation.
//!
//! State layout follows the compact network equations
//!
//! ```text
//! Lg dIg/dt = -V + u
//! Cg dV/dt  = Ig + A I - (G* + Ĝ) V - (I* + Î) - (P* + P̂) / V
//! L  dI/dt  = -Aᵀ V - R I
//! ```
//!
//! where `A` is the node-by-line incidence matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, GridError, Result};
use crate::load::StochasticParams;

/// Default voltage guard threshold in volts.
pub const DEFAULT_VOLTAGE_GUARD: f64 = 1.0;

/// Orientation of one line: its current is counted positive into `positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub positive: usize,
    pub negative: usize,
}

/// Connected, undirected graph of DGU nodes and transmission lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<Edge>,
    incident: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count == 0 {
            return Err(GridError::Topology("node count must be positive".into()));
        }
        let mut incident = vec![Vec::new(); node_count];
        for (k, e) in edges.iter().enumerate() {
            if e.positive >= node_count || e.negative >= node_count {
                return Err(GridError::Topology(format!(
                    "edge {k} ({}, {}) references a node outside 0..{node_count}",
                    e.positive, e.negative
                )));
            }
            if e.positive == e.negative {
                return Err(GridError::Topology(format!(
                    "edge {k} is a self-loop on node {}",
                    e.positive
                )));
            }
            incident[e.positive].push(k);
            incident[e.negative].push(k);
        }
        let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.positive, e.negative)).collect();
        if !is_connected(node_count, &pairs) {
            return Err(GridError::Topology("graph is not connected".into()));
        }
        Ok(Self {
            node_count,
            edges,
            incident,
        })
    }

    /// Ring `0 → 1 → … → n-1 → 0`; a single line for `n = 2`, no lines for `n = 1`.
    pub fn ring(node_count: usize) -> Result<Self> {
        let edges = match node_count {
            0 | 1 => Vec::new(),
            2 => vec![Edge {
                positive: 0,
                negative: 1,
            }],
            n => (0..n)
                .map(|i| Edge {
                    positive: i,
                    negative: (i + 1) % n,
                })
                .collect(),
        };
        Self::new(node_count, edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Lines incident to node `i`.
    pub fn incident_lines(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }
}

/// Breadth-first connectivity test on an undirected edge list.
pub(crate) fn is_connected(node_count: usize, edges: &[(usize, usize)]) -> bool {
    if node_count <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); node_count];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; node_count];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Node-by-line incidence matrix: `+1` at the positive end, `-1` at the negative end.
pub fn build_incidence(topology: &Topology) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(topology.node_count(), topology.edge_count());
    for (k, e) in topology.edges().iter().enumerate() {
        a[(e.positive, k)] = 1.0;
        a[(e.negative, k)] = -1.0;
    }
    a
}

/// Filter, shunt and line parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectricalParams {
    /// Filter inductance per node (H).
    pub lg: Vec<f64>,
    /// Shunt capacitance per node (F).
    pub cg: Vec<f64>,
    /// Resistance per line (Ω).
    pub r: Vec<f64>,
    /// Inductance per line (H).
    pub l: Vec<f64>,
}

impl ElectricalParams {
    /// Typical low-voltage DC microgrid values: 1.8 mH, 2.2 mF, 70 mΩ, 2 µH.
    pub fn typical(topology: &Topology) -> Self {
        let n = topology.node_count();
        let m = topology.edge_count();
        Self {
            lg: vec![1.8e-3; n],
            cg: vec![2.2e-3; n],
            r: vec![70e-3; m],
            l: vec![2.0e-6; m],
        }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        let n = topology.node_count();
        let m = topology.edge_count();
        check_len("Lg", n, self.lg.len())?;
        check_len("Cg", n, self.cg.len())?;
        check_len("R", m, self.r.len())?;
        check_len("L", m, self.l.len())?;
        check_positive("Lg > 0", &self.lg)?;
        check_positive("Cg > 0", &self.cg)?;
        check_positive("R > 0", &self.r)?;
        check_positive("L > 0", &self.l)
    }
}

/// Constant (starred) components of the ZIP loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipConstants {
    /// Conductance G* (S).
    pub g: Vec<f64>,
    /// Current I* (A).
    pub i: Vec<f64>,
    /// Power P* (W).
    pub p: Vec<f64>,
}

impl ZipConstants {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("G*", n, self.g.len())?;
        check_len("I*", n, self.i.len())?;
        check_len("P*", n, self.p.len())?;
        check_positive("G* > 0", &self.g)?;
        check_positive("I* > 0", &self.i)?;
        check_positive("P* > 0", &self.p)
    }

    fn shifted(&self, step: &LoadStep) -> Self {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, d)| x + d).collect();
        Self {
            g: add(&self.g, &step.delta_g),
            i: add(&self.i, &step.delta_i),
            p: add(&self.p, &step.delta_p),
        }
    }
}

/// Instantaneous change of the constant load components at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub time: f64,
    pub delta_g: Vec<f64>,
    pub delta_i: Vec<f64>,
    pub delta_p: Vec<f64>,
}

/// One interval of constant loads.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSegment {
    pub start: f64,
    pub constants: ZipConstants,
}

/// Base ZIP constants plus a schedule of step changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipLoads {
    pub base: ZipConstants,
    #[serde(default)]
    pub steps: Vec<LoadStep>,
}

impl ZipLoads {
    pub fn constant(base: ZipConstants) -> Self {
        Self {
            base,
            steps: Vec::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.base.validate(n)?;
        let mut last = 0.0;
        for (k, s) in self.steps.iter().enumerate() {
            if !(s.time > last) {
                return Err(GridError::Invariant {
                    name: "load steps strictly increasing in time",
                    detail: format!("step {k} at t = {}", s.time),
                });
            }
            last = s.time;
            check_len("ΔG*", n, s.delta_g.len())?;
            check_len("ΔI*", n, s.delta_i.len())?;
            check_len("ΔP*", n, s.delta_p.len())?;
        }
        for seg in self.segments() {
            seg.constants.validate(n).map_err(|e| GridError::Invariant {
                name: "post-step load components remain positive",
                detail: format!("segment starting at t = {}: {e}", seg.start),
            })?;
        }
        Ok(())
    }

    /// Constant-load intervals in time order, starting at `t = 0`.
    pub fn segments(&self) -> Vec<LoadSegment> {
        let mut out = vec![LoadSegment {
            start: 0.0,
            constants: self.base.clone(),
        }];
        for step in &self.steps {
            let next = out.last().unwrap().constants.shifted(step);
            out.push(LoadSegment {
                start: step.time,
                constants: next,
            });
        }
        out
    }
}

/// Electrical state plus the stochastic load deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub ig: Vec<f64>,
    pub v: Vec<f64>,
    pub i_line: Vec<f64>,
    pub i_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
}

impl NetworkState {
    pub fn zeros(nodes: usize, lines: usize) -> Self {
        Self {
            ig: vec![0.0; nodes],
            v: vec![0.0; nodes],
            i_line: vec![0.0; lines],
            i_hat: vec![0.0; nodes],
            p_hat: vec![0.0; nodes],
            g_hat: vec![0.0; nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.v.len()
    }

    pub fn check_dims(&self, topology: &Topology) -> Result<()> {
        let n = topology.node_count();
        check_len("I_g", n, self.ig.len())?;
        check_len("V", n, self.v.len())?;
        check_len("I", topology.edge_count(), self.i_line.len())?;
        check_len("Î", n, self.i_hat.len())?;
        check_len("P̂", n, self.p_hat.len())?;
        check_len("Ĝ", n, self.g_hat.len())
    }

    pub(crate) fn fields(&self) -> [&Vec<f64>; 6] {
        [
            &self.ig,
            &self.v,
            &self.i_line,
            &self.i_hat,
            &self.p_hat,
            &self.g_hat,
        ]
    }

    pub(crate) fn fields_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.ig,
            &mut self.v,
            &mut self.i_line,
            &mut self.i_hat,
            &mut self.p_hat,
            &mut self.g_hat,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.iter().all(|x| x.is_finite()))
    }
}

/// Current drawn by one ZIP load at voltage `v`.
///
/// `(G* + Ĝ) V + I* + Î + (P* + P̂) / V`; fails when `v` is at or below `guard`.
#[allow(clippy::too_many_arguments)]
pub fn load_current(
    v: f64,
    g_star: f64,
    i_star: f64,
    p_star: f64,
    i_hat: f64,
    p_hat: f64,
    g_hat: f64,
    guard: f64,
) -> Result<f64> {
    if !(v > guard) {
        return Err(GridError::VoltageGuard {
            node: 0,
            voltage: v,
            threshold: guard,
        });
    }
    Ok((g_star + g_hat) * v + i_star + i_hat + (p_star + p_hat) / v)
}

/// Static description of the open-loop network used to evaluate drift and diffusion.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub topology: Topology,
    pub electrical: ElectricalParams,
    pub stochastic: StochasticParams,
    pub voltage_guard: f64,
}

impl GridModel {
    pub fn new(
        topology: Topology,
        electrical: ElectricalParams,
        stochastic: StochasticParams,
    ) -> Result<Self> {
        electrical.validate(&topology)?;
        stochastic.validate(topology.node_count())?;
        Ok(Self {
            topology,
            electrical,
            stochastic,
            voltage_guard: DEFAULT_VOLTAGE_GUARD,
        })
    }

    pub fn with_voltage_guard(mut self, guard: f64) -> Self {
        self.voltage_guard = guard;
        self
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.topology.edge_count()
    }

    /// Number of Wiener channels: one per node and load component.
    pub fn channel_count(&self) -> usize {
        3 * self.node_count()
    }

    /// `Σ_k A_ik I_k` for every node.
    pub fn line_injection(&self, i_line: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (k, e) in self.topology.edges().iter().enumerate() {
            out[e.positive] += i_line[k];
            out[e.negative] -= i_line[k];
        }
    }

    pub fn guard(&self, v: &[f64]) -> Result<()> {
        match v.iter().position(|x| !(*x > self.voltage_guard)) {
            None => Ok(()),
            Some(node) => Err(GridError::VoltageGuard {
                node,
                voltage: v[node],
                threshold: self.voltage_guard,
            }),
        }
    }

    /// Time derivative of the network state for input `u` and load constants `loads`.
    pub fn drift(
        &self,
        state: &NetworkState,
        u: &[f64],
        loads: &ZipConstants,
    ) -> Result<NetworkState> {
        state.check_dims(&self.topology)?;
        check_len("u", self.node_count(), u.len())?;
        let mut out = NetworkState::zeros(self.node_count(), self.edge_count());
        self.drift_into(state, u, loads, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`GridModel::drift`]; dimensions are not rechecked.
    pub fn drift_into(
        &self,
        state: &NetworkState,
        u: &[f64],
        loads: &ZipConstants,
        out: &mut NetworkState,
    ) -> Result<()> {
        self.guard(&state.v)?;
        let el = &self.electrical;
        let sp = &self.stochastic;

        self.line_injection(&state.i_line, &mut out.v);
        for i in 0..self.node_count() {
            let v = state.v[i];
            out.ig[i] = (u[i] - v) / el.lg[i];
            let load = (loads.g[i] + state.g_hat[i]) * v
                + loads.i[i]
                + state.i_hat[i]
                + (loads.p[i] + state.p_hat[i]) / v;
            out.v[i] = (state.ig[i] + out.v[i] - load) / el.cg[i];
            out.i_hat[i] = -sp.mu_i[i] * state.i_hat[i];
            out.p_hat[i] = -sp.mu_p[i] * state.p_hat[i];
            out.g_hat[i] = -sp.mu_g[i] * state.g_hat[i];
        }
        for (k, e) in self.topology.edges().iter().enumerate() {
            let at_v = state.v[e.positive] - state.v[e.negative];
            out.i_line[k] = (-at_v - el.r[k] * state.i_line[k]) / el.l[k];
        }
        Ok(())
    }

    /// Multiplicative noise coefficients, ordered `[Î_0..n, P̂_0..n, Ĝ_0..n]`.
    pub fn diffusion(&self, state: &NetworkState) -> Vec<f64> {
        let mut out = vec![0.0; self.channel_count()];
        self.diffusion_into(state, &mut out);
        out
    }

    pub fn diffusion_into(&self, state: &NetworkState, out: &mut [f64]) {
        let n = self.node_count();
        let sp = &self.stochastic;
        for i in 0..n {
            out[i] = sp.sigma_i[i] * state.i_hat[i];
            out[n + i] = sp.sigma_p[i] * state.p_hat[i];
            out[2 * n + i] = sp.sigma_g[i] * state.g_hat[i];
        }
    }
}
