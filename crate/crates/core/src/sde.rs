//! Fixed-step Euler–Maruyama integration of the closed-loop network.
//!
//! `x⁺ = x + f(x, u) dt + g(x) ΔW` with `ΔW ~ N(0, dt)` per channel. Only the
//! load deviation rows of `g` are non-zero.
//!
//! Noise streams are ChaCha8 generators. Run `r` of an ensemble seeded with
//! `base_seed` uses `ChaCha8Rng::seed_from_u64(base_seed)` switched to stream
//! `r`, so every member is reproducible on its own and independent of how the
//! ensemble is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::equilibrium::solve_equilibrium;
use crate::controller::{Controller, ControllerState, ControllerUpdate};
use crate::error::{check_len, GridError, Result};
use crate::grid::{GridModel, NetworkState, ZipConstants};
use crate::scenario::{InitialCondition, Scenario};

/// Step size, horizon, output decimation and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSettings {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub seed: u64,
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| GridError::Invariant {
            name: "0 < dt <= t_end, record_stride >= 1",
            detail,
        };
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(bad(format!("dt = {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() || self.dt > self.t_end {
            return Err(bad(format!("t_end = {}, dt = {}", self.t_end, self.dt)));
        }
        if self.record_stride == 0 {
            return Err(bad("record_stride = 0".into()));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Seeded source of Gaussian Wiener increments.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Independent stream number `index` under `base_seed`.
    pub fn substream(base_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(index);
        Self { rng }
    }

    pub fn fill_increments(&mut self, dt: f64, out: &mut [f64]) {
        let scale = dt.sqrt();
        for x in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = scale * z;
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `channel_count` independent `N(0, dt)` samples.
pub fn wiener_increments(stream: &mut NoiseStream, dt: f64, channel_count: usize) -> Vec<f64> {
    let mut out = vec![0.0; channel_count];
    stream.fill_increments(dt, &mut out);
    out
}

/// Network plus controller.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub grid: GridModel,
    pub controller: Controller,
}

impl ClosedLoop {
    pub fn new(grid: GridModel, controller: Controller) -> Result<Self> {
        check_len("controller nodes", grid.node_count(), controller.node_count())?;
        Ok(Self { grid, controller })
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.grid.edge_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopState {
    pub net: NetworkState,
    pub ctrl: ControllerState,
}

impl ClosedLoopState {
    pub fn zeros(nodes: usize, lines: usize) -> Self {
        Self {
            net: NetworkState::zeros(nodes, lines),
            ctrl: ControllerState::zeros(nodes),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
            && self.ctrl.xi.iter().chain(&self.ctrl.eta).all(|x| x.is_finite())
    }
}

/// Reusable buffers for repeated steps.
#[derive(Debug, Clone)]
pub struct StepWorkspace {
    drift: NetworkState,
    ctrl: ControllerUpdate,
    diffusion: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(sys: &ClosedLoop) -> Self {
        let n = sys.node_count();
        Self {
            drift: NetworkState::zeros(n, sys.edge_count()),
            ctrl: ControllerUpdate {
                dxi: vec![0.0; n],
                deta: vec![0.0; n],
                u: vec![0.0; n],
            },
            diffusion: vec![0.0; sys.grid.channel_count()],
        }
    }
}

/// One Euler–Maruyama step returning the next state.
pub fn euler_maruyama_step(
    sys: &ClosedLoop,
    state: &ClosedLoopState,
    loads: &ZipConstants,
    dt: f64,
    dw: &[f64],
) -> Result<ClosedLoopState> {
    state.net.check_dims(&sys.grid.topology)?;
    check_len("ΔW", sys.grid.channel_count(), dw.len())?;
    let mut next = state.clone();
    let mut ws = StepWorkspace::new(sys);
    step_in_place(sys, &mut next, loads, dt, dw, &mut ws)?;
    Ok(next)
}

/// In-place Euler–Maruyama step; `state` is untouched on error.
pub fn step_in_place(
    sys: &ClosedLoop,
    state: &mut ClosedLoopState,
    loads: &ZipConstants,
    dt: f64,
    dw: &[f64],
    ws: &mut StepWorkspace,
) -> Result<()> {
    sys.controller
        .update_into(&state.ctrl, &state.net.ig, &mut ws.ctrl);
    sys.grid
        .drift_into(&state.net, &ws.ctrl.u, loads, &mut ws.drift)?;
    sys.grid.diffusion_into(&state.net, &mut ws.diffusion);

    for (x, f) in state.net.fields_mut().into_iter().zip(ws.drift.fields()) {
        for (xi, fi) in x.iter_mut().zip(f) {
            *xi += fi * dt;
        }
    }
    let n = sys.node_count();
    for i in 0..n {
        state.net.i_hat[i] += ws.diffusion[i] * dw[i];
        state.net.p_hat[i] += ws.diffusion[n + i] * dw[n + i];
        state.net.g_hat[i] += ws.diffusion[2 * n + i] * dw[2 * n + i];
        state.ctrl.xi[i] += ws.ctrl.dxi[i] * dt;
        state.ctrl.eta[i] += ws.ctrl.deta[i] * dt;
    }
    Ok(())
}

/// One recorded sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub state: ClosedLoopState,
    pub u: Vec<f64>,
    /// Index of the load segment in force at this time.
    pub segment: usize,
}

impl Record {
    /// Flattened values in [`column_names`] order, without time.
    pub fn row(&self) -> Vec<f64> {
        let s = &self.state;
        s.net
            .fields()
            .into_iter()
            .flat_map(|f| f.iter().copied())
            .chain(s.ctrl.xi.iter().copied())
            .chain(s.ctrl.eta.iter().copied())
            .chain(self.u.iter().copied())
            .collect()
    }
}

/// Column names of [`Record::row`] for `n` nodes and `m` lines.
pub fn column_names(n: usize, m: usize) -> Vec<String> {
    let mut out = Vec::new();
    let per = |prefix: &str, count: usize, out: &mut Vec<String>| {
        out.extend((1..=count).map(|i| format!("{prefix}_{i}")));
    };
    per("ig", n, &mut out);
    per("v", n, &mut out);
    per("i", m, &mut out);
    per("i_hat", n, &mut out);
    per("p_hat", n, &mut out);
    per("g_hat", n, &mut out);
    per("xi", n, &mut out);
    per("eta", n, &mut out);
    per("u", n, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    LoadStep { time: f64, segment: usize },
    GuardViolation { time: f64, node: usize, voltage: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub nodes: usize,
    pub lines: usize,
    pub times: Vec<f64>,
    pub records: Vec<Record>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn column_names(&self) -> Vec<String> {
        column_names(self.nodes, self.lines)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

/// Integration stopped early; the samples recorded so far are kept.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub error: GridError,
    pub partial: Trajectory,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} recorded samples)",
            self.error,
            self.partial.len()
        )
    }
}

impl std::error::Error for SimulationFailure {}

/// Initial closed-loop state requested by the scenario.
pub fn initial_state(scenario: &Scenario) -> Result<ClosedLoopState> {
    let sys = scenario.closed_loop()?;
    let n = sys.node_count();
    let m = sys.edge_count();
    let sp = &scenario.stochastic;
    let mut x = match &scenario.initial {
        InitialCondition::Equilibrium => {
            let first = &scenario.loads.segments()[0].constants;
            let eq = solve_equilibrium(&sys, first)?;
            ClosedLoopState {
                net: NetworkState {
                    ig: eq.ig.clone(),
                    v: eq.v.clone(),
                    i_line: eq.i_line.clone(),
                    ..NetworkState::zeros(n, m)
                },
                ctrl: ControllerState {
                    xi: eq.xi.clone(),
                    eta: eq.eta.clone(),
                },
            }
        }
        InitialCondition::Nominal => ClosedLoopState {
            net: NetworkState {
                v: scenario.controller.v_star.clone(),
                ..NetworkState::zeros(n, m)
            },
            ctrl: ControllerState::zeros(n),
        },
        InitialCondition::Explicit(state) => {
            let mut s = (**state).clone();
            s.net.check_dims(&sys.grid.topology)?;
            check_len("ξ(0)", n, s.ctrl.xi.len())?;
            check_len("η(0)", n, s.ctrl.eta.len())?;
            s.net.i_hat.fill(0.0);
            s.net.p_hat.fill(0.0);
            s.net.g_hat.fill(0.0);
            s
        }
    };
    x.net.i_hat.clone_from(&sp.initial_i_hat);
    x.net.p_hat.clone_from(&sp.initial_p_hat);
    x.net.g_hat.clone_from(&sp.initial_g_hat);
    Ok(x)
}

/// Integrate `scenario` with its own seed.
pub fn simulate(scenario: &Scenario) -> std::result::Result<Trajectory, SimulationFailure> {
    simulate_with_stream(scenario, NoiseStream::new(scenario.integration.seed))
}

/// Integrate `scenario` drawing noise from `stream`.
pub fn simulate_with_stream(
    scenario: &Scenario,
    mut stream: NoiseStream,
) -> std::result::Result<Trajectory, SimulationFailure> {
    let sys = scenario.closed_loop().map_err(|error| SimulationFailure {
        error,
        partial: empty_trajectory(scenario),
    })?;
    let mut traj = empty_trajectory(scenario);
    let mut state = match initial_state(scenario) {
        Ok(s) => s,
        Err(error) => {
            return Err(SimulationFailure {
                error,
                partial: traj,
            })
        }
    };

    let settings = &scenario.integration;
    let dt = settings.dt;
    let steps = settings.step_count();
    let segments = scenario.loads.segments();
    let switch_steps: Vec<usize> = segments
        .iter()
        .map(|s| (s.start / dt).round() as usize)
        .collect();
    let n = sys.node_count();
    let shared = scenario.stochastic.shared_wiener;

    let mut seg = 0usize;
    let mut ws = StepWorkspace::new(&sys);
    let mut dw = vec![0.0; sys.grid.channel_count()];
    let mut u = vec![0.0; n];

    let push = |traj: &mut Trajectory, t: f64, state: &ClosedLoopState, seg: usize, u: &mut Vec<f64>| {
        sys.controller.input(&state.ctrl, &state.net.ig, u);
        traj.times.push(t);
        traj.records.push(Record {
            state: state.clone(),
            u: u.clone(),
            segment: seg,
        });
    };
    push(&mut traj, 0.0, &state, seg, &mut u);

    for k in 0..steps {
        while seg + 1 < segments.len() && k >= switch_steps[seg + 1] {
            seg += 1;
            traj.events.push(Event::LoadStep {
                time: k as f64 * dt,
                segment: seg,
            });
        }
        if shared {
            stream.fill_increments(dt, &mut dw[..n]);
            let (head, tail) = dw.split_at_mut(n);
            tail[..n].copy_from_slice(head);
            tail[n..].copy_from_slice(head);
        } else {
            stream.fill_increments(dt, &mut dw);
        }
        let t = k as f64 * dt;
        if let Err(error) = step_in_place(
            &sys,
            &mut state,
            &segments[seg].constants,
            dt,
            &dw,
            &mut ws,
        ) {
            if let GridError::VoltageGuard { node, voltage, .. } = error {
                traj.events.push(Event::GuardViolation {
                    time: t,
                    node,
                    voltage,
                });
            }
            return Err(SimulationFailure {
                error,
                partial: traj,
            });
        }
        if !state.is_finite() {
            return Err(SimulationFailure {
                error: GridError::NonFinite {
                    time: (k + 1) as f64 * dt,
                    detail: "state contains NaN or infinity".into(),
                },
                partial: traj,
            });
        }
        if (k + 1) % settings.record_stride == 0 || k + 1 == steps {
            push(&mut traj, (k + 1) as f64 * dt, &state, seg, &mut u);
        }
    }
    Ok(traj)
}

fn empty_trajectory(scenario: &Scenario) -> Trajectory {
    Trajectory {
        nodes: scenario.topology.node_count(),
        lines: scenario.topology.edge_count(),
        times: Vec::new(),
        records: Vec::new(),
        events: Vec::new(),
    }
}

/// Per-record statistics across ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Sample variance (`n - 1` denominator); zero for a single member.
    pub variance: Vec<Vec<f64>>,
    pub min: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
    /// Members that contributed.
    pub count: usize,
    pub nodes: usize,
    pub lines: usize,
}

impl EnsembleStats {
    /// Column index of the first entry named `prefix_1`.
    pub fn block(&self, prefix: &str) -> Option<usize> {
        let name = format!("{prefix}_1");
        self.columns.iter().position(|c| *c == name)
    }
}

#[derive(Debug)]
pub struct Ensemble {
    pub runs: Vec<std::result::Result<Trajectory, SimulationFailure>>,
    pub stats: EnsembleStats,
}

impl Ensemble {
    pub fn successes(&self) -> impl Iterator<Item = &Trajectory> {
        self.runs.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &SimulationFailure)> {
        self.runs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
    }
}

/// Run `runs` independent members; member `r` draws from substream `r` of `base_seed`.
pub fn run_ensemble(scenario: &Scenario, runs: usize, base_seed: u64) -> Result<Ensemble> {
    if runs == 0 {
        return Err(GridError::Domain("ensemble needs at least one run".into()));
    }
    scenario.closed_loop()?;
    let results: Vec<_> = (0..runs)
        .into_par_iter()
        .map(|r| simulate_with_stream(scenario, NoiseStream::substream(base_seed, r as u64)))
        .collect();
    let stats = ensemble_stats(
        scenario.topology.node_count(),
        scenario.topology.edge_count(),
        results.iter().filter_map(|r| r.as_ref().ok()),
    );
    Ok(Ensemble {
        runs: results,
        stats,
    })
}

/// Deterministic, order-fixed reduction over complete member trajectories.
pub fn ensemble_stats<'a>(
    nodes: usize,
    lines: usize,
    members: impl Iterator<Item = &'a Trajectory>,
) -> EnsembleStats {
    let members: Vec<&Trajectory> = members.collect();
    let columns = column_names(nodes, lines);
    let width = columns.len();
    let len = members.iter().map(|t| t.len()).max().unwrap_or(0);
    let full: Vec<&&Trajectory> = members.iter().filter(|t| t.len() == len).collect();
    let count = full.len();
    let times = full.first().map(|t| t.times.clone()).unwrap_or_default();

    let mut mean = vec![vec![0.0; width]; len];
    let mut m2 = vec![vec![0.0; width]; len];
    let mut min = vec![vec![f64::INFINITY; width]; len];
    let mut max = vec![vec![f64::NEG_INFINITY; width]; len];
    for (seen, traj) in full.iter().enumerate() {
        let w = (seen + 1) as f64;
        for (k, rec) in traj.records.iter().enumerate() {
            for (c, x) in rec.row().into_iter().enumerate() {
                // Welford update
                let delta = x - mean[k][c];
                mean[k][c] += delta / w;
                m2[k][c] += delta * (x - mean[k][c]);
                min[k][c] = min[k][c].min(x);
                max[k][c] = max[k][c].max(x);
            }
        }
    }
    let variance = m2
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| if count > 1 { s / (count - 1) as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    EnsembleStats {
        columns,
        times,
        mean,
        variance,
        min,
        max,
        count,
        nodes,
        lines,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{CommGraph, ControllerParams};
    use crate::grid::{ElectricalParams, Topology};
    use crate::load::StochasticParams;

    fn single_node() -> ClosedLoop {
        let t = Topology::new(1, vec![]).unwrap();
        let el = ElectricalParams {
            lg: vec![1.8e-3],
            cg: vec![2.2e-3],
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
        ClosedLoop::new(grid, c).unwrap()
    }

    #[test]
    fn increments_are_reproducible_and_scale_with_sqrt_dt() {
        let a = wiener_increments(&mut NoiseStream::new(9), 0.01, 64);
        let b = wiener_increments(&mut NoiseStream::new(9), 0.01, 64);
        assert_eq!(a, b);
        let c = wiener_increments(&mut NoiseStream::new(9), 0.04, 64);
        for (x, y) in a.iter().zip(&c) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
        let other = wiener_increments(&mut NoiseStream::substream(9, 1), 0.01, 64);
        assert_ne!(a, other);
    }

    #[test]
    fn increment_moments() {
        let n = 1_000_000;
        let dt = 0.01;
        let x = wiener_increments(&mut NoiseStream::new(2024), dt, n);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * 0.1 / 1000.0, "mean {mean}");
        assert!((var - dt).abs() < 0.01 * dt, "var {var}");
    }

    #[test]
    fn scalar_channel_step() {
        let sys = single_node();
        let loads = ZipConstants {
            g: vec![0.045],
            i: vec![0.07],
            p: vec![25.0],
        };
        let mut x = ClosedLoopState::zeros(1, 0);
        x.net.v[0] = 380.0;
        x.net.i_hat[0] = 1.0;
        let next = euler_maruyama_step(&sys, &x, &loads, 0.001, &[0.02, 0.0, 0.0]).unwrap();
        assert!((next.net.i_hat[0] - 1.0175).abs() < 1e-15);
    }

    #[test]
    fn zero_deviations_stay_zero() {
        let sys = single_node();
        let loads = ZipConstants {
            g: vec![0.045],
            i: vec![0.07],
            p: vec![25.0],
        };
        let mut x = ClosedLoopState::zeros(1, 0);
        x.net.v[0] = 380.0;
        let next = euler_maruyama_step(&sys, &x, &loads, 1e-5, &[3.0, -2.0, 1.0]).unwrap();
        assert_eq!(next.net.i_hat, vec![0.0]);
        assert_eq!(next.net.p_hat, vec![0.0]);
        assert_eq!(next.net.g_hat, vec![0.0]);
    }

    #[test]
    fn step_rejects_bad_noise_length() {
        let sys = single_node();
        let loads = ZipConstants {
            g: vec![0.045],
            i: vec![0.07],
            p: vec![25.0],
        };
        let mut x = ClosedLoopState::zeros(1, 0);
        x.net.v[0] = 380.0;
        assert!(euler_maruyama_step(&sys, &x, &loads, 1e-5, &[0.0]).is_err());
    }

    #[test]
    fn single_member_stats_have_zero_variance() {
        let traj = Trajectory {
            nodes: 1,
            lines: 0,
            times: vec![0.0, 1.0],
            records: vec![
                Record {
                    state: ClosedLoopState::zeros(1, 0),
                    u: vec![1.0],
                    segment: 0,
                },
                Record {
                    state: ClosedLoopState::zeros(1, 0),
                    u: vec![2.0],
                    segment: 0,
                },
            ],
            events: vec![],
        };
        let s = ensemble_stats(1, 0, std::iter::once(&traj));
        assert_eq!(s.count, 1);
        assert_eq!(s.mean[1], traj.records[1].row());
        assert!(s.variance.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(s.min, s.max);
    }
}
