//! Scenario documents.
//!
//! A scenario is a TOML document. Nodes and lines are numbered from 1 in the
//! document and from 0 in code. Any per-node or per-line quantity may be
//! given as a single number (applied everywhere) or as a list. Unknown keys
//! are rejected.
//!
//! ```toml
//! name = "ring"
//!
//! [topology]
//! nodes = 4
//! edges = [[1, 2], [2, 3], [3, 4], [4, 1]]   # optional, default ring
//!
//! [electrical]                                # optional, typical values
//! lg = 1.8e-3
//! cg = 2.2e-3
//! r = 70e-3
//! l = 2e-6
//!
//! [loads]
//! g = 0.045
//! i = [0.07, 0.045, 0.06, 0.08]
//! p = [25, 10, 25, 20]
//!
//! [[loads.steps]]
//! time = 1.0
//! delta_p = [8, 5, -8, 3]                     # missing deltas are zero
//!
//! [stochastic]
//! mu_i = 2.5
//! sigma_i = 1.0
//! mu_p = 2.0
//! sigma_p = 0.7
//! mu_g = 1.3
//! sigma_g = 0.2
//! # initial_i_hat, initial_p_hat, initial_g_hat: default 0.1 × the base constants
//! # shared_wiener = false
//!
//! [controller]
//! tau_xi = 1.0
//! tau_eta = 0.005
//! k = 0.4
//! # q = 1.0, v_star = 380.0
//!
//! [communication]                             # optional, default = electrical edges
//! links = [[1, 2], [2, 3], [3, 4], [4, 1]]
//! weights = 1.0
//!
//! [weights]                                   # optional
//! pi = 1e3
//! sigma = 1e-7
//! lambda = 1e-7
//! eta = "tau-eta-gain"                        # or "tau-eta"
//!
//! [integration]                               # optional
//! dt = 1e-5
//! t_end = 3.0
//! record_stride = 100                         # default: one record per ms
//! seed = 0
//! voltage_guard = 1.0
//!
//! [initial]                                   # optional
//! mode = "equilibrium"                        # "nominal" or "explicit"
//! # explicit: ig, v, i_line, xi, eta
//! ```

use serde::{Deserialize, Serialize};

use crate::analysis::lyapunov::{EtaWeighting, LyapunovWeights};
use crate::controller::{CommGraph, CommLink, Controller, ControllerParams, ControllerState};
use crate::error::{check_len, GridError, Result};
use crate::grid::{
    ElectricalParams, Edge, GridModel, LoadStep, NetworkState, Topology, ZipConstants, ZipLoads,
    DEFAULT_VOLTAGE_GUARD,
};
use crate::load::StochasticParams;
use crate::sde::{ClosedLoop, ClosedLoopState, IntegrationSettings};

pub const DEFAULT_DT: f64 = 1e-5;
pub const DEFAULT_T_END: f64 = 3.0;
/// Records are taken every `DEFAULT_RECORD_INTERVAL` seconds unless a stride is given.
pub const DEFAULT_RECORD_INTERVAL: f64 = 1e-3;
pub const DEFAULT_V_STAR: f64 = 380.0;
/// Initial deviations default to this fraction of the base load constants.
pub const DEFAULT_INITIAL_DEVIATION: f64 = 0.1;

const CASE_STUDY: &str = include_str!("../scenarios/four-node-case-study.toml");

/// Names of the scenarios shipped with the library.
pub const BUNDLED: &[&str] = &["four-node-case-study"];

pub fn bundled(name: &str) -> Result<Scenario> {
    match name {
        "four-node-case-study" => parse_scenario(CASE_STUDY),
        other => Err(GridError::Scenario(format!(
            "unknown bundled scenario `{other}` (available: {})",
            BUNDLED.join(", ")
        ))),
    }
}

/// Where integration starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Steady state of the first load segment.
    Equilibrium,
    /// `V = V*`, every current and controller state zero.
    Nominal,
    /// Given electrical and controller states; deviations come from the stochastic section.
    Explicit(Box<ClosedLoopState>),
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub topology: Topology,
    pub electrical: ElectricalParams,
    pub loads: ZipLoads,
    pub stochastic: StochasticParams,
    pub controller: ControllerParams,
    pub communication: Vec<CommLink>,
    pub weights: LyapunovWeights,
    pub integration: IntegrationSettings,
    pub voltage_guard: f64,
    pub initial: InitialCondition,
}

impl Scenario {
    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        self.electrical.validate(&self.topology)?;
        self.loads.validate(n)?;
        self.stochastic.validate(n)?;
        self.controller.validate(n)?;
        self.weights.validate(n)?;
        self.integration.validate()?;
        CommGraph::from_links(n, &self.communication)?;
        if !(self.voltage_guard >= 0.0) {
            return Err(GridError::Invariant {
                name: "voltage_guard >= 0",
                detail: format!("{}", self.voltage_guard),
            });
        }
        if let InitialCondition::Explicit(x) = &self.initial {
            x.net.check_dims(&self.topology)?;
            check_len("ξ(0)", n, x.ctrl.xi.len())?;
            check_len("η(0)", n, x.ctrl.eta.len())?;
        }
        Ok(())
    }

    pub fn grid_model(&self) -> Result<GridModel> {
        Ok(GridModel::new(
            self.topology.clone(),
            self.electrical.clone(),
            self.stochastic.clone(),
        )?
        .with_voltage_guard(self.voltage_guard))
    }

    pub fn comm_graph(&self) -> Result<CommGraph> {
        CommGraph::from_links(self.node_count(), &self.communication)
    }

    pub fn closed_loop(&self) -> Result<ClosedLoop> {
        let controller = Controller::new(self.controller.clone(), &self.comm_graph()?)?;
        ClosedLoop::new(self.grid_model()?, controller)
    }

    /// Normalized document with every default spelled out.
    pub fn to_document(&self) -> ScenarioDocument {
        let many = |v: &[f64]| Some(Values::Many(v.to_vec()));
        let pair = |a: usize, b: usize| [a + 1, b + 1];
        let (mode, explicit) = match &self.initial {
            InitialCondition::Equilibrium => (InitialMode::Equilibrium, None),
            InitialCondition::Nominal => (InitialMode::Nominal, None),
            InitialCondition::Explicit(x) => (InitialMode::Explicit, Some(x.as_ref())),
        };
        ScenarioDocument {
            name: self.name.clone(),
            description: Some(self.description.clone()),
            topology: TopologyDoc {
                nodes: self.node_count(),
                edges: Some(
                    self.topology
                        .edges()
                        .iter()
                        .map(|e| pair(e.positive, e.negative))
                        .collect(),
                ),
            },
            electrical: Some(ElectricalDoc {
                lg: many(&self.electrical.lg),
                cg: many(&self.electrical.cg),
                r: many(&self.electrical.r),
                l: many(&self.electrical.l),
            }),
            loads: LoadsDoc {
                g: Values::Many(self.loads.base.g.clone()),
                i: Values::Many(self.loads.base.i.clone()),
                p: Values::Many(self.loads.base.p.clone()),
                steps: self
                    .loads
                    .steps
                    .iter()
                    .map(|s| StepDoc {
                        time: s.time,
                        delta_g: many(&s.delta_g),
                        delta_i: many(&s.delta_i),
                        delta_p: many(&s.delta_p),
                    })
                    .collect(),
            },
            stochastic: StochasticDoc {
                mu_i: Values::Many(self.stochastic.mu_i.clone()),
                sigma_i: Values::Many(self.stochastic.sigma_i.clone()),
                mu_p: Values::Many(self.stochastic.mu_p.clone()),
                sigma_p: Values::Many(self.stochastic.sigma_p.clone()),
                mu_g: Values::Many(self.stochastic.mu_g.clone()),
                sigma_g: Values::Many(self.stochastic.sigma_g.clone()),
                initial_i_hat: many(&self.stochastic.initial_i_hat),
                initial_p_hat: many(&self.stochastic.initial_p_hat),
                initial_g_hat: many(&self.stochastic.initial_g_hat),
                shared_wiener: Some(self.stochastic.shared_wiener),
            },
            controller: ControllerDoc {
                tau_xi: Values::Many(self.controller.tau_xi.clone()),
                tau_eta: Values::Many(self.controller.tau_eta.clone()),
                k: Values::Many(self.controller.k.clone()),
                q: many(&self.controller.q),
                v_star: many(&self.controller.v_star),
            },
            communication: Some(CommunicationDoc {
                links: self.communication.iter().map(|l| pair(l.a, l.b)).collect(),
                weights: Some(Values::Many(
                    self.communication.iter().map(|l| l.weight).collect(),
                )),
            }),
            weights: Some(WeightsDoc {
                pi: many(&self.weights.pi),
                sigma: many(&self.weights.sigma),
                lambda: many(&self.weights.lambda),
                eta: Some(self.weights.eta),
            }),
            integration: Some(IntegrationDoc {
                dt: Some(self.integration.dt),
                t_end: Some(self.integration.t_end),
                record_stride: Some(self.integration.record_stride),
                seed: Some(self.integration.seed),
                voltage_guard: Some(self.voltage_guard),
            }),
            initial: Some(InitialDoc {
                mode,
                ig: explicit.and_then(|x| many(&x.net.ig)),
                v: explicit.and_then(|x| many(&x.net.v)),
                i_line: explicit.and_then(|x| many(&x.net.i_line)),
                xi: explicit.and_then(|x| many(&x.ctrl.xi)),
                eta: explicit.and_then(|x| many(&x.ctrl.eta)),
            }),
        }
    }

    /// Normalized TOML dump; parsing it yields the same scenario.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_document()).map_err(|e| GridError::Scenario(e.to_string()))
    }

    pub fn from_document(doc: ScenarioDocument) -> Result<Self> {
        let n = doc.topology.nodes;
        let topology = match &doc.topology.edges {
            Some(edges) => Topology::new(
                n,
                edges
                    .iter()
                    .map(|[a, b]| {
                        Ok(Edge {
                            positive: one_based(*a, n, "topology.edges")?,
                            negative: one_based(*b, n, "topology.edges")?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )?,
            None => Topology::ring(n)?,
        };
        let m = topology.edge_count();

        let typical = ElectricalParams::typical(&topology);
        let electrical = match &doc.electrical {
            Some(e) => ElectricalParams {
                lg: or_default(&e.lg, "electrical.lg", n, &typical.lg)?,
                cg: or_default(&e.cg, "electrical.cg", n, &typical.cg)?,
                r: or_default(&e.r, "electrical.r", m, &typical.r)?,
                l: or_default(&e.l, "electrical.l", m, &typical.l)?,
            },
            None => typical,
        };

        let base = ZipConstants {
            g: doc.loads.g.expand("loads.g", n)?,
            i: doc.loads.i.expand("loads.i", n)?,
            p: doc.loads.p.expand("loads.p", n)?,
        };
        let zeros = vec![0.0; n];
        let steps = doc
            .loads
            .steps
            .iter()
            .map(|s| {
                Ok(LoadStep {
                    time: s.time,
                    delta_g: or_default(&s.delta_g, "loads.steps.delta_g", n, &zeros)?,
                    delta_i: or_default(&s.delta_i, "loads.steps.delta_i", n, &zeros)?,
                    delta_p: or_default(&s.delta_p, "loads.steps.delta_p", n, &zeros)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let sd = &doc.stochastic;
        let scaled = |v: &[f64]| v.iter().map(|x| DEFAULT_INITIAL_DEVIATION * x).collect::<Vec<_>>();
        let stochastic = StochasticParams {
            mu_i: sd.mu_i.expand("stochastic.mu_i", n)?,
            sigma_i: sd.sigma_i.expand("stochastic.sigma_i", n)?,
            mu_p: sd.mu_p.expand("stochastic.mu_p", n)?,
            sigma_p: sd.sigma_p.expand("stochastic.sigma_p", n)?,
            mu_g: sd.mu_g.expand("stochastic.mu_g", n)?,
            sigma_g: sd.sigma_g.expand("stochastic.sigma_g", n)?,
            initial_i_hat: or_default(&sd.initial_i_hat, "stochastic.initial_i_hat", n, &scaled(&base.i))?,
            initial_p_hat: or_default(&sd.initial_p_hat, "stochastic.initial_p_hat", n, &scaled(&base.p))?,
            initial_g_hat: or_default(&sd.initial_g_hat, "stochastic.initial_g_hat", n, &scaled(&base.g))?,
            shared_wiener: sd.shared_wiener.unwrap_or(false),
        };

        let cd = &doc.controller;
        let controller = ControllerParams {
            tau_xi: cd.tau_xi.expand("controller.tau_xi", n)?,
            tau_eta: cd.tau_eta.expand("controller.tau_eta", n)?,
            k: cd.k.expand("controller.k", n)?,
            q: or_default(&cd.q, "controller.q", n, &vec![1.0; n])?,
            v_star: or_default(&cd.v_star, "controller.v_star", n, &vec![DEFAULT_V_STAR; n])?,
        };

        let communication = match &doc.communication {
            Some(c) => {
                let w = or_default(&c.weights, "communication.weights", c.links.len(), &vec![1.0; c.links.len()])?;
                c.links
                    .iter()
                    .zip(w)
                    .map(|([a, b], weight)| {
                        Ok(CommLink {
                            a: one_based(*a, n, "communication.links")?,
                            b: one_based(*b, n, "communication.links")?,
                            weight,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => topology
                .edges()
                .iter()
                .map(|e| CommLink {
                    a: e.positive,
                    b: e.negative,
                    weight: 1.0,
                })
                .collect(),
        };

        let standard = LyapunovWeights::standard(n);
        let weights = match &doc.weights {
            Some(w) => LyapunovWeights {
                pi: or_default(&w.pi, "weights.pi", n, &standard.pi)?,
                sigma: or_default(&w.sigma, "weights.sigma", n, &standard.sigma)?,
                lambda: or_default(&w.lambda, "weights.lambda", n, &standard.lambda)?,
                eta: w.eta.unwrap_or_default(),
            },
            None => standard,
        };

        let id = doc.integration.clone().unwrap_or_default();
        let dt = id.dt.unwrap_or(DEFAULT_DT);
        let integration = IntegrationSettings {
            dt,
            t_end: id.t_end.unwrap_or(DEFAULT_T_END),
            record_stride: id
                .record_stride
                .unwrap_or_else(|| ((DEFAULT_RECORD_INTERVAL / dt).round() as usize).max(1)),
            seed: id.seed.unwrap_or(0),
        };

        let initial = match &doc.initial {
            None => InitialCondition::Equilibrium,
            Some(i) => match i.mode {
                InitialMode::Equilibrium => InitialCondition::Equilibrium,
                InitialMode::Nominal => InitialCondition::Nominal,
                InitialMode::Explicit => {
                    let need = |v: &Option<Values>, what: &'static str, len: usize| match v {
                        Some(v) => v.expand(what, len),
                        None => Err(GridError::Scenario(format!(
                            "initial mode \"explicit\" requires `{what}`"
                        ))),
                    };
                    InitialCondition::Explicit(Box::new(ClosedLoopState {
                        net: NetworkState {
                            ig: need(&i.ig, "initial.ig", n)?,
                            v: need(&i.v, "initial.v", n)?,
                            i_line: need(&i.i_line, "initial.i_line", m)?,
                            ..NetworkState::zeros(n, m)
                        },
                        ctrl: ControllerState {
                            xi: need(&i.xi, "initial.xi", n)?,
                            eta: need(&i.eta, "initial.eta", n)?,
                        },
                    }))
                }
            },
        };

        let scenario = Scenario {
            name: doc.name,
            description: doc.description.unwrap_or_default(),
            topology,
            electrical,
            loads: ZipLoads { base, steps },
            stochastic,
            controller,
            communication,
            weights,
            integration,
            voltage_guard: id.voltage_guard.unwrap_or(DEFAULT_VOLTAGE_GUARD),
            initial,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDocument =
        toml::from_str(text).map_err(|e| GridError::Scenario(e.to_string()))?;
    Scenario::from_document(doc)
}

fn one_based(index: usize, n: usize, what: &str) -> Result<usize> {
    if index == 0 || index > n {
        return Err(GridError::Scenario(format!(
            "`{what}`: node {index} outside 1..={n}"
        )));
    }
    Ok(index - 1)
}

fn or_default(v: &Option<Values>, what: &'static str, len: usize, default: &[f64]) -> Result<Vec<f64>> {
    match v {
        Some(v) => v.expand(what, len),
        None => Ok(default.to_vec()),
    }
}

/// A number applied to every entry, or one number per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    Many(Vec<f64>),
}

impl Values {
    pub fn expand(&self, what: &'static str, len: usize) -> Result<Vec<f64>> {
        match self {
            Values::One(x) => Ok(vec![*x; len]),
            Values::Many(v) => {
                check_len(what, len, v.len())?;
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub topology: TopologyDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrical: Option<ElectricalDoc>,
    pub loads: LoadsDoc,
    pub stochastic: StochasticDoc,
    pub controller: ControllerDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub communication: Option<CommunicationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectricalDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lg: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Values>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadsDoc {
    pub g: Values,
    pub i: Values,
    pub p: Values,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDoc {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_g: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_i: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_p: Option<Values>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticDoc {
    pub mu_i: Values,
    pub sigma_i: Values,
    pub mu_p: Values,
    pub sigma_p: Values,
    pub mu_g: Values,
    pub sigma_g: Values,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_i_hat: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_p_hat: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_g_hat: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_wiener: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDoc {
    pub tau_xi: Values,
    pub tau_eta: Values,
    pub k: Values,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_star: Option<Values>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunicationDoc {
    pub links: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Values>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaWeighting>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_guard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    Equilibrium,
    Nominal,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDoc {
    pub mode: InitialMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ig: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_line: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Values>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
[topology]
nodes = 3
[loads]
g = 0.05
i = 0.1
p = 20
[stochastic]
mu_i = 2.0
sigma_i = 0.5
mu_p = 2.0
sigma_p = 0.5
mu_g = 1.0
sigma_g = 0.1
[controller]
tau_xi = 1
tau_eta = 0.01
k = 0.5
"#;

    #[test]
    fn defaults_are_applied_and_echoed() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.weights, LyapunovWeights::standard(3));
        assert_eq!(s.topology.edge_count(), 3);
        assert_eq!(s.controller.v_star, vec![380.0; 3]);
        assert_eq!(s.integration.dt, 1e-5);
        assert_eq!(s.integration.record_stride, 100);
        assert_eq!(s.initial, InitialCondition::Equilibrium);
        assert_eq!(s.communication.len(), 3);
        let dump = s.to_toml().unwrap();
        assert!(dump.contains("[weights]"));
        assert!(dump.contains("0.0000001") || dump.contains("1e-7"));
        assert_eq!(parse_scenario(&dump).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("k = 0.5", "k = 0.5\ngain = 2");
        let err = parse_scenario(&text).unwrap_err().to_string();
        assert!(err.contains("gain"), "{err}");
    }

    #[test]
    fn negative_capacitance_names_the_invariant() {
        let text = format!("{MINIMAL}[electrical]\ncg = [2e-3, -1e-3, 2e-3]\n");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, GridError::Invariant { name: "Cg > 0", .. }), "{err}");
    }

    #[test]
    fn list_length_is_checked() {
        let text = MINIMAL.replace("p = 20", "p = [20, 30]");
        assert!(matches!(
            parse_scenario(&text),
            Err(GridError::Dimension { .. })
        ));
    }

    #[test]
    fn node_indices_are_one_based() {
        let text = MINIMAL.replace("nodes = 3", "nodes = 3\nedges = [[1, 2], [2, 3]]");
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.topology.edges()[1], Edge { positive: 1, negative: 2 });
        let bad = MINIMAL.replace("nodes = 3", "nodes = 3\nedges = [[0, 1]]");
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn explicit_initial_state_round_trips() {
        let text = format!(
            "{MINIMAL}[initial]\nmode = \"explicit\"\nig = 1\nv = 379\ni_line = 0\nxi = 0\neta = 1\n"
        );
        let s = parse_scenario(&text).unwrap();
        assert!(matches!(s.initial, InitialCondition::Explicit(_)));
        assert_eq!(parse_scenario(&s.to_toml().unwrap()).unwrap(), s);
        let missing = format!("{MINIMAL}[initial]\nmode = \"explicit\"\nig = 1\n");
        assert!(parse_scenario(&missing).is_err());
    }

    #[test]
    fn case_study_values() {
        let s = bundled("four-node-case-study").unwrap();
        assert_eq!(s.node_count(), 4);
        assert_eq!(s.controller.k, vec![0.4; 4]);
        assert_eq!(s.controller.tau_eta, vec![0.005; 4]);
        assert_eq!(s.controller.tau_xi, vec![1.0; 4]);
        assert_eq!(s.loads.base.p, vec![25.0, 10.0, 25.0, 20.0]);
        assert_eq!(s.loads.base.i, vec![0.07, 0.045, 0.06, 0.08]);
        assert_eq!(s.loads.base.g, vec![0.045; 4]);
        assert_eq!(s.loads.steps.len(), 1);
        assert_eq!(s.loads.steps[0].time, 1.0);
        assert_eq!(s.loads.steps[0].delta_p, vec![8.0, 5.0, -8.0, 3.0]);
        assert_eq!(s.stochastic.mu_i, vec![2.5; 4]);
        assert_eq!(s.stochastic.sigma_i, vec![1.0; 4]);
        assert_eq!(s.stochastic.mu_p, vec![2.0; 4]);
        assert_eq!(s.stochastic.sigma_p, vec![0.7; 4]);
        assert_eq!(s.stochastic.mu_g, vec![1.3; 4]);
        assert_eq!(s.stochastic.sigma_g, vec![0.2; 4]);
        assert_eq!(parse_scenario(&s.to_toml().unwrap()).unwrap(), s);
    }

    #[test]
    fn unknown_bundle() {
        assert!(bundled("nope").is_err());
    }
}
