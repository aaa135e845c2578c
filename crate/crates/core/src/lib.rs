//! Simulation and analysis of DC power networks with stochastic ZIP loads
//! under distributed current-sharing control.
//!
//! The network, load deviations and controller are integrated together as
//! one Itô SDE. The [`analysis`] module evaluates steady states, storage
//! functions and their Itô derivatives.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Failed simulations return the partial trajectory.
#![allow(clippy::result_large_err)]
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod controller;
pub mod error;
pub mod grid;
pub mod load;
pub mod output;
pub mod scenario;
pub mod sde;

pub use analysis::{Equilibrium, LyapunovWeights, Variant};
pub use controller::{CommGraph, CommLink, Controller, ControllerParams, ControllerState};
pub use error::{GridError, Result};
pub use grid::{
    ElectricalParams, Edge, GridModel, LoadStep, NetworkState, Topology, ZipConstants, ZipLoads,
};
pub use load::{analytic_moments, check_assumptions, AssumptionReport, Moments, StochasticParams};
pub use scenario::{parse_scenario, InitialCondition, Scenario};
pub use sde::{
    run_ensemble, simulate, ClosedLoop, ClosedLoopState, Ensemble, EnsembleStats,
    IntegrationSettings, NoiseStream, Trajectory,
};
