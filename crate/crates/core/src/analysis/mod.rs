//! Steady states, storage functions, Itô derivatives, Ω regions and goal metrics.

pub mod equilibrium;
pub mod lyapunov;
pub mod metrics;
pub mod omega;
pub mod sampling;

pub use equilibrium::{equilibrium_residuals, solve_equilibrium, Equilibrium, EquilibriumResiduals};
pub use lyapunov::{
    expansion_defect, ito_derivative_direct, ito_derivative_expanded, storage, AnalysisContext,
    EtaWeighting, ItoTerms, LyapunovWeights, Variant,
};
pub use metrics::{
    ensemble_goal_metrics, goal_metrics, omega_trace, segment_equilibria, supermartingale_check,
    trajectory_goal_metrics, GoalMetrics, OmegaTrace, SupermartingaleReport,
};
pub use omega::{omega_matrix, omega_scan, OmegaEntry, OmegaReport, OmegaScan};
pub use sampling::{
    closed_loop_sign_suite, identity_suite, passivity_suite, IdentityReport, PassivityReport,
    SamplingBox, SignReport,
};
