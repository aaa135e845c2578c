use zipgrid_core::scenario::{bundled, parse_scenario, InitialCondition};
use zipgrid_core::sde::Event;
use zipgrid_core::{run_ensemble, simulate, GridError, Scenario};

fn deterministic_case(t_end: f64, dt: f64) -> Scenario {
    let mut s = bundled("four-node-case-study").unwrap();
    s.stochastic = s.stochastic.without_noise();
    s.stochastic.initial_i_hat.fill(0.0);
    s.stochastic.initial_p_hat.fill(0.0);
    s.stochastic.initial_g_hat.fill(0.0);
    s.loads.steps.clear();
    s.integration.t_end = t_end;
    s.integration.dt = dt;
    s.integration.record_stride = (t_end / dt).round() as usize;
    s
}

fn endpoint(s: &Scenario) -> Vec<f64> {
    simulate(s).unwrap().last().unwrap().row()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn noise_off_converges_at_first_order() {
    let t = 0.02;
    let reference = endpoint(&deterministic_case(t, 2.5e-7));
    let e1 = distance(&endpoint(&deterministic_case(t, 4e-6)), &reference);
    let e2 = distance(&endpoint(&deterministic_case(t, 2e-6)), &reference);
    let e3 = distance(&endpoint(&deterministic_case(t, 1e-6)), &reference);
    for ratio in [e1 / e2, e2 / e3] {
        assert!((1.6..2.6).contains(&ratio), "errors {e1:e} {e2:e} {e3:e}");
    }
}

/// One node with slow electrical and filter dynamics, so coarse steps stay stable.
fn slow_node(dt: f64) -> Scenario {
    parse_scenario(&format!(
        r#"
name = "slow"
[topology]
nodes = 1
[electrical]
lg = 100.0
cg = 100.0
[loads]
g = 0.045
i = 1.0
p = 25.0
[stochastic]
mu_i = 2.5
sigma_i = 1.0
mu_p = 2.0
sigma_p = 0.7
mu_g = 1.3
sigma_g = 0.2
initial_i_hat = 1.0
initial_p_hat = 1.0
initial_g_hat = 0.01
[controller]
tau_xi = 1.0
tau_eta = 1.0
k = 0.4
[integration]
dt = {dt}
t_end = 1.0
record_stride = {}
"#,
        (1.0 / dt).round() as usize
    ))
    .unwrap()
}

#[test]
fn weak_error_of_the_mean_shrinks_with_dt() {
    let exact = (-2.5f64).exp();
    let mut errors = Vec::new();
    for dt in [0.1, 0.05, 0.025] {
        let e = run_ensemble(&slow_node(dt), 4000, 3).unwrap();
        let k = e.stats.times.len() - 1;
        let col = e.stats.block("i_hat").unwrap();
        errors.push((e.stats.mean[k][col] - exact).abs());
    }
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.integration.t_end = 0.05;
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| run_ensemble(&s, 6, 11).unwrap());
    let four = pool(4).install(|| run_ensemble(&s, 6, 11).unwrap());
    assert_eq!(one.stats, four.stats);
}

#[test]
fn single_member_has_zero_variance() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.integration.t_end = 0.02;
    let e = run_ensemble(&s, 1, 4).unwrap();
    assert!(e.stats.variance.iter().flatten().all(|v| *v == 0.0));
    let member = e.successes().next().unwrap();
    assert_eq!(e.stats.mean.last().unwrap(), &member.last().unwrap().row());
}

#[test]
fn members_use_distinct_streams() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.integration.t_end = 0.02;
    let e = run_ensemble(&s, 2, 4).unwrap();
    let runs: Vec<_> = e.successes().collect();
    assert_ne!(runs[0].last().unwrap().row(), runs[1].last().unwrap().row());

    s.stochastic = s.stochastic.without_noise();
    let e = run_ensemble(&s, 2, 4).unwrap();
    let runs: Vec<_> = e.successes().collect();
    assert_eq!(runs[0].last().unwrap().row(), runs[1].last().unwrap().row());
}

#[test]
fn shared_wiener_changes_the_path_not_the_shape() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.integration.t_end = 0.02;
    let a = simulate(&s).unwrap();
    s.stochastic.shared_wiener = true;
    let b = simulate(&s).unwrap();
    assert_eq!(a.len(), b.len());
    assert_eq!(a.records[0], b.records[0]);
    assert_ne!(a.last().unwrap().row(), b.last().unwrap().row());
}

#[test]
fn load_step_is_recorded() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.integration.t_end = 1.01;
    let traj = simulate(&s).unwrap();
    assert!(traj
        .events
        .iter()
        .any(|e| matches!(e, Event::LoadStep { segment: 1, time } if (time - 1.0).abs() < 1e-9)));
    let at = |t: f64| traj.times.iter().position(|x| (x - t).abs() < 1e-9).unwrap();
    assert_eq!(traj.records[at(1.0)].segment, 0);
    assert_eq!(traj.records[at(1.001)].segment, 1);
}

#[test]
fn voltage_collapse_stops_with_partial_trajectory() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.initial = InitialCondition::Nominal;
    s.loads.base.g = vec![50.0; 4];
    s.integration.t_end = 0.5;
    s.voltage_guard = 300.0;
    let failure = simulate(&s).unwrap_err();
    assert!(matches!(failure.error, GridError::VoltageGuard { .. }), "{failure}");
    assert!(!failure.partial.is_empty());
    assert!(failure
        .partial
        .events
        .iter()
        .any(|e| matches!(e, Event::GuardViolation { .. })));
}
