use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use zipgrid_core::analysis::{equilibrium_residuals, solve_equilibrium};
use zipgrid_core::grid::build_incidence;
use zipgrid_core::scenario::{bundled, InitialCondition};
use zipgrid_core::{
    simulate, ClosedLoop, CommGraph, CommLink, Controller, ControllerParams, Edge,
    ElectricalParams, GridModel, StochasticParams, Topology, ZipConstants,
};

/// Damped fixed point with the constant-power term frozen at the last iterate.
fn oracle(sys: &ClosedLoop, loads: &ZipConstants) -> (Vec<f64>, f64) {
    let n = sys.node_count();
    let a = build_incidence(&sys.grid.topology);
    let g = DMatrix::from_diagonal(&DVector::from_iterator(
        sys.edge_count(),
        sys.grid.electrical.r.iter().map(|r| 1.0 / r),
    ));
    let y = &a * g * a.transpose();
    let q = &sys.controller.params.q;
    let v_star = &sys.controller.params.v_star;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = y[(i, j)];
        }
        m[(i, i)] += loads.g[i];
        m[(i, n)] = -1.0 / q[i];
        m[(n, i)] = 1.0 / q[i];
    }
    let lu = m.lu();
    let target: f64 = (0..n).map(|i| v_star[i] / q[i]).sum();
    let mut v = DVector::from_vec(v_star.clone());
    let mut share = 0.0;
    for _ in 0..20_000 {
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -loads.i[i] - loads.p[i] / v[i];
        }
        rhs[n] = target;
        let x = lu.solve(&rhs).unwrap();
        let next = 0.5 * &v + 0.5 * x.rows(0, n);
        share = x[n];
        let change = (&next - &v).amax();
        v = next;
        if change < 1e-14 {
            break;
        }
    }
    (v.iter().copied().collect(), share)
}

fn network(n: usize, chords: &[(usize, usize)], r: &[f64], q: &[f64]) -> ClosedLoop {
    let mut edges: Vec<Edge> = (0..n)
        .map(|i| Edge {
            positive: i,
            negative: (i + 1) % n,
        })
        .collect();
    for &(a, b) in chords {
        if a != b {
            edges.push(Edge {
                positive: a,
                negative: b,
            });
        }
    }
    let m = edges.len();
    let topo = Topology::new(n, edges).unwrap();
    let mut el = ElectricalParams::typical(&topo);
    el.r = (0..m).map(|k| r[k % r.len()]).collect();
    let sp = StochasticParams::uniform(n, (2.5, 1.0), (2.0, 0.7), (1.3, 0.2));
    let grid = GridModel::new(topo.clone(), el, sp).unwrap();
    let links: Vec<CommLink> = topo
        .edges()
        .iter()
        .map(|e| CommLink {
            a: e.positive,
            b: e.negative,
            weight: 1.0,
        })
        .collect();
    let params = ControllerParams {
        tau_xi: vec![1.0; n],
        tau_eta: vec![0.005; n],
        k: vec![0.4; n],
        q: q.to_vec(),
        v_star: vec![380.0; n],
    };
    let ctrl = Controller::new(params, &CommGraph::from_links(n, &links).unwrap()).unwrap();
    ClosedLoop::new(grid, ctrl).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newton_matches_fixed_point(
        n in 3usize..8,
        chords in prop::collection::vec((0usize..8, 0usize..8), 0..4),
        r in prop::collection::vec(0.02f64..0.5, 1..6),
        q in prop::collection::vec(0.5f64..2.0, 8),
        g in prop::collection::vec(0.01f64..0.1, 8),
        i in prop::collection::vec(0.0f64..1.0, 8),
        p in prop::collection::vec(1.0f64..200.0, 8),
    ) {
        let chords: Vec<(usize, usize)> = chords.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let sys = network(n, &chords, &r, &q[..n]);
        let loads = ZipConstants {
            g: g[..n].to_vec(),
            i: i[..n].iter().map(|x| x + 1e-3).collect(),
            p: p[..n].to_vec(),
        };
        let eq = solve_equilibrium(&sys, &loads).unwrap();
        prop_assert!(equilibrium_residuals(&sys, &loads, &eq).max() < 1e-10);
        let (v, share) = oracle(&sys, &loads);
        for k in 0..n {
            prop_assert!((eq.v[k] - v[k]).abs() < 1e-8, "node {k}: {} vs {}", eq.v[k], v[k]);
            prop_assert!((q[k] * eq.ig[k] - share).abs() < 1e-8);
        }
        prop_assert!((eq.ig_star - share).abs() < 1e-8);
    }
}

#[test]
fn equilibrium_start_without_noise_stays_put() {
    let mut s = bundled("four-node-case-study").unwrap();
    s.loads.steps.clear();
    s.stochastic = s.stochastic.without_noise();
    s.stochastic.initial_i_hat.fill(0.0);
    s.stochastic.initial_p_hat.fill(0.0);
    s.stochastic.initial_g_hat.fill(0.0);
    s.initial = InitialCondition::Equilibrium;
    s.integration.t_end = 0.2;
    let traj = simulate(&s).unwrap();
    let first = traj.records[0].row();
    for rec in &traj.records {
        for (a, b) in rec.row().iter().zip(&first) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
