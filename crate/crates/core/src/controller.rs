//! Distributed current-sharing controller.
//!
//! Per node `i`:
//!
//! ```text
//! τξ_i dξ_i/dt = -Σ_j ρ_ij (q_i Ig_i - q_j Ig_j)
//! τη_i dη_i/dt = -η_i + Ig_i
//! u_i          = -K_i (Ig_i - η_i) + q_i Σ_j ρ_ij (ξ_i - ξ_j) + V*_i
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_positive, GridError, Result};
use crate::grid::is_connected;

/// Undirected communication link with weight `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommLink {
    pub a: usize,
    pub b: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Weighted, connected communication graph; may differ from the electrical one.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    weights: DMatrix<f64>,
}

impl CommGraph {
    pub fn from_links(node_count: usize, links: &[CommLink]) -> Result<Self> {
        let mut w = DMatrix::zeros(node_count, node_count);
        for (k, l) in links.iter().enumerate() {
            if l.a >= node_count || l.b >= node_count || l.a == l.b {
                return Err(GridError::Topology(format!(
                    "communication link {k} ({}, {}) is invalid for {node_count} nodes",
                    l.a, l.b
                )));
            }
            w[(l.a, l.b)] = l.weight;
            w[(l.b, l.a)] = l.weight;
        }
        Self::from_weight_matrix(w)
    }

    /// Accepts an explicit `ρ_ij` matrix; zero means "not neighbours".
    pub fn from_weight_matrix(weights: DMatrix<f64>) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 || weights.ncols() != n {
            return Err(GridError::Topology("weight matrix must be square and non-empty".into()));
        }
        let mut pairs = Vec::new();
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(GridError::Invariant {
                    name: "no communication self-loops",
                    detail: format!("ρ_{i}{i} = {}", weights[(i, i)]),
                });
            }
            for j in (i + 1)..n {
                let (wij, wji) = (weights[(i, j)], weights[(j, i)]);
                if wij != wji {
                    return Err(GridError::Invariant {
                        name: "symmetric communication weights",
                        detail: format!("ρ_{i}{j} = {wij} but ρ_{j}{i} = {wji}"),
                    });
                }
                if wij < 0.0 || !wij.is_finite() {
                    return Err(GridError::Invariant {
                        name: "positive communication weights",
                        detail: format!("ρ_{i}{j} = {wij}"),
                    });
                }
                if wij > 0.0 {
                    pairs.push((i, j));
                }
            }
        }
        if !is_connected(n, &pairs) {
            return Err(GridError::Topology("communication graph is not connected".into()));
        }
        Ok(Self { weights })
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&j| self.weights[(i, j)] > 0.0)
    }
}

/// Weighted Laplacian `D - W` of the communication graph.
pub fn comm_laplacian(graph: &CommGraph) -> DMatrix<f64> {
    let w = &graph.weights;
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = w.row(i).sum();
    }
    l
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub tau_xi: Vec<f64>,
    pub tau_eta: Vec<f64>,
    pub k: Vec<f64>,
    /// Sharing weights `q_i`, inversely proportional to DGU capacity.
    pub q: Vec<f64>,
    pub v_star: Vec<f64>,
}

impl ControllerParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("τ_ξ", n, self.tau_xi.len())?;
        check_len("τ_η", n, self.tau_eta.len())?;
        check_len("K", n, self.k.len())?;
        check_len("Q", n, self.q.len())?;
        check_len("V*", n, self.v_star.len())?;
        check_positive("τ_ξ > 0", &self.tau_xi)?;
        check_positive("τ_η > 0", &self.tau_eta)?;
        check_positive("K > 0", &self.k)?;
        check_positive("Q > 0", &self.q)?;
        check_positive("V* > 0", &self.v_star)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ControllerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            xi: vec![0.0; n],
            eta: vec![0.0; n],
        }
    }
}

/// Output of one controller evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerUpdate {
    pub dxi: Vec<f64>,
    pub deta: Vec<f64>,
    pub u: Vec<f64>,
}

/// Controller parameters together with the precomputed Laplacian.
#[derive(Debug, Clone)]
pub struct Controller {
    pub params: ControllerParams,
    pub laplacian: DMatrix<f64>,
}

impl Controller {
    pub fn new(params: ControllerParams, graph: &CommGraph) -> Result<Self> {
        params.validate(graph.node_count())?;
        Ok(Self {
            params,
            laplacian: comm_laplacian(graph),
        })
    }

    pub fn node_count(&self) -> usize {
        self.params.q.len()
    }

    pub fn update(&self, cs: &ControllerState, ig: &[f64]) -> Result<ControllerUpdate> {
        let n = self.node_count();
        check_len("ξ", n, cs.xi.len())?;
        check_len("η", n, cs.eta.len())?;
        check_len("I_g", n, ig.len())?;
        let mut out = ControllerUpdate {
            dxi: vec![0.0; n],
            deta: vec![0.0; n],
            u: vec![0.0; n],
        };
        self.update_into(cs, ig, &mut out);
        Ok(out)
    }

    /// Control input only.
    pub fn input(&self, cs: &ControllerState, ig: &[f64], u: &mut [f64]) {
        let p = &self.params;
        let lap = &self.laplacian;
        for i in 0..self.node_count() {
            let mut lxi = 0.0;
            for j in 0..self.node_count() {
                lxi += lap[(i, j)] * cs.xi[j];
            }
            u[i] = -p.k[i] * (ig[i] - cs.eta[i]) + p.q[i] * lxi + p.v_star[i];
        }
    }

    /// Allocation-free evaluation; dimensions are assumed consistent.
    pub fn update_into(&self, cs: &ControllerState, ig: &[f64], out: &mut ControllerUpdate) {
        let p = &self.params;
        let lap = &self.laplacian;
        let n = self.node_count();
        for i in 0..n {
            let mut lqi = 0.0;
            for j in 0..n {
                lqi += lap[(i, j)] * p.q[j] * ig[j];
            }
            out.dxi[i] = -lqi / p.tau_xi[i];
            out.deta[i] = (ig[i] - cs.eta[i]) / p.tau_eta[i];
        }
        self.input(cs, ig, &mut out.u);
    }

    /// `𝓛 Q I_g`, the consensus disagreement of weighted currents.
    pub fn disagreement(&self, ig: &[f64]) -> DVector<f64> {
        let qi = DVector::from_iterator(ig.len(), ig.iter().zip(&self.params.q).map(|(i, q)| i * q));
        &self.laplacian * qi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(a: usize, b: usize) -> CommLink {
        CommLink { a, b, weight: 1.0 }
    }

    fn params(n: usize) -> ControllerParams {
        ControllerParams {
            tau_xi: vec![1.0; n],
            tau_eta: vec![0.005; n],
            k: vec![0.4; n],
            q: vec![1.0; n],
            v_star: vec![380.0; n],
        }
    }

    #[test]
    fn two_node_laplacian() {
        let g = CommGraph::from_links(2, &[link(0, 1)]).unwrap();
        assert_eq!(
            comm_laplacian(&g),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
    }

    #[test]
    fn ring_laplacian() {
        let g = CommGraph::from_links(4, &[link(0, 1), link(1, 2), link(2, 3), link(3, 0)]).unwrap();
        let l = comm_laplacian(&g);
        for i in 0..4 {
            assert_eq!(l[(i, i)], 2.0);
            assert_eq!(l[(i, (i + 1) % 4)], -1.0);
            assert_eq!(l[(i, (i + 3) % 4)], -1.0);
            assert_eq!(l[(i, (i + 2) % 4)], 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric_and_disconnected() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(
            CommGraph::from_weight_matrix(w),
            Err(GridError::Invariant { .. })
        ));
        assert!(CommGraph::from_links(3, &[link(0, 1)]).is_err());
    }

    #[test]
    fn single_node_control_law() {
        let g = CommGraph::from_links(1, &[]).unwrap();
        let c = Controller::new(params(1), &g).unwrap();
        let cs = ControllerState {
            xi: vec![5.0],
            eta: vec![1.0],
        };
        let up = c.update(&cs, &[2.0]).unwrap();
        assert!((up.u[0] - 379.6).abs() < 1e-12);
        assert_eq!(up.dxi[0], 0.0);
    }

    #[test]
    fn consensus_and_filter_fixed_point() {
        let g = CommGraph::from_links(3, &[link(0, 1), link(1, 2)]).unwrap();
        let c = Controller::new(params(3), &g).unwrap();
        let cs = ControllerState {
            xi: vec![0.3, -0.1, 0.7],
            eta: vec![4.0, 4.0, 4.0],
        };
        let up = c.update(&cs, &[4.0, 4.0, 4.0]).unwrap();
        assert!(up.dxi.iter().all(|x| x.abs() < 1e-15));
        assert!(up.deta.iter().all(|x| *x == 0.0));
        let lxi = &c.laplacian * DVector::from_vec(cs.xi.clone());
        for i in 0..3 {
            assert!((up.u[i] - (lxi[i] + 380.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let g = CommGraph::from_links(2, &[link(0, 1)]).unwrap();
        let c = Controller::new(params(2), &g).unwrap();
        assert!(matches!(
            c.update(&ControllerState::zeros(2), &[1.0]),
            Err(GridError::Dimension { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn laplacian_spectrum_and_conservation(
            n in 2usize..7,
            extra in proptest::collection::vec((0usize..6, 0usize..6, 0.1f64..5.0), 0..8),
            weights in proptest::collection::vec(0.1f64..5.0, 6),
            ig in proptest::collection::vec(-20.0f64..20.0, 6),
        ) {
            let mut links: Vec<CommLink> = (0..n - 1).map(|i| CommLink { a: i, b: i + 1, weight: weights[i] }).collect();
            for (a, b, w) in extra {
                if a < n && b < n && a != b && !links.iter().any(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a)) {
                    links.push(CommLink { a, b, weight: w });
                }
            }
            let g = CommGraph::from_links(n, &links).unwrap();
            let l = comm_laplacian(&g);
            proptest::prop_assert!((&l - l.transpose()).amax() == 0.0);
            for row in l.row_iter() {
                proptest::prop_assert!(row.sum().abs() < 1e-12);
            }
            let eig = l.clone().symmetric_eigenvalues();
            let mut ev: Vec<f64> = eig.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            proptest::prop_assert!(ev[0].abs() < 1e-9);
            proptest::prop_assert!(ev[1] > 1e-9);

            let mut p = params(n);
            p.tau_xi = vec![2.5; n];
            let c = Controller::new(p, &g).unwrap();
            let up = c.update(&ControllerState::zeros(n), &ig[..n]).unwrap();
            let weighted: f64 = up.dxi.iter().map(|d| 2.5 * d).sum();
            proptest::prop_assert!(weighted.abs() < 1e-9);
        }
    }
}
