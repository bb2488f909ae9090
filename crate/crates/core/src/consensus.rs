//! Average consensus on the group gains and max-min consensus on the
//! acceleration bounds, over a bidirectional chain.

use serde::{Deserialize, Serialize};

use crate::controller::GroupParams;
use crate::integrator::Rk4;
use crate::vehicle::VehicleParams;

/// Undirected predecessor-follower chain. Edge `k` joins nodes `k` and `k+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    active: Vec<bool>,
}

impl CommGraph {
    pub fn chain(n: usize) -> Self {
        CommGraph { n, active: vec![true; n.saturating_sub(1)] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edge_count(&self) -> usize {
        self.active.len()
    }

    pub fn set_edge(&mut self, edge: usize, up: bool) {
        self.active[edge] = up;
    }

    pub fn edge_active(&self, edge: usize) -> bool {
        self.active[edge]
    }

    /// Active neighbors of node `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let left = (i > 0 && self.active[i - 1]).then(|| i - 1);
        let right = (i + 1 < self.n && self.active[i]).then_some(i + 1);
        left.into_iter().chain(right)
    }

    pub fn is_connected(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    /// Algebraic connectivity of the full path graph, `2 - 2cos(π/n)`.
    pub fn path_algebraic_connectivity(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        2.0 - 2.0 * (std::f64::consts::PI / self.n as f64).cos()
    }
}

/// `ẋ_i = μ Σ_{j∈N_i} (x_j - x_i)` written into `out`.
pub fn average_consensus_derivative_into(values: &[f64], graph: &CommGraph, mu: f64, out: &mut [f64]) {
    for i in 0..values.len() {
        out[i] = mu * graph.neighbors(i).map(|j| values[j] - values[i]).sum::<f64>();
    }
}

pub fn average_consensus_derivative(values: &[f64], graph: &CommGraph, mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    average_consensus_derivative_into(values, graph, mu, &mut out);
    out
}

/// Sign-dynamics derivatives `(dā_max, dā_min)`. The max estimate moves down
/// when neighbors disagree downward, the min estimate moves up; a node whose
/// disagreement sum is within `deadband` holds still.
pub fn maxmin_consensus_derivative(
    max: &[f64],
    min: &[f64],
    graph: &CommGraph,
    deadband: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = max.len();
    let mut d_max = vec![0.0; n];
    let mut d_min = vec![0.0; n];
    for i in 0..n {
        let s_max: f64 = graph.neighbors(i).map(|j| max[j] - max[i]).sum();
        let s_min: f64 = graph.neighbors(i).map(|j| min[j] - min[i]).sum();
        if s_max < -deadband {
            d_max[i] = -1.0;
        }
        if s_min > deadband {
            d_min[i] = 1.0;
        }
    }
    (d_max, d_min)
}

/// One explicit step of the max-min flow at slew `rate`. A moving node stops
/// at the most extreme neighbor value instead of stepping past it.
pub fn maxmin_step(max: &mut [f64], min: &mut [f64], graph: &CommGraph, rate: f64, dt: f64, deadband: f64) {
    let (d_max, d_min) = maxmin_consensus_derivative(max, min, graph, deadband);
    let old_max = max.to_vec();
    let old_min = min.to_vec();
    for i in 0..max.len() {
        if d_max[i] != 0.0 {
            let floor = graph.neighbors(i).map(|j| old_max[j]).fold(f64::INFINITY, f64::min);
            max[i] = (old_max[i] + rate * dt * d_max[i]).max(floor);
        }
        if d_min[i] != 0.0 {
            let ceil = graph.neighbors(i).map(|j| old_min[j]).fold(f64::NEG_INFINITY, f64::max);
            min[i] = (old_min[i] + rate * dt * d_min[i]).min(ceil);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(default = "two")]
    pub mu_p: f64,
    #[serde(default = "two")]
    pub mu_d: f64,
    #[serde(default = "two")]
    pub mu_tau: f64,
    /// Slew of the sign dynamics, m/s² per second.
    #[serde(default = "one")]
    pub maxmin_rate: f64,
    #[serde(default = "deadband")]
    pub deadband: f64,
}

fn two() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}
fn deadband() -> f64 {
    1e-6
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { mu_p: 2.0, mu_d: 2.0, mu_tau: 2.0, maxmin_rate: 1.0, deadband: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub k_ptau_bar: Vec<f64>,
    pub k_d_bar: Vec<f64>,
    pub tau_bar: Vec<f64>,
    pub a_max_bar: Vec<f64>,
    pub a_min_bar: Vec<f64>,
    pub cfg: ConsensusConfig,
}

impl ConsensusState {
    /// Initial values are each vehicle's own parameters.
    pub fn new(params: &[VehicleParams], cfg: ConsensusConfig) -> Self {
        ConsensusState {
            k_ptau_bar: params.iter().map(|p| p.kp_tau()).collect(),
            k_d_bar: params.iter().map(|p| p.kd).collect(),
            tau_bar: params.iter().map(|p| p.tau).collect(),
            a_max_bar: params.iter().map(|p| p.a_max).collect(),
            a_min_bar: params.iter().map(|p| p.a_min).collect(),
            cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.tau_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_bar.is_empty()
    }

    pub fn group(&self, i: usize) -> GroupParams {
        GroupParams {
            tau: self.tau_bar[i],
            kp: self.k_ptau_bar[i] / self.tau_bar[i],
            kd: self.k_d_bar[i],
        }
    }

    /// Advances the average flow with RK4 and then the max-min flow with one
    /// explicit step.
    pub fn step(&mut self, graph: &CommGraph, dt: f64, rk: &mut Rk4) {
        let n = self.len();
        let mut x = Vec::with_capacity(3 * n);
        x.extend_from_slice(&self.k_ptau_bar);
        x.extend_from_slice(&self.k_d_bar);
        x.extend_from_slice(&self.tau_bar);
        let mus = [self.cfg.mu_p, self.cfg.mu_d, self.cfg.mu_tau];
        rk.step(0.0, &mut x, dt, |_, x, dx| {
            for (k, mu) in mus.iter().enumerate() {
                let r = k * n..(k + 1) * n;
                average_consensus_derivative_into(&x[r.clone()], graph, *mu, &mut dx[r]);
            }
        });
        self.k_ptau_bar.copy_from_slice(&x[..n]);
        self.k_d_bar.copy_from_slice(&x[n..2 * n]);
        self.tau_bar.copy_from_slice(&x[2 * n..]);
        maxmin_step(
            &mut self.a_max_bar,
            &mut self.a_min_bar,
            graph,
            self.cfg.maxmin_rate,
            dt,
            self.cfg.deadband,
        );
    }
}

/// Analytic consensus limits: means of the averaged quantities and the
/// worst-case bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusLimits {
    pub k_ptau0: f64,
    pub k_d0: f64,
    pub tau0: f64,
    pub a_max0: f64,
    pub a_min0: f64,
}

impl ConsensusLimits {
    pub fn group(&self) -> GroupParams {
        GroupParams { tau: self.tau0, kp: self.k_ptau0 / self.tau0, kd: self.k_d0 }
    }
}

pub fn consensus_limits(params: &[VehicleParams]) -> ConsensusLimits {
    let n = params.len().max(1) as f64;
    ConsensusLimits {
        k_ptau0: params.iter().map(|p| p.kp_tau()).sum::<f64>() / n,
        k_d0: params.iter().map(|p| p.kd).sum::<f64>() / n,
        tau0: params.iter().map(|p| p.tau).sum::<f64>() / n,
        a_max0: params.iter().map(|p| p.a_max).fold(f64::INFINITY, f64::min),
        a_min0: params.iter().map(|p| p.a_min).fold(f64::NEG_INFINITY, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_neighbors() {
        let mut g = CommGraph::chain(4);
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.neighbors(2).collect::<Vec<_>>(), vec![1, 3]);
        g.set_edge(1, false);
        assert_eq!(g.neighbors(2).collect::<Vec<_>>(), vec![3]);
        assert!(!g.is_connected());
    }

    #[test]
    fn average_examples() {
        let g = CommGraph::chain(2);
        assert_eq!(average_consensus_derivative(&[0.0, 1.0], &g, 1.0), vec![1.0, -1.0]);
        let g = CommGraph::chain(5);
        assert!(average_consensus_derivative(&[0.3; 5], &g, 2.0).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn maxmin_examples() {
        let g = CommGraph::chain(2);
        let (d, _) = maxmin_consensus_derivative(&[0.45, 0.325], &[-1.0, -1.0], &g, 1e-6);
        assert_eq!(d, vec![-1.0, 0.0]);
        let (d_max, d_min) = maxmin_consensus_derivative(&[0.4; 3], &[-0.4; 3], &CommGraph::chain(3), 1e-6);
        assert!(d_max.iter().chain(&d_min).all(|&x| x == 0.0));
    }

    #[test]
    fn maxmin_step_stops_at_neighbor() {
        let g = CommGraph::chain(2);
        let mut max = [0.33, 0.325];
        let mut min = [-0.33, -0.325];
        maxmin_step(&mut max, &mut min, &g, 1.0, 0.01, 1e-6);
        assert_eq!(max, [0.325, 0.325]);
        assert_eq!(min, [-0.325, -0.325]);
    }

    #[test]
    fn isolated_node_freezes() {
        let mut g = CommGraph::chain(3);
        g.set_edge(0, false);
        g.set_edge(1, false);
        let d = average_consensus_derivative(&[1.0, 2.0, 3.0], &g, 2.0);
        assert_eq!(d, vec![0.0; 3]);
    }

    #[test]
    fn single_vehicle_limits() {
        let p = VehicleParams::new(0.1, 0.2, 0.7, 0.4, -0.5, 0.0).unwrap();
        let l = consensus_limits(&[p]);
        assert_eq!((l.tau0, l.k_d0, l.a_max0, l.a_min0), (0.1, 0.7, 0.4, -0.5));
        assert!((l.k_ptau0 - 0.02).abs() < 1e-15);
    }
}
