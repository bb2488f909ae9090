//! Baseline CACC law, homogenizing inputs and the anti-windup variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{char_poly, routh_hurwitz};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    /// Each vehicle runs the baseline law with its own gains.
    HeterogeneousBaseline,
    /// Homogenizing inputs toward fixed, precomputed group parameters.
    StaticHomogenized,
    /// Homogenizing inputs toward the running consensus estimates.
    #[default]
    SelfOrganizing,
}

impl ControllerMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerMode::HeterogeneousBaseline => "heterogeneous-baseline",
            ControllerMode::StaticHomogenized => "static-homogenized",
            ControllerMode::SelfOrganizing => "self-organizing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerConfig {
    #[serde(default)]
    pub mode: ControllerMode,
    /// Saturate the command to the max-min bounds and freeze `u_bl` at the bounds.
    #[serde(default)]
    pub limits_enabled: bool,
    /// Replace a missing predecessor signal by the observer estimate.
    #[serde(default)]
    pub observer_enabled: bool,
}

/// Group parameters a vehicle homogenizes toward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub tau: f64,
    pub kp: f64,
    pub kd: f64,
}

impl GroupParams {
    /// From consensus variables `(K̄pτ, K̄d, τ̄)`.
    pub fn from_consensus(kp_tau: f64, kd: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config(format!(
                "consensus time constant must stay positive, got {tau}"
            )));
        }
        Ok(GroupParams { tau, kp: kp_tau / tau, kd })
    }

    pub fn of_vehicle(p: &VehicleParams) -> Self {
        GroupParams { tau: p.tau, kp: p.kp, kd: p.kd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    pub u: f64,
    pub u_bl_dot: f64,
    pub xi: f64,
}

/// Follower feedback signal `ξ = kp·e + kd·ė + ξ_hm + u_bl,pred`.
///
/// A missing predecessor signal is a communication failure; callers that
/// degrade to on-board sensing pass `Some(0.0)` or an observer estimate.
pub fn baseline_xi(
    e: f64,
    e_dot: f64,
    kp: f64,
    kd: f64,
    xi_hm: f64,
    u_bl_pred: Option<f64>,
    vehicle: usize,
) -> Result<f64> {
    let coop = u_bl_pred.ok_or(Error::CommunicationFailure { vehicle })?;
    Ok(kp * e + kd * e_dot + xi_hm + coop)
}

/// The leader tracks its reference acceleration directly.
pub fn leader_xi(u_r: f64) -> f64 {
    u_r
}

/// `(u_hm, ξ_hm)` steering a vehicle toward the group model `bar`.
pub fn homogenizing_inputs(
    a: f64,
    u_bl: f64,
    e: f64,
    e_dot: f64,
    params: &VehicleParams,
    bar: &GroupParams,
) -> Result<(f64, f64)> {
    if !(bar.tau > 0.0) {
        return Err(Error::config(format!("group time constant must be positive, got {}", bar.tau)));
    }
    let u_hm = (bar.tau - params.tau) / bar.tau * (a - u_bl);
    let xi_hm = (bar.kp - params.kp) * e + (bar.kd - params.kd) * e_dot;
    Ok((u_hm, xi_hm))
}

/// ξ when the predecessor signal is replaced by an observer estimate.
pub fn observer_control_xi(e: f64, e_dot: f64, kp0: f64, kd0: f64, u_bl_hat: f64) -> f64 {
    kp0 * e + kd0 * e_dot + u_bl_hat
}

fn band(bound: f64) -> f64 {
    1e-9 * bound.abs().max(1.0)
}

/// Which anti-windup branch applies for a (saturated) command `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindupBranch {
    FrozenHigh,
    Integrating,
    FrozenLow,
}

pub fn windup_branch(u: f64, u_bl: f64, xi: f64, a_max_bar: f64, a_min_bar: f64) -> WindupBranch {
    let drive = -u_bl + xi;
    if u >= a_max_bar - band(a_max_bar) && drive >= 0.0 {
        WindupBranch::FrozenHigh
    } else if u <= a_min_bar + band(a_min_bar) && drive <= 0.0 {
        WindupBranch::FrozenLow
    } else {
        WindupBranch::Integrating
    }
}

/// Anti-windup baseline dynamics: integration stops while the command sits
/// on a bound and the drive pushes further outward.
pub fn constrained_ubl_dot(u: f64, u_bl: f64, xi: f64, a_max_bar: f64, a_min_bar: f64, h: f64) -> f64 {
    match windup_branch(u, u_bl, xi, a_max_bar, a_min_bar) {
        WindupBranch::Integrating => (-u_bl + xi) / h,
        _ => 0.0,
    }
}

pub fn ubl_dot(u_bl: f64, xi: f64, h: f64) -> f64 {
    (-u_bl + xi) / h
}

pub fn saturate_command(u: f64, a_min_bar: f64, a_max_bar: f64) -> f64 {
    u.clamp(a_min_bar, a_max_bar)
}

/// Magnitude of the acceleration transfer `1/(h s + 1)` at frequency `omega`.
pub fn string_stability_gain(h: f64, omega: f64) -> f64 {
    1.0 / (1.0 + h * h * omega * omega).sqrt()
}

/// Follower closed-loop matrix for the state `[e, ν, a, u_bl]` of the
/// homogenized platoon.
pub fn closed_loop_matrix(h: f64, g: &GroupParams) -> [[f64; 4]; 4] {
    [
        [0.0, 1.0, -h, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0 / g.tau, 1.0 / g.tau],
        [g.kp / h, g.kd / h, -g.kd, -1.0 / h],
    ]
}

/// Leader block for `[a, u_bl]`.
pub fn leader_matrix(h: f64, g: &GroupParams) -> [[f64; 2]; 2] {
    [[-1.0 / g.tau, 1.0 / g.tau], [0.0, -1.0 / h]]
}

/// Routh test on the characteristic polynomial of the follower matrix.
pub fn closed_loop_is_hurwitz(h: f64, g: &GroupParams) -> bool {
    let f = closed_loop_matrix(h, g);
    let rows: Vec<Vec<f64>> = f.iter().map(|r| r.to_vec()).collect();
    routh_hurwitz(&char_poly(&rows))
}

/// The simple sufficient conditions `h > 0, kp, kd > 0, kd > τ·kp`.
pub fn group_conditions_hold(h: f64, g: &GroupParams) -> bool {
    h > 0.0 && g.kp > 0.0 && g.kd > 0.0 && g.kd > g.tau * g.kp
}
