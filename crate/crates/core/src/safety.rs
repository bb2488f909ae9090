//! Per-cycle verification by forward simulation, the emergency-braking
//! fallback and the cut-in recapturing law.
//!
//! A candidate input is accepted only if holding it for one cycle and then
//! braking with the emergency profile keeps a positive gap against a
//! predecessor that brakes as hard as allowed from the same instant. The ego
//! side of the plan uses exactly the plant's arithmetic, so an accepted plan
//! replays bit-for-bit in the simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::vehicle::{clamp_after_step, limited_rates, VehicleState};

/// Jerk-limited ramp from the current command to `-decel`, held to standstill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmergencyProfile {
    /// Ramp slope magnitude, m/s³.
    pub jerk: f64,
    /// Final deceleration magnitude, m/s².
    pub decel: f64,
}

impl Default for EmergencyProfile {
    fn default() -> Self {
        EmergencyProfile { jerk: 10.0, decel: 8.0 }
    }
}

impl EmergencyProfile {
    pub fn command(&self, u0: f64, elapsed: f64) -> f64 {
        (u0 - self.jerk * elapsed).max(-self.decel)
    }

    pub fn ramp_time(&self, u0: f64) -> f64 {
        ((u0 + self.decel) / self.jerk).max(0.0)
    }

    /// Stopping time of a first-order-lag vehicle (`tau`) starting at speed
    /// `v0` and acceleration `a0` under this profile, assuming it is still
    /// moving when the ramp ends and the lag transient has died out.
    pub fn stopping_time(&self, v0: f64, a0: f64, u0: f64, tau: f64) -> f64 {
        let u0 = u0.max(-self.decel);
        let tr = self.ramp_time(u0);
        let ramp_integral = u0 * tr - 0.5 * self.jerk * tr * tr;
        tr + (v0 + ramp_integral + tau * (self.decel + a0)) / self.decel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Verification period, s.
    #[serde(default = "d_cycle")]
    pub cycle: f64,
    #[serde(default)]
    pub emergency: EmergencyProfile,
    /// Worst-case predecessor deceleration magnitude, m/s².
    #[serde(default = "d_pred")]
    pub pred_max_decel: f64,
    /// Deceleration magnitude a cut-in vehicle is assumed not to exceed, m/s².
    #[serde(default = "d_cutin")]
    pub cutin_assumed_decel: f64,
    /// Time allowed to restore a safe gap after a cut-in, s.
    #[serde(default = "d_horizon")]
    pub recapture_horizon: f64,
    /// Extra gap the recapturing law aims for beyond the bare safe gap, m.
    #[serde(default = "d_margin")]
    pub recapture_margin: f64,
    /// Hard cap on the simulated verification horizon, s.
    #[serde(default = "d_max_horizon")]
    pub max_horizon: f64,
}

fn d_cycle() -> f64 {
    0.1
}
fn d_pred() -> f64 {
    10.0
}
fn d_cutin() -> f64 {
    1.0
}
fn d_horizon() -> f64 {
    5.0
}
fn d_margin() -> f64 {
    0.5
}
fn d_max_horizon() -> f64 {
    120.0
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            enabled: false,
            cycle: d_cycle(),
            emergency: EmergencyProfile::default(),
            pred_max_decel: d_pred(),
            cutin_assumed_decel: d_cutin(),
            recapture_horizon: d_horizon(),
            recapture_margin: d_margin(),
            max_horizon: d_max_horizon(),
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.cycle > 0.0) || !(self.pred_max_decel > 0.0) {
            return Err(Error::config("safety cycle and pred_max_decel must be positive"));
        }
        if !(self.emergency.jerk > 0.0 && self.emergency.decel > 0.0) {
            return Err(Error::config("emergency profile must have positive jerk and deceleration"));
        }
        if !(self.cutin_assumed_decel >= 0.0 && self.recapture_horizon > 0.0 && self.max_horizon > 0.0) {
            return Err(Error::config("recapture settings must be positive"));
        }
        let steps = self.cycle / dt;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(Error::config(format!(
                "safety cycle {} must be a whole multiple of dt {dt}",
                self.cycle
            )));
        }
        Ok(())
    }

    pub fn cycle_steps(&self, dt: f64) -> u64 {
        (self.cycle / dt).round().max(1.0) as u64
    }
}

/// What the plan needs to know about the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoModel {
    pub tau: f64,
    pub length: f64,
    /// Acceleration bounds in normal operation, if the plant enforces any.
    pub bounds: Option<(f64, f64)>,
    /// Brake limit the recapturing law may use, m/s² (negative).
    pub brake_limit: f64,
}

impl EgoModel {
    /// During emergency braking the lower bound extends to the profile.
    pub fn emergency_bounds(&self, profile: &EmergencyProfile) -> Option<(f64, f64)> {
        self.bounds.map(|(lo, hi)| (lo.min(-profile.decel), hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub min_gap: f64,
    pub t_min_gap: f64,
}

/// Predecessor braking at `b` until standstill, exact kinematics.
pub fn advance_braking(q: f64, v: f64, b: f64, dt: f64) -> (f64, f64) {
    if v <= 0.0 {
        (q, 0.0)
    } else if v <= b * dt {
        (q + v * v / (2.0 * b), 0.0)
    } else {
        (q + v * dt - 0.5 * b * dt * dt, v - b * dt)
    }
}

/// One plant-identical RK4 step of the ego `[q, v, a]` under `u(s)` where
/// `s` is the stage offset inside the step.
pub fn ego_step<U: Fn(f64) -> f64>(
    x: &mut [f64; 3],
    tau: f64,
    bounds: Option<(f64, f64)>,
    dt: f64,
    u: U,
    rk: &mut Rk4,
) {
    rk.step(0.0, x, dt, |s, x, dx| {
        dx.copy_from_slice(&limited_rates(x, tau, u(s), bounds));
    });
    let (v, a) = x.split_at_mut(2);
    clamp_after_step(&mut v[1], &mut a[0], bounds);
}

fn simulate_plan(
    ego: &VehicleState,
    model: &EgoModel,
    pred: &VehicleState,
    hold: Option<f64>,
    eb_u0: f64,
    cfg: &SafetyConfig,
    dt: f64,
) -> SafetyVerdict {
    let mut rk = Rk4::new();
    let n_hold = if hold.is_some() { cfg.cycle_steps(dt) } else { 0 };
    let u0 = hold.unwrap_or(eb_u0);
    let eb_bounds = model.emergency_bounds(&cfg.emergency);
    let mut x = [ego.q, ego.v, ego.a];
    let (mut qp, mut vp) = (pred.q, pred.v.max(0.0));
    let mut min_gap = qp - x[0] - model.length;
    let mut t_min = 0.0;
    let max_steps = (cfg.max_horizon / dt).ceil() as u64;
    for j in 0..max_steps {
        if j < n_hold {
            let u = u0;
            ego_step(&mut x, model.tau, model.bounds, dt, |_| u, &mut rk);
        } else {
            let base = (j - n_hold) as f64 * dt;
            let prof = cfg.emergency;
            ego_step(&mut x, model.tau, eb_bounds, dt, |s| prof.command(u0, base + s), &mut rk);
        }
        (qp, vp) = advance_braking(qp, vp, cfg.pred_max_decel, dt);
        let gap = qp - x[0] - model.length;
        if gap < min_gap {
            min_gap = gap;
            t_min = (j + 1) as f64 * dt;
        }
        if j >= n_hold && x[1] <= 0.0 && vp <= 0.0 {
            break;
        }
    }
    SafetyVerdict { safe: min_gap > 0.0, min_gap, t_min_gap: t_min }
}

/// Verifies holding `u_candidate` for one cycle followed by emergency braking.
pub fn verify_input(
    ego: &VehicleState,
    model: &EgoModel,
    pred: &VehicleState,
    u_candidate: f64,
    cfg: &SafetyConfig,
    dt: f64,
) -> SafetyVerdict {
    simulate_plan(ego, model, pred, Some(u_candidate), 0.0, cfg, dt)
}

/// Verifies emergency braking from now, ramping from the command `u0`.
pub fn verify_fallback(
    ego: &VehicleState,
    model: &EgoModel,
    pred: &VehicleState,
    u0: f64,
    cfg: &SafetyConfig,
    dt: f64,
) -> SafetyVerdict {
    simulate_plan(ego, model, pred, None, u0, cfg, dt)
}

/// Smallest current gap for which braking now is verified safe. The planned
/// trajectories do not depend on the gap, so the minimum gap shifts one for
/// one with the initial gap.
pub fn safe_gap(ego: &VehicleState, model: &EgoModel, pred: &VehicleState, u0: f64, cfg: &SafetyConfig, dt: f64) -> f64 {
    let gap = pred.q - ego.q - model.length;
    gap - verify_fallback(ego, model, pred, u0, cfg, dt).min_gap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SafetyMode {
    #[default]
    Nominal,
    EmergencyBraking,
    Recapturing,
}

impl SafetyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SafetyMode::Nominal => "NOMINAL",
            SafetyMode::EmergencyBraking => "EMERGENCY_BRAKING",
            SafetyMode::Recapturing => "RECAPTURING",
        }
    }
}

/// A verified emergency plan: ramp from `u0` starting at step `start_step`,
/// with the acceleration bounds the plan was checked under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fallback {
    pub u0: f64,
    pub start_step: u64,
    pub bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Applied {
    /// Constant command over the cycle.
    Hold(f64),
    /// Emergency profile anchored at a step index.
    Emergency(Fallback),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyDecision {
    pub mode: SafetyMode,
    pub applied: Applied,
    pub fallback: Option<Fallback>,
}

/// Statechart transition for one cycle starting at `step`. `verdict` is the
/// verification of `u_nominal` under `bounds`. Recapturing is resolved by the
/// caller when the verdict is unsafe.
pub fn safety_step(
    mode: SafetyMode,
    fallback: Option<Fallback>,
    verdict: &SafetyVerdict,
    u_nominal: f64,
    step: u64,
    cycle_steps: u64,
    bounds: Option<(f64, f64)>,
) -> Result<SafetyDecision> {
    match mode {
        SafetyMode::EmergencyBraking => {
            let fb = fallback.ok_or_else(|| Error::Safety("emergency braking without a plan".into()))?;
            Ok(SafetyDecision {
                mode,
                applied: Applied::Emergency(fb),
                fallback,
            })
        }
        _ if verdict.safe => Ok(SafetyDecision {
            mode: SafetyMode::Nominal,
            applied: Applied::Hold(u_nominal),
            fallback: Some(Fallback { u0: u_nominal, start_step: step + cycle_steps, bounds }),
        }),
        SafetyMode::Nominal => {
            let fb = fallback.ok_or_else(|| Error::Safety("no verified fallback before the first nominal input".into()))?;
            Ok(SafetyDecision {
                mode: SafetyMode::EmergencyBraking,
                applied: Applied::Emergency(fb),
                fallback: Some(fb),
            })
        }
        SafetyMode::Recapturing => Err(Error::Safety("unsafe verdict while recapturing is handled by the recapture law".into())),
    }
}

/// Braking command that opens the gap to `target_gap` within
/// `time_remaining`, assuming the new predecessor brakes at most at
/// `cfg.cutin_assumed_decel`. Zero when the gap is already sufficient.
pub fn recapture_control(
    ego: &VehicleState,
    model: &EgoModel,
    pred: &VehicleState,
    target_gap: f64,
    time_remaining: f64,
    cfg: &SafetyConfig,
) -> Result<f64> {
    let gap = pred.q - ego.q - model.length;
    let deficit = target_gap - gap;
    if deficit <= 0.0 {
        return Ok(0.0);
    }
    let t = time_remaining.max(cfg.cycle);
    let closing = ego.v - pred.v;
    let needed = (deficit + closing * t).max(0.0);
    let decel = 2.0 * needed / (t * t) + cfg.cutin_assumed_decel;
    if -decel < model.brake_limit {
        return Err(Error::Safety(format!(
            "recapture needs {decel:.3} m/s² of braking, beyond the limit {:.3}",
            -model.brake_limit
        )));
    }
    Ok(-decel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EgoModel {
        EgoModel { tau: 0.1, length: 0.0, bounds: None, brake_limit: -8.0 }
    }

    #[test]
    fn stationary_pair_keeps_gap() {
        let ego = VehicleState::default();
        let pred = VehicleState::new(7.0, 0.0, 0.0, 0.0);
        let v = verify_input(&ego, &model(), &pred, 0.0, &SafetyConfig::default(), 0.01);
        assert!(v.safe);
        assert_eq!(v.min_gap, 7.0);
    }

    #[test]
    fn braking_state_machine() {
        let safe = SafetyVerdict { safe: true, min_gap: 1.0, t_min_gap: 0.0 };
        let unsafe_ = SafetyVerdict { safe: false, min_gap: -1.0, t_min_gap: 0.0 };
        let d = safety_step(SafetyMode::Nominal, None, &safe, 0.3, 10, 10, None).unwrap();
        assert_eq!(d.applied, Applied::Hold(0.3));
        let fb = Fallback { u0: 0.3, start_step: 20, bounds: None };
        assert_eq!(d.fallback, Some(fb));
        let d2 = safety_step(d.mode, d.fallback, &unsafe_, 0.5, 20, 10, None).unwrap();
        assert_eq!(d2.mode, SafetyMode::EmergencyBraking);
        assert_eq!(d2.applied, Applied::Emergency(fb));
        assert!(safety_step(SafetyMode::Nominal, None, &unsafe_, 0.0, 0, 10, None).is_err());
        // absorbing
        let d3 = safety_step(d2.mode, d2.fallback, &safe, 0.5, 30, 10, None).unwrap();
        assert_eq!(d3.mode, SafetyMode::EmergencyBraking);
    }

    #[test]
    fn profile_ramp() {
        let p = EmergencyProfile { jerk: 10.0, decel: 8.0 };
        assert_eq!(p.command(0.0, 0.0), 0.0);
        assert!((p.command(0.0, 0.5) + 5.0).abs() < 1e-12);
        assert_eq!(p.command(0.0, 2.0), -8.0);
        assert!((p.ramp_time(0.0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn recapture_examples() {
        let cfg = SafetyConfig { cutin_assumed_decel: 0.0, ..Default::default() };
        let ego = VehicleState::new(0.0, 20.0, 0.0, 0.0);
        let pred = VehicleState::new(10.0, 20.0, 0.0, 0.0);
        assert_eq!(recapture_control(&ego, &model(), &pred, 10.0, 5.0, &cfg).unwrap(), 0.0);
        let u = recapture_control(&ego, &model(), &pred, 15.0, 5.0, &cfg).unwrap();
        assert!((0.5 * -u * 25.0 - 5.0).abs() < 1e-12);
        assert!(recapture_control(&ego, &model(), &pred, 200.0, 1.0, &cfg).is_err());
    }
}
