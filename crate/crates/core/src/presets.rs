//! Ready-made scenarios: the six-vehicle heterogeneous platoon and the
//! paired experiments built on it.

use crate::controller::ControllerMode;
use crate::safety::EmergencyProfile;
use crate::scenario::{CutIn, FailureWindow, LeaderProfile, Merge, ScenarioConfig};
use crate::vehicle::VehicleParams;

/// Engine time constants of the reference platoon, leader first.
pub const TAU: [f64; 6] = [0.10, 0.20, 0.05, 0.30, 0.15, 0.075];
pub const KP: [f64; 6] = [0.20, 0.10, 0.40, 0.067, 0.133, 0.267];
pub const KD: [f64; 6] = [0.70, 0.35, 1.40, 0.23, 0.467, 0.933];
/// Symmetric acceleration limits, m/s².
pub const A_LIMIT: [f64; 6] = [0.425, 0.35, 0.375, 0.40, 0.325, 0.45];

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 7] = ["reference", "accel-limits", "comm-failure", "safety-brake", "cut-in", "merge", "sinusoid"];

pub const SUITES: [&str; 6] = ["accel-limits", "comm-failure", "safety-brake", "cut-in", "merge", "sinusoid"];

fn vehicle(i: usize, length: f64) -> VehicleParams {
    VehicleParams { tau: TAU[i], kp: KP[i], kd: KD[i], a_max: A_LIMIT[i], a_min: -A_LIMIT[i], length }
}

/// The six heterogeneous vehicles with their acceleration limits.
pub fn reference_params() -> Vec<VehicleParams> {
    (0..6).map(|i| vehicle(i, 0.0)).collect()
}

/// Self-organizing platoon at `h = 0.7` cruising at `v0` for 60 s.
pub fn reference_platoon(v0: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(reference_params(), 0.7, 60.0, v0);
    c.name = "reference".into();
    c
}

/// Trapezoid leader at ±0.425 m/s² through the tight limits. `resilient`
/// switches on saturation to the agreed bounds with anti-windup.
pub fn accel_limits(resilient: bool) -> ScenarioConfig {
    let mut c = reference_platoon(10.0);
    c.name = format!("accel-limits-{}", if resilient { "on" } else { "off" });
    c.duration = 160.0;
    c.leader = LeaderProfile::Trapezoid {
        accel: 0.425,
        decel: 0.425,
        start: 10.0,
        accel_time: 40.0,
        cruise_time: 30.0,
        decel_time: 40.0,
    };
    c.controller.limits_enabled = resilient;
    c
}

/// Leader maneuvers while every link is down from 20 s to 100 s.
pub fn comm_failure(observer: bool) -> ScenarioConfig {
    let mut c = reference_platoon(20.0);
    c.name = format!("comm-failure-{}", if observer { "observer" } else { "acc" });
    c.duration = 120.0;
    c.leader = LeaderProfile::Piecewise {
        segments: vec![[30.0, 0.0], [15.0, 0.3], [15.0, 0.0], [15.0, -0.3], [45.0, 0.0]],
    };
    c.comm_failures = vec![FailureWindow { start: 20.0, end: 100.0, followers: vec![] }];
    c.controller.observer_enabled = observer;
    c
}

/// Short headway, leader brakes at 9 m/s² from 15 m/s. Followers can only
/// brake at 5 to 6.5 m/s² in normal operation.
pub fn safety_brake(layer: bool) -> ScenarioConfig {
    let decel = [9.0, 5.0, 6.5, 5.5, 6.0, 5.0];
    let vehicles = (0..6)
        .map(|i| VehicleParams {
            tau: TAU[i].min(0.1),
            a_max: 2.0,
            a_min: -decel[i],
            ..vehicle(i, 4.5)
        })
        .collect();
    let mut c = ScenarioConfig::new(vehicles, 0.3, 30.0, 15.0);
    c.name = format!("safety-brake-{}", if layer { "on" } else { "off" });
    c.leader = LeaderProfile::FullBrake { time: 5.0, decel: 9.0 };
    c.safety.enabled = layer;
    c.safety.emergency = EmergencyProfile { jerk: 100.0, decel: 9.0 };
    c.safety.pred_max_decel = 9.0;
    c
}

/// A vehicle cuts in ahead of the third vehicle at half its safe distance.
pub fn cut_in() -> ScenarioConfig {
    let vehicles = (0..6).map(|i| VehicleParams { a_max: 2.0, a_min: -8.0, ..vehicle(i, 4.5) }).collect();
    let mut c = ScenarioConfig::new(vehicles, 0.7, 90.0, 20.0);
    c.name = "cut-in".into();
    c.safety.enabled = true;
    c.safety.pred_max_decel = 8.0;
    c.safety.emergency = EmergencyProfile { jerk: 50.0, decel: 8.0 };
    c.cut_ins = vec![CutIn {
        time: 20.0,
        position: 3,
        gap_fraction: 0.5,
        vehicle: VehicleParams { tau: 0.12, kp: 0.2, kd: 0.7, a_max: 2.0, a_min: -8.0, length: 4.5 },
    }];
    c
}

/// Three vehicles join behind the tail off their equilibrium gap.
pub fn merge() -> ScenarioConfig {
    let mut c = reference_platoon(20.0);
    c.name = "merge".into();
    c.duration = 120.0;
    c.vehicles.truncate(4);
    c.merges = vec![Merge { time: 20.0, gap: 18.0, speed: Some(19.0), vehicles: vec![vehicle(4, 0.0), vehicle(5, 0.0), vehicle(2, 0.0)] }];
    c
}

/// First five reference vehicles behind a leader oscillating 15 ± 6 m/s.
pub fn sinusoid(period: f64, group_model: bool) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(reference_params()[..5].to_vec(), 0.7, 3.0 * period, 15.0);
    c.name = format!("sinusoid-{period}-{}", if group_model { "group" } else { "hetero" });
    c.leader = LeaderProfile::Sinusoid { mean: 15.0, amplitude: 6.0, period };
    c.physical_accel_clamp = false;
    c.controller.mode = if group_model { ControllerMode::SelfOrganizing } else { ControllerMode::HeterogeneousBaseline };
    c
}

/// Named base scenario for the CLI.
pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    Some(match name {
        "reference" => reference_platoon(20.0),
        "accel-limits" => accel_limits(true),
        "comm-failure" => comm_failure(true),
        "safety-brake" => safety_brake(true),
        "cut-in" => cut_in(),
        "merge" => merge(),
        "sinusoid" => sinusoid(70.0, true),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in NAMES {
            by_name(name).unwrap().validate().unwrap();
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn kp_tau_average() {
        let avg: f64 = reference_params().iter().map(|p| p.kp_tau()).sum::<f64>() / 6.0;
        assert!((avg - 0.0200125).abs() < 1e-12);
    }
}
