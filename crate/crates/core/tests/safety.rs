use platoon_core::integrator::Rk4;
use platoon_core::safety::{ego_step, recapture_control, safe_gap, verify_fallback, EgoModel, EmergencyProfile};
use platoon_core::{presets, run_scenario, SafetyConfig, VehicleState};

fn cfg(decel: f64, pred: f64) -> SafetyConfig {
    SafetyConfig { emergency: EmergencyProfile { jerk: 1e6, decel }, pred_max_decel: pred, ..SafetyConfig::default() }
}

const FAST: EgoModel = EgoModel { tau: 1e-3, length: 0.0, bounds: None, brake_limit: -8.0 };

#[test]
fn verdict_matches_stopping_distance_kinematics() {
    let c = cfg(8.0, 10.0);
    let ego = VehicleState::new(0.0, 20.0, 0.0, 0.0);
    // Ego needs 20²/16 = 25 m, the predecessor 20²/20 = 20 m.
    let short = VehicleState::new(4.0, 20.0, 0.0, 0.0);
    let v = verify_fallback(&ego, &FAST, &short, 0.0, &c, 0.001);
    assert!(!v.safe);
    assert!((v.min_gap - (4.0 - 5.0)).abs() < 0.05, "{}", v.min_gap);
    let long = VehicleState::new(6.0, 20.0, 0.0, 0.0);
    assert!(verify_fallback(&ego, &FAST, &long, 0.0, &c, 0.001).safe);
    let sg = safe_gap(&ego, &FAST, &long, 0.0, &c, 0.001);
    assert!((sg - 5.0).abs() < 0.05, "{sg}");
}

#[test]
fn emergency_profile_stops_within_analytic_time() {
    let p = EmergencyProfile { jerk: 10.0, decel: 8.0 };
    let (tau, dt) = (0.05, 0.001);
    let mut x = [0.0, 15.0, 0.0];
    let mut rk = Rk4::new();
    let mut t = 0.0;
    while x[1] > 0.0 {
        let base = t;
        ego_step(&mut x, tau, None, dt, |s| p.command(0.0, base + s), &mut rk);
        t += dt;
    }
    let expect = p.stopping_time(15.0, 0.0, 0.0, tau);
    assert!((t - expect).abs() <= dt + 1e-9, "stopped at {t}, expected {expect}");
}

#[test]
fn cut_in_at_safe_distance_needs_no_action() {
    let c = cfg(8.0, 8.0);
    let ego = VehicleState::new(0.0, 20.0, 0.0, 0.0);
    let probe = VehicleState::new(1e3, 20.0, 0.0, 0.0);
    let sg = safe_gap(&ego, &FAST, &probe, 0.0, &c, 0.01);
    let pred = VehicleState::new(sg, 20.0, 0.0, 0.0);
    assert_eq!(recapture_control(&ego, &FAST, &pred, sg, 5.0, &c).unwrap(), 0.0);
}

#[test]
fn full_brake_pair() {
    let off = run_scenario(&presets::safety_brake(false)).unwrap();
    let on = run_scenario(&presets::safety_brake(true)).unwrap();
    assert!(off.metrics.collision);
    assert!(!on.metrics.collision && on.metrics.min_gap() > 0.0);
    assert_eq!(on.metrics.fallback_failures, 0);
    assert!(on.metrics.fallback_checks > 0);
}
