mod common;

use platoon_core::{build_observer_matrices, consensus_limits, linalg::is_positive_definite3, presets, run_scenario, ObserverConfig};

#[test]
fn design_for_consensus_group_is_valid() {
    let g = consensus_limits(&presets::reference_params()).group();
    let m = build_observer_matrices(&g, 0.7, &ObserverConfig::default()).unwrap();
    assert!(m.lyapunov_residual() < 1e-9);
    assert!(is_positive_definite3(&m.p_o));
    assert!(m.matching_residual() < 1e-12);
    assert_eq!(m.matching_ranks(), (1, 0));
}

#[test]
fn projected_switching_error_shrinks_with_epsilon() {
    let errs: Vec<f64> = [0.1, 0.05, 0.01].iter().map(|&e| common::synthetic_observer_error(e, true)).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    assert!(errs[2] < 0.25 * errs[0]);
}

#[test]
fn output_normalized_switching_keeps_a_residual_error() {
    // Dividing by the full innovation norm leaves a residual that does not
    // vanish with epsilon.
    let errs: Vec<f64> = [0.1, 0.01].iter().map(|&e| common::synthetic_observer_error(e, false)).collect();
    assert!(errs.iter().all(|&e| e > 0.03), "{errs:?}");
}

#[test]
fn u_bl_estimate_tracks_away_from_switching() {
    let mut c = presets::comm_failure(true);
    c.noise.enabled = false;
    let out = run_scenario(&c).unwrap();
    // Leader switches at 30, 45, 60 and 75 s; allow 5 s to settle.
    let windows = [(25.0, 30.0), (40.0, 45.0), (55.0, 60.0), (70.0, 75.0), (80.0, 100.0)];
    for id in out.log.follower_ids() {
        let pred = id - 1;
        for (t, s) in out.log.series(id) {
            if !windows.iter().any(|&(a, b)| t >= a && t < b) {
                continue;
            }
            let truth = out.log.rows.iter().find(|r| r.t == t).unwrap().vehicles[pred - 1].as_ref().unwrap().u_bl;
            let err = (s.x_hat.unwrap()[2] - truth).abs();
            assert!(err < 0.05, "vehicle {id} at {t}: |û_bl - u_bl| = {err}");
        }
    }
}
