//! Convergence of the self-organizing platoon and stability of the group
//! model it converges to.

use nalgebra::Matrix4;
use platoon_core::controller::{closed_loop_is_hurwitz, closed_loop_matrix, group_conditions_hold};
use platoon_core::{consensus_limits, presets, run_scenario, LeaderProfile};

#[test]
fn self_organizing_platoon_settles() {
    let mut c = presets::reference_platoon(15.0);
    c.noise.enabled = false;
    c.duration = 100.0;
    c.initial_spacing_errors = vec![1.5, -1.0, 0.5, -2.0, 1.0];
    c.leader = LeaderProfile::Piecewise { segments: vec![[5.0, 0.3], [10.0, 0.0], [5.0, -0.2]] };
    let out = run_scenario(&c).unwrap();
    assert!(!out.metrics.collision);
    let ids = out.log.follower_ids();
    let worst = |t0: f64, t1: f64| ids.iter().map(|&id| out.log.max_abs_e_between(id, t0, t1)).fold(0.0, f64::max);
    let tail = worst(60.0, 100.0);
    assert!(tail < 1e-3, "max |e| after 60 s: {tail:e}");
    let env: Vec<f64> = (0..4).map(|k| worst(60.0 + 10.0 * k as f64, 70.0 + 10.0 * k as f64)).collect();
    assert!(env.windows(2).all(|w| w[1] <= w[0]), "envelope {env:?}");
}

#[test]
fn consensus_group_model_is_hurwitz() {
    let g = consensus_limits(&presets::reference_params()).group();
    assert!(group_conditions_hold(0.7, &g));
    assert!(closed_loop_is_hurwitz(0.7, &g));
    let f = closed_loop_matrix(0.7, &g);
    let m = Matrix4::from_fn(|r, c| f[r][c]);
    for ev in m.complex_eigenvalues().iter() {
        assert!(ev.re < 0.0, "eigenvalue {ev}");
    }
}

#[test]
fn routh_rejects_destabilized_group() {
    let mut g = consensus_limits(&presets::reference_params()).group();
    g.kd = -0.1;
    assert!(!closed_loop_is_hurwitz(0.7, &g));
    let f = closed_loop_matrix(0.7, &g);
    let m = Matrix4::from_fn(|r, c| f[r][c]);
    assert!(m.complex_eigenvalues().iter().any(|ev| ev.re >= 0.0));
}
