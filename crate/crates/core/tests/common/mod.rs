#![allow(dead_code)]

use platoon_core::integrator::Rk4;
use platoon_core::linalg::mat3_vec;
use platoon_core::{build_observer_matrices, consensus_limits, presets, Observer, ObserverConfig};

/// Runs the observer against its own model driven by a bounded unknown input
/// `|ν| ≤ 1.2 < η` and returns the mean estimation error norm over the last
/// 20 of 60 s.
pub fn synthetic_observer_error(epsilon: f64, projected_switching: bool) -> f64 {
    let cfg = ObserverConfig { epsilon, projected_switching, ..ObserverConfig::default() };
    let g = consensus_limits(&presets::reference_params()).group();
    let mat = build_observer_matrices(&g, 0.7, &cfg).unwrap();
    let nu = |t: f64| 1.0 * (0.3 * t).sin() + 0.2;
    let dt = 0.01;
    let mut x = [0.5, 0.0, 0.0];
    let mut obs = Observer::new(cfg, mat, x[0], x[2]);
    obs.uio = [x[0], 0.3, -0.2];
    let mut rk = Rk4::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for k in 0..6000 {
        let t = k as f64 * dt;
        rk.step(t, &mut x, dt, |t, x, dx| {
            let ax = mat3_vec(&mat.a_o, &[x[0], x[1], x[2]]);
            for i in 0..3 {
                dx[i] = ax[i] + mat.b_o[i] * nu(t);
            }
        });
        obs.step(x[0], dt, &mut rk);
        if k >= 4000 {
            let d: f64 = (0..3).map(|i| (x[i] - obs.uio[i]).powi(2)).sum();
            sum += d.sqrt();
            n += 1;
        }
    }
    sum / n as f64
}
