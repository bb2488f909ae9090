//! Open-loop stepping of a platoon under externally supplied inputs.

use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::vehicle::{clamp_after_step, limited_rates, PlatoonState, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleControl {
    /// Engine command, m/s².
    pub u: f64,
    /// Baseline controller state rate, m/s³.
    pub u_bl_dot: f64,
    pub bounds: Option<(f64, f64)>,
}

/// Advances every vehicle by one RK4 step with inputs held over the step.
pub fn step_platoon(
    platoon: &PlatoonState,
    params: &[VehicleParams],
    controls: &[VehicleControl],
    dt: f64,
) -> Result<PlatoonState> {
    let n = platoon.len();
    if controls.len() != n || params.len() != n {
        return Err(Error::config(format!(
            "expected {n} controls and parameter sets, got {} and {}",
            controls.len(),
            params.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::config(format!("time step must be positive, got {dt}")));
    }
    let mut x = Vec::with_capacity(4 * n);
    for s in &platoon.vehicles {
        x.extend_from_slice(&[s.q, s.v, s.a, s.u_bl]);
    }
    Rk4::new().step(platoon.t, &mut x, dt, |_, x, dx| {
        for i in 0..n {
            let c = &controls[i];
            let r = limited_rates(&x[4 * i..4 * i + 3], params[i].tau, c.u, c.bounds);
            dx[4 * i..4 * i + 3].copy_from_slice(&r);
            dx[4 * i + 3] = c.u_bl_dot;
        }
    });
    let mut next = platoon.clone();
    next.t = platoon.t + dt;
    for (i, s) in next.vehicles.iter_mut().enumerate() {
        s.q = x[4 * i];
        s.v = x[4 * i + 1];
        s.a = x[4 * i + 2];
        s.u_bl = x[4 * i + 3];
        clamp_after_step(&mut s.v, &mut s.a, controls[i].bounds);
        if !s.is_finite() {
            return Err(Error::Divergence {
                vehicle: i + 1,
                t: next.t,
                what: "non-finite state after integration".into(),
            });
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleState;

    #[test]
    fn rest_is_a_fixed_point() {
        let p = VehicleParams::new(0.1, 0.2, 0.7, 1.0, -1.0, 0.0).unwrap();
        let s = PlatoonState::new(vec![VehicleState::new(10.0, 0.0, 0.0, 0.0), VehicleState::default()], 0.7)
            .unwrap();
        let next = step_platoon(&s, &[p, p], &[VehicleControl::default(); 2], 0.01).unwrap();
        assert_eq!(next.vehicles, s.vehicles);
    }

    #[test]
    fn divergence_names_vehicle() {
        let p = VehicleParams::new(0.1, 0.2, 0.7, 1.0, -1.0, 0.0).unwrap();
        let s = PlatoonState::new(vec![VehicleState::default(); 2], 0.7).unwrap();
        let mut c = [VehicleControl::default(); 2];
        c[1].u = f64::NAN;
        match step_platoon(&s, &[p, p], &c, 0.01) {
            Err(Error::Divergence { vehicle, .. }) => assert_eq!(vehicle, 2),
            other => panic!("{other:?}"),
        }
    }
}
