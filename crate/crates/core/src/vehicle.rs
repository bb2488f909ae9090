//! Vehicle parameters, kinematic state and the third-order longitudinal model.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Engine time constant, s.
    pub tau: f64,
    /// Proportional gain, 1/s².
    pub kp: f64,
    /// Derivative gain, 1/s.
    pub kd: f64,
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Minimum (most negative) acceleration, m/s².
    pub a_min: f64,
    /// Body length subtracted from the bumper-to-bumper gap, m.
    #[serde(default)]
    pub length: f64,
}

impl VehicleParams {
    pub fn new(tau: f64, kp: f64, kd: f64, a_max: f64, a_min: f64, length: f64) -> Result<Self> {
        let p = VehicleParams { tau, kp, kd, a_max, a_min, length };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite(
            "vehicle parameters",
            &[self.tau, self.kp, self.kd, self.a_max, self.a_min, self.length],
        )?;
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.tau <= 0.0 {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.kp <= 0.0 || self.kd <= 0.0 {
            return bad(format!("gains must be positive, got kp={} kd={}", self.kp, self.kd));
        }
        if self.kd <= self.tau * self.kp {
            return bad(format!(
                "kd={} must exceed tau*kp={} for a stable loop",
                self.kd,
                self.tau * self.kp
            ));
        }
        if !(self.a_min < 0.0 && 0.0 < self.a_max) {
            return bad(format!(
                "need a_min < 0 < a_max, got [{}, {}]",
                self.a_min, self.a_max
            ));
        }
        if self.length < 0.0 {
            return bad(format!("length must be non-negative, got {}", self.length));
        }
        Ok(())
    }

    /// The product kp·tau, the quantity averaged by the consensus layer.
    pub fn kp_tau(&self) -> f64 {
        self.kp * self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub q: f64,
    pub v: f64,
    pub a: f64,
    pub u_bl: f64,
}

impl VehicleState {
    pub fn new(q: f64, v: f64, a: f64, u_bl: f64) -> Self {
        VehicleState { q, v, a, u_bl }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.v.is_finite() && self.a.is_finite() && self.u_bl.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub q_dot: f64,
    pub v_dot: f64,
    pub a_dot: f64,
}

/// Right-hand side of the longitudinal model `q' = v, v' = a, a' = (u - a)/tau`.
pub fn vehicle_derivative(
    state: &VehicleState,
    params: &VehicleParams,
    u: f64,
) -> Result<StateDerivative> {
    check_finite("vehicle state", &[state.q, state.v, state.a, u])?;
    Ok(StateDerivative {
        q_dot: state.v,
        v_dot: state.a,
        a_dot: -state.a / params.tau + u / params.tau,
    })
}

/// Plant rates with a standstill guard (no reversing) and optional
/// acceleration bounds that stop `a` from leaving `[lo, hi]`.
pub fn limited_rates(q_v_a: &[f64], tau: f64, u: f64, bounds: Option<(f64, f64)>) -> [f64; 3] {
    let (v, a) = (q_v_a[1], q_v_a[2]);
    let v_dot = if v <= 0.0 && a < 0.0 { 0.0 } else { a };
    let mut a_dot = (u - a) / tau;
    if let Some((lo, hi)) = bounds {
        if (a >= hi && a_dot > 0.0) || (a <= lo && a_dot < 0.0) {
            a_dot = 0.0;
        }
    }
    [v, v_dot, a_dot]
}

/// Projection applied after every step: no negative speed, `a` inside bounds.
pub fn clamp_after_step(v: &mut f64, a: &mut f64, bounds: Option<(f64, f64)>) {
    if *v < 0.0 {
        *v = 0.0;
    }
    if let Some((lo, hi)) = bounds {
        *a = a.clamp(lo, hi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingError {
    pub e: f64,
    pub e_dot: f64,
    /// Bumper-to-bumper gap `q_pred - q_ego - length`.
    pub gap: f64,
}

/// Constant time-headway spacing error and its rate.
pub fn spacing_error(pred: &VehicleState, ego: &VehicleState, h: f64, length: f64) -> SpacingError {
    let gap = pred.q - ego.q - length;
    SpacingError {
        e: gap - h * ego.v,
        e_dot: pred.v - ego.v - h * ego.a,
        gap,
    }
}

/// Snapshot of a platoon; index 0 is the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub vehicles: Vec<VehicleState>,
    pub h: f64,
    pub t: f64,
}

impl PlatoonState {
    pub fn new(vehicles: Vec<VehicleState>, h: f64) -> Result<Self> {
        if vehicles.len() < 2 {
            return Err(Error::config("a platoon needs at least two vehicles"));
        }
        if !(h > 0.0) {
            return Err(Error::config(format!("headway must be positive, got {h}")));
        }
        Ok(PlatoonState { vehicles, h, t: 0.0 })
    }

    /// Vehicles evenly spaced at the desired gap, all cruising at `v`.
    pub fn at_equilibrium(params: &[VehicleParams], h: f64, v: f64) -> Result<Self> {
        let mut vehicles = Vec::with_capacity(params.len());
        let mut q = 0.0;
        for (i, p) in params.iter().enumerate() {
            if i > 0 {
                q -= h * v + p.length;
            }
            vehicles.push(VehicleState::new(q, v, 0.0, 0.0));
        }
        PlatoonState::new(vehicles, h)
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(tau: f64) -> VehicleParams {
        VehicleParams::new(tau, 0.2, 0.7, 1.0, -1.0, 0.0).unwrap()
    }

    #[test]
    fn derivative_examples() {
        let d = vehicle_derivative(&VehicleState::new(0.0, 10.0, 0.0, 0.0), &params(0.1), 1.0)
            .unwrap();
        assert_relative_eq!(d.q_dot, 10.0);
        assert_relative_eq!(d.v_dot, 0.0);
        assert_relative_eq!(d.a_dot, 10.0, epsilon = 1e-12);

        let d = vehicle_derivative(&VehicleState::default(), &params(0.1), 0.0).unwrap();
        assert_eq!(d, StateDerivative::default());

        let d = vehicle_derivative(&VehicleState::new(5.0, 15.0, 2.0, 0.0), &params(0.2), 2.0)
            .unwrap();
        assert_eq!((d.q_dot, d.v_dot, d.a_dot), (15.0, 2.0, 0.0));
    }

    #[test]
    fn derivative_rejects_nan() {
        let s = VehicleState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(
            vehicle_derivative(&s, &params(0.1), 0.0),
            Err(Error::NonFinite(_))
        ));
        assert!(vehicle_derivative(&VehicleState::default(), &params(0.1), f64::INFINITY).is_err());
    }

    #[test]
    fn spacing_examples() {
        let pred = VehicleState::new(30.0, 20.0, 0.0, 0.0);
        let ego = VehicleState::new(10.0, 20.0, 0.0, 0.0);
        let s = spacing_error(&pred, &ego, 0.7, 0.0);
        assert_relative_eq!(s.e, 6.0, epsilon = 1e-12);
        assert_eq!(s.e_dot, 0.0);

        let pred = VehicleState::new(0.0, 12.0, 0.0, 0.0);
        let ego = VehicleState::new(-(0.7 * 12.0 + 4.5), 12.0, 0.0, 0.0);
        assert_relative_eq!(spacing_error(&pred, &ego, 0.7, 4.5).e, 0.0, epsilon = 1e-12);

        let pred = VehicleState::new(20.0, 5.0, 0.0, 0.0);
        let ego = VehicleState::new(20.0, 5.0, 0.0, 0.0);
        let s = spacing_error(&pred, &ego, 0.7, 4.5);
        assert_relative_eq!(s.e, -0.7 * 5.0 - 4.5);
        assert!(s.gap <= 0.0);
    }

    #[test]
    fn standstill_and_bounds() {
        let r = limited_rates(&[0.0, 0.0, -2.0], 0.1, -3.0, None);
        assert_eq!(r[1], 0.0);
        let r = limited_rates(&[0.0, 5.0, 0.5], 0.1, 1.0, Some((-1.0, 0.5)));
        assert_eq!(r[2], 0.0);
        let r = limited_rates(&[0.0, 5.0, 0.5], 0.1, 0.0, Some((-1.0, 0.5)));
        assert!(r[2] < 0.0);
        let (mut v, mut a) = (-1e-3, 0.7);
        clamp_after_step(&mut v, &mut a, Some((-1.0, 0.5)));
        assert_eq!((v, a), (0.0, 0.5));
    }

    #[test]
    fn params_validation() {
        assert!(VehicleParams::new(0.0, 0.2, 0.7, 1.0, -1.0, 0.0).is_err());
        assert!(VehicleParams::new(0.1, -0.2, 0.7, 1.0, -1.0, 0.0).is_err());
        assert!(VehicleParams::new(1.0, 1.0, 0.5, 1.0, -1.0, 0.0).is_err());
        assert!(VehicleParams::new(0.1, 0.2, 0.7, 1.0, 0.5, 0.0).is_err());
        assert!(VehicleParams::new(0.1, 0.2, 0.7, 1.0, -1.0, -1.0).is_err());
    }

    #[test]
    fn equilibrium_spacing() {
        let p = vec![params(0.1); 3];
        let s = PlatoonState::at_equilibrium(&p, 0.7, 10.0).unwrap();
        for w in s.vehicles.windows(2) {
            assert_relative_eq!(spacing_error(&w[0], &w[1], 0.7, 0.0).e, 0.0, epsilon = 1e-12);
        }
        assert!(PlatoonState::at_equilibrium(&p[..1], 0.7, 10.0).is_err());
    }
}
