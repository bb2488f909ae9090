//! Reconstruction of a predecessor's baseline control signal from its
//! measured velocity: a high-gain differentiator cascaded with a sliding-mode
//! unknown-input observer built on the homogenized vehicle model.

use serde::{Deserialize, Serialize};

use crate::controller::GroupParams;
use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::linalg::{
    char_poly, inverse3, is_positive_definite3, lyapunov3, mat3_mul, mat3_sub, mat3_vec, max_abs3,
    norm3, routh_hurwitz, transpose3, Mat3, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    #[serde(default = "d_alpha")]
    pub alpha: [f64; 3],
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_one")]
    pub s_a: f64,
    #[serde(default = "d_one")]
    pub s_j: f64,
    /// Real pole of `A_o - L_o C_o`.
    #[serde(default = "d_pole_real")]
    pub pole_real: f64,
    /// Complex pair `re ± j·im` of `A_o - L_o C_o`.
    #[serde(default = "d_pole_pair")]
    pub pole_pair: [f64; 2],
    /// Diagonal of `Q_o`.
    #[serde(default = "d_q")]
    pub q_diag: [f64; 3],
    /// Explicit output-injection gain; overrides pole placement.
    #[serde(default)]
    pub l_o: Option<Mat3>,
    #[serde(default = "d_layer")]
    pub boundary_layer: f64,
    /// Normalize the switching term by `|F_o r|` instead of `‖r‖`.
    #[serde(default)]
    pub projected_switching: bool,
}

fn d_epsilon() -> f64 {
    0.01
}
fn d_alpha() -> [f64; 3] {
    [3.0, 0.2, 0.01]
}
fn d_eta() -> f64 {
    1.5
}
fn d_one() -> f64 {
    1.0
}
fn d_pole_real() -> f64 {
    -5.0
}
fn d_pole_pair() -> [f64; 2] {
    [-1.5, 0.5]
}
fn d_q() -> [f64; 3] {
    [0.1, 0.2, 0.01]
}
fn d_layer() -> f64 {
    1e-6
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            epsilon: d_epsilon(),
            alpha: d_alpha(),
            eta: d_eta(),
            s_a: 1.0,
            s_j: 1.0,
            pole_real: d_pole_real(),
            pole_pair: d_pole_pair(),
            q_diag: d_q(),
            l_o: None,
            boundary_layer: d_layer(),
            projected_switching: false,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        let [a0, a1, a2] = self.alpha;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::ObserverDesign(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if !high_gain_is_hurwitz(&self.alpha) {
            return Err(Error::ObserverDesign(format!(
                "alpha = ({a0}, {a1}, {a2}) does not give a Hurwitz polynomial"
            )));
        }
        if !(self.eta > 0.0 && self.s_a > 0.0 && self.s_j > 0.0) {
            return Err(Error::ObserverDesign("eta, s_a and s_j must be positive".into()));
        }
        if self.q_diag.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::ObserverDesign("Q_o must be positive definite".into()));
        }
        if !(self.boundary_layer >= 0.0) {
            return Err(Error::ObserverDesign("boundary layer must be non-negative".into()));
        }
        Ok(())
    }

    /// Fastest mode of the high-gain error dynamics is about `alpha0/epsilon`.
    pub fn high_gain_substeps(&self, dt: f64) -> usize {
        let rate = self.alpha[0] / self.epsilon;
        ((dt * rate / 0.5).ceil() as usize).max(1)
    }
}

/// `λ³ + α0 λ² + α1 λ + α2` Hurwitz.
pub fn high_gain_is_hurwitz(alpha: &[f64; 3]) -> bool {
    routh_hurwitz(&[1.0, alpha[0], alpha[1], alpha[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverMatrices {
    pub a_o: Mat3,
    pub b_o: Vec3,
    pub h_o: Vec3,
    pub c_o: Mat3,
    pub l_o: Mat3,
    pub q_o: Mat3,
    pub p_o: Mat3,
    pub f_o: Vec3,
    pub h: f64,
}

pub fn model_matrix(g: &GroupParams, h: f64) -> Mat3 {
    [
        [0.0, 1.0, 0.0],
        [0.0, -1.0 / g.tau, 1.0 / g.tau],
        [-g.kp - g.kd / h, -g.kd, -1.0 / h],
    ]
}

/// Companion matrix whose characteristic polynomial has the given roots.
fn companion(pole_real: f64, pair: [f64; 2]) -> Mat3 {
    let [re, im] = pair;
    // (λ - p)(λ² - 2re λ + re² + im²)
    let s = -2.0 * re;
    let m = re * re + im * im;
    let c1 = s - pole_real;
    let c2 = m - pole_real * s;
    let c3 = -pole_real * m;
    [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-c3, -c2, -c1]]
}

impl ObserverMatrices {
    pub fn error_matrix(&self) -> Mat3 {
        mat3_sub(&self.a_o, &mat3_mul(&self.l_o, &self.c_o))
    }

    pub fn lyapunov_residual(&self) -> f64 {
        let f = self.error_matrix();
        let lhs = mat3_mul(&transpose3(&f), &self.p_o);
        let rhs = mat3_mul(&self.p_o, &f);
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = lhs[i][j] + rhs[i][j] + 2.0 * self.q_o[i][j];
            }
        }
        max_abs3(&r)
    }

    /// `max |F_o C_o - B_oᵀ P_o|`.
    pub fn matching_residual(&self) -> f64 {
        (0..3)
            .map(|j| {
                let fc: f64 = (0..3).map(|k| self.f_o[k] * self.c_o[k][j]).sum();
                let bp: f64 = (0..3).map(|k| self.b_o[k] * self.p_o[k][j]).sum();
                (fc - bp).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `(rank B_o, rank H_o B_o)`; the standard matching condition needs
    /// them equal.
    pub fn matching_ranks(&self) -> (usize, usize) {
        let rank_b = usize::from(self.b_o.iter().any(|&x| x != 0.0));
        let hb: f64 = (0..3).map(|k| self.h_o[k] * self.b_o[k]).sum();
        (rank_b, usize::from(hb != 0.0))
    }
}

pub fn build_observer_matrices(g: &GroupParams, h: f64, cfg: &ObserverConfig) -> Result<ObserverMatrices> {
    cfg.validate()?;
    if !(g.tau > 0.0 && h > 0.0) {
        return Err(Error::ObserverDesign("tau0 and h must be positive".into()));
    }
    let a_o = model_matrix(g, h);
    let b_o = [0.0, 0.0, 1.0 / h];
    let h_o = [1.0, 0.0, 0.0];
    let ha = [a_o[0][0], a_o[0][1], a_o[0][2]];
    let haa = [
        (0..3).map(|k| ha[k] * a_o[k][0]).sum(),
        (0..3).map(|k| ha[k] * a_o[k][1]).sum(),
        (0..3).map(|k| ha[k] * a_o[k][2]).sum(),
    ];
    let c_o = [h_o, ha, haa];
    let c_inv = inverse3(&c_o).ok_or_else(|| Error::ObserverDesign("C_o is singular".into()))?;

    let l_o = match cfg.l_o {
        Some(l) => l,
        None => mat3_mul(&mat3_sub(&a_o, &companion(cfg.pole_real, cfg.pole_pair)), &c_inv),
    };
    let err = mat3_sub(&a_o, &mat3_mul(&l_o, &c_o));
    let rows: Vec<Vec<f64>> = err.iter().map(|r| r.to_vec()).collect();
    if !routh_hurwitz(&char_poly(&rows)) {
        return Err(Error::ObserverDesign("A_o - L_o C_o is not Hurwitz".into()));
    }

    let q = cfg.q_diag;
    let q_o = [[q[0], 0.0, 0.0], [0.0, q[1], 0.0], [0.0, 0.0, q[2]]];
    let w = [[2.0 * q[0], 0.0, 0.0], [0.0, 2.0 * q[1], 0.0], [0.0, 0.0, 2.0 * q[2]]];
    let p_o = lyapunov3(&err, &w).ok_or_else(|| Error::ObserverDesign("Lyapunov equation is singular".into()))?;
    if !is_positive_definite3(&p_o) {
        return Err(Error::ObserverDesign("P_o is not positive definite".into()));
    }
    let f_o = [p_o[0][2] / h, (p_o[2][1] + p_o[2][2]) / h, p_o[2][2] / h * g.tau];
    let m = ObserverMatrices { a_o, b_o, h_o, c_o, l_o, q_o, p_o, f_o, h };
    let res = m.lyapunov_residual();
    if res >= 1e-9 {
        return Err(Error::ObserverDesign(format!("Lyapunov residual {res:e} too large")));
    }
    Ok(m)
}

/// High-gain estimate of predecessor velocity, acceleration and jerk.
pub type HighGainState = Vec3;

/// Advances the chain-of-integrators observer over `dt` with `v_meas` held,
/// using enough RK4 substeps to stay inside the stability region.
pub fn high_gain_step(hg: &HighGainState, v_meas: f64, cfg: &ObserverConfig, dt: f64, rk: &mut Rk4) -> HighGainState {
    let eps = cfg.epsilon;
    let [a0, a1, a2] = cfg.alpha;
    let gains = [a0 / eps, a1 / (eps * eps), a2 / (eps * eps * eps)];
    let n = cfg.high_gain_substeps(dt);
    let hs = dt / n as f64;
    let mut x = *hg;
    for _ in 0..n {
        rk.step(0.0, &mut x, hs, |_, x, dx| {
            let r = v_meas - x[0];
            dx[0] = x[1] + gains[0] * r;
            dx[1] = x[2] + gains[1] * r;
            dx[2] = gains[2] * r;
        });
    }
    x
}

fn sat(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Auxiliary measurement `[v, S_a sat(ā/S_a), S_j sat(j̄/S_j)]`.
pub fn auxiliary_output(hg: &HighGainState, v_meas: f64, cfg: &ObserverConfig) -> Vec3 {
    [v_meas, cfg.s_a * sat(hg[1] / cfg.s_a), cfg.s_j * sat(hg[2] / cfg.s_j)]
}

/// Unit-vector switching term `η F_o r / ‖r‖` with a linear boundary layer.
pub fn switching_term(innovation: &Vec3, f_o: &Vec3, eta: f64, layer: f64) -> f64 {
    let n = norm3(innovation);
    let s: f64 = (0..3).map(|k| f_o[k] * innovation[k]).sum();
    if n < 1e-12 || s == 0.0 {
        return 0.0;
    }
    eta * s / n.max(layer)
}

/// `η sign(F_o r)` with the same boundary layer, the textbook unit vector.
pub fn projected_switching_term(innovation: &Vec3, f_o: &Vec3, eta: f64, layer: f64) -> f64 {
    let s: f64 = (0..3).map(|k| f_o[k] * innovation[k]).sum();
    if norm3(innovation) < 1e-12 || s == 0.0 {
        return 0.0;
    }
    eta * s / s.abs().max(layer)
}

pub type UioState = Vec3;

/// One step of the unknown-input observer. The switching term is evaluated
/// at the start of the step and held.
pub fn uio_step(
    uio: &UioState,
    hg: &HighGainState,
    v_meas: f64,
    mat: &ObserverMatrices,
    cfg: &ObserverConfig,
    dt: f64,
    rk: &mut Rk4,
) -> UioState {
    let y_bar = auxiliary_output(hg, v_meas, cfg);
    let y_hat = mat3_vec(&mat.c_o, uio);
    let innov = [y_bar[0] - y_hat[0], y_bar[1] - y_hat[1], y_bar[2] - y_hat[2]];
    let e_o = if cfg.projected_switching {
        projected_switching_term(&innov, &mat.f_o, cfg.eta, cfg.boundary_layer)
    } else {
        switching_term(&innov, &mat.f_o, cfg.eta, cfg.boundary_layer)
    };
    let mut x = *uio;
    rk.step(0.0, &mut x, dt, |_, x, dx| {
        let x3 = [x[0], x[1], x[2]];
        let ax = mat3_vec(&mat.a_o, &x3);
        let cx = mat3_vec(&mat.c_o, &x3);
        let r = [y_bar[0] - cx[0], y_bar[1] - cx[1], y_bar[2] - cx[2]];
        let lr = mat3_vec(&mat.l_o, &r);
        for k in 0..3 {
            dx[k] = ax[k] + mat.b_o[k] * e_o + lr[k];
        }
    });
    x
}

/// Complete per-follower observer: both stages plus its design.
#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    pub cfg: ObserverConfig,
    pub mat: ObserverMatrices,
    pub hg: HighGainState,
    pub uio: UioState,
}

impl Observer {
    pub fn new(cfg: ObserverConfig, mat: ObserverMatrices, v_meas: f64, u_bl_pred: f64) -> Self {
        Observer { cfg, mat, hg: [v_meas, 0.0, 0.0], uio: [v_meas, 0.0, u_bl_pred] }
    }

    pub fn step(&mut self, v_meas: f64, dt: f64, rk: &mut Rk4) {
        let next_uio = uio_step(&self.uio, &self.hg, v_meas, &self.mat, &self.cfg, dt, rk);
        self.hg = high_gain_step(&self.hg, v_meas, &self.cfg, dt, rk);
        self.uio = next_uio;
    }

    pub fn u_bl_hat(&self) -> f64 {
        self.uio[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_group() -> GroupParams {
        GroupParams::from_consensus(0.0200125, 0.680, 0.875 / 6.0).unwrap()
    }

    #[test]
    fn matrices_pass_invariants() {
        let m = build_observer_matrices(&reference_group(), 0.7, &ObserverConfig::default()).unwrap();
        assert!(m.lyapunov_residual() < 1e-9);
        assert!(m.matching_residual() < 1e-12);
        assert_eq!(m.matching_ranks(), (1, 0));
        let tau0 = 0.875 / 6.0;
        let want = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0 / tau0, 1.0 / tau0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.c_o[i][j] - want[i][j]).abs() < 1e-12);
            }
        }
        // placed poles: λ³ + 8λ² + 17.5λ + 12.5
        let rows: Vec<Vec<f64>> = m.error_matrix().iter().map(|r| r.to_vec()).collect();
        let c = char_poly(&rows);
        for (x, y) in c.iter().zip([1.0, 8.0, 17.5, 12.5]) {
            assert!((x - y).abs() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn config_checks() {
        let bad = ObserverConfig { epsilon: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ObserverConfig { alpha: [1.0, 0.1, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(high_gain_is_hurwitz(&[3.0, 0.2, 0.01]));
        let unstable = ObserverConfig { pole_real: 1.0, ..Default::default() };
        assert!(build_observer_matrices(&reference_group(), 0.7, &unstable).is_err());
    }

    #[test]
    fn high_gain_fixed_point() {
        let cfg = ObserverConfig::default();
        let mut rk = Rk4::new();
        let x = high_gain_step(&[12.0, 0.0, 0.0], 12.0, &cfg, 0.01, &mut rk);
        assert_eq!(x, [12.0, 0.0, 0.0]);
        assert_eq!(cfg.high_gain_substeps(0.01), 6);
    }

    #[test]
    fn switching_guard() {
        assert_eq!(switching_term(&[1e-13, 0.0, 0.0], &[1.0, 1.0, 1.0], 1.5, 1e-6), 0.0);
        let e = switching_term(&[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0], 1.5, 1e-6);
        assert!((e - 3.0).abs() < 1e-15);
        // inside the layer the term shrinks linearly
        let small = switching_term(&[5e-7, 0.0, 0.0], &[1.0, 0.0, 0.0], 1.0, 1e-6);
        assert!((small - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_innovation_follows_model() {
        let cfg = ObserverConfig::default();
        let m = build_observer_matrices(&reference_group(), 0.7, &cfg).unwrap();
        let x = [10.0, 0.2, 0.1];
        let y = mat3_vec(&m.c_o, &x);
        let hg = [y[0], y[1], y[2]];
        let mut rk = Rk4::new();
        let next = uio_step(&x, &hg, y[0], &m, &cfg, 1e-4, &mut rk);
        let ax = mat3_vec(&m.a_o, &x);
        for k in 0..3 {
            // one small step of ẋ = A_o x plus a tiny injection drift
            assert!((next[k] - (x[k] + 1e-4 * ax[k])).abs() < 1e-6);
        }
    }
}
