//! Closed-loop simulation of a platoon under a [`ScenarioConfig`].
//!
//! One RK4 step advances every vehicle's `[q, v, a, u_bl]` together with the
//! averaged consensus variables `[K̄pτ, K̄d, τ̄]`. Measurement noise, the
//! anti-windup branch, the cooperative signal source and the safety decision
//! are held over the step; the max-min bounds and the observers are advanced
//! after it.

use crate::consensus::{consensus_limits, maxmin_step, CommGraph, ConsensusLimits};
use crate::controller::{
    baseline_xi, homogenizing_inputs, leader_xi, saturate_command, ubl_dot, windup_branch, ControllerMode, GroupParams,
    WindupBranch,
};
use crate::error::{Error, Result};
use crate::integrator::Rk4;
use crate::log::{compute_metrics, Event, EventKind, LogRow, Metrics, Recapture, TrajectoryLog, VehicleSample};
use crate::noise::{MeasurementNoise, NoiseSource};
use crate::observer::{build_observer_matrices, Observer};
use crate::safety::{
    recapture_control, safe_gap, safety_step, verify_fallback, verify_input, Applied, EgoModel, Fallback, SafetyMode,
};
use crate::scenario::{CutIn, Merge, ScenarioConfig};
use crate::vehicle::{clamp_after_step, limited_rates, spacing_error, VehicleParams, VehicleState};

/// State slots per vehicle: q, v, a, u_bl, K̄pτ, K̄d, τ̄.
const NV: usize = 7;
/// Tolerance for declaring the averaged variables converged.
pub const CONSENSUS_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub log: TrajectoryLog,
    pub metrics: Metrics,
}

impl SimOutcome {
    pub fn collided(&self) -> bool {
        self.metrics.collision
    }
}

/// Runs a validated configuration to completion (or to the first collision
/// when `halt_on_collision` is set).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutcome> {
    cfg.validate()?;
    let log = Sim::new(cfg)?.run()?;
    let metrics = compute_metrics(&log, cfg);
    Ok(SimOutcome { log, metrics })
}

#[derive(Debug, Clone)]
struct SafetyUnit {
    mode: SafetyMode,
    fallback: Option<Fallback>,
    applied: Option<Applied>,
    recapture: Option<(usize, f64)>,
}

#[derive(Debug, Clone)]
struct Agent {
    id: usize,
    p: VehicleParams,
    s: VehicleState,
    k_ptau: f64,
    k_d: f64,
    tau: f64,
    a_max: f64,
    a_min: f64,
    obs: Option<Observer>,
    obs_group: Option<GroupParams>,
    safety: Option<SafetyUnit>,
    last_u: f64,
    contact: bool,
    comm_up: bool,
}

impl Agent {
    fn new(id: usize, p: VehicleParams, s: VehicleState) -> Self {
        Agent {
            id,
            p,
            s,
            k_ptau: p.kp_tau(),
            k_d: p.kd,
            tau: p.tau,
            a_max: p.a_max,
            a_min: p.a_min,
            obs: None,
            obs_group: None,
            safety: None,
            last_u: s.u_bl,
            contact: false,
            comm_up: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Coop {
    /// Communicated `u_bl` of the predecessor.
    Pred,
    /// Observer estimate or zero (plain ACC).
    Fixed(f64),
}

/// Everything held constant over one step for one vehicle.
#[derive(Debug, Clone, Copy)]
struct StepPlan {
    noise: MeasurementNoise,
    coop: Coop,
    saturation: Option<(f64, f64)>,
    frozen: bool,
    bounds: Option<(f64, f64)>,
    applied: Option<Applied>,
}

#[derive(Debug, Clone, Copy)]
struct Cmd {
    /// Controller output before any safety override.
    u_ctrl: f64,
    u: f64,
    xi: f64,
    u_bl_dot: f64,
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    agents: &'a [Agent],
    plans: &'a [StepPlan],
    graph: &'a CommGraph,
    limits: &'a ConsensusLimits,
    k: u64,
}

impl Ctx<'_> {
    fn group(&self, i: usize, x: &[f64]) -> GroupParams {
        match self.cfg.controller.mode {
            ControllerMode::SelfOrganizing => {
                let b = &x[i * NV + 4..i * NV + 7];
                GroupParams { tau: b[2], kp: b[0] / b[2], kd: b[1] }
            }
            ControllerMode::StaticHomogenized => self.limits.group(),
            ControllerMode::HeterogeneousBaseline => GroupParams::of_vehicle(&self.agents[i].p),
        }
    }

    fn command(&self, i: usize, x: &[f64], s: f64) -> Cmd {
        let cfg = self.cfg;
        let p = &self.agents[i].p;
        let plan = &self.plans[i];
        let n = &plan.noise;
        let o = i * NV;
        let (q, v, a, u_bl) = (x[o], x[o + 1], x[o + 2], x[o + 3]);
        let a_m = a + n.a;
        let a_hm = if cfg.noise.measured_accel_in_homogenizing { a_m } else { a };
        let g = self.group(i, x);
        let (xi, u_hm) = if i == 0 {
            let t = self.k as f64 * cfg.dt + s;
            let (u_hm, _) = homogenizing_inputs(a_hm, u_bl, 0.0, 0.0, p, &g).unwrap_or((f64::NAN, f64::NAN));
            (leader_xi(cfg.leader.u_r(t)), u_hm)
        } else {
            let po = (i - 1) * NV;
            let gap = x[po] - q - p.length + n.gap;
            let e = gap - cfg.h * (v + n.v);
            let e_dot = x[po + 1] - v + n.rel_v - cfg.h * a_m;
            let (u_hm, xi_hm) = homogenizing_inputs(a_hm, u_bl, e, e_dot, p, &g).unwrap_or((f64::NAN, f64::NAN));
            let coop = match plan.coop {
                Coop::Pred => x[po + 3],
                Coop::Fixed(c) => c,
            };
            let xi = baseline_xi(e, e_dot, p.kp, p.kd, xi_hm, Some(coop), self.agents[i].id).unwrap_or(f64::NAN);
            (xi, u_hm)
        };
        let raw = u_bl + u_hm;
        let u_ctrl = match plan.saturation {
            Some((lo, hi)) => saturate_command(raw, lo, hi),
            None => raw,
        };
        let u = match plan.applied {
            None => u_ctrl,
            Some(Applied::Hold(c)) => c,
            Some(Applied::Emergency(fb)) => {
                let base = (self.k - fb.start_step) as f64 * cfg.dt;
                cfg.safety.emergency.command(fb.u0, base + s)
            }
        };
        let u_bl_dot = if plan.frozen { 0.0 } else { ubl_dot(u_bl, xi, cfg.h) };
        Cmd { u_ctrl, u, xi, u_bl_dot }
    }

    fn rhs(&self, s: f64, x: &[f64], dx: &mut [f64]) {
        let c = &self.cfg.consensus;
        let organizing = self.cfg.controller.mode == ControllerMode::SelfOrganizing;
        for i in 0..self.agents.len() {
            let o = i * NV;
            let cmd = self.command(i, x, s);
            let r = limited_rates(&x[o..o + 3], self.agents[i].p.tau, cmd.u, self.plans[i].bounds);
            dx[o..o + 3].copy_from_slice(&r);
            dx[o + 3] = cmd.u_bl_dot;
            for (k, mu) in [c.mu_p, c.mu_d, c.mu_tau].into_iter().enumerate() {
                dx[o + 4 + k] = if organizing {
                    mu * self.graph.neighbors(i).map(|j| x[j * NV + 4 + k] - x[o + 4 + k]).sum::<f64>()
                } else {
                    0.0
                };
            }
        }
    }
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    agents: Vec<Agent>,
    graph: CommGraph,
    limits: ConsensusLimits,
    noise: NoiseSource,
    rk: Rk4,
    aux: Rk4,
    log: TrajectoryLog,
    next_id: usize,
    cycle_steps: u64,
    cut_ins: Vec<(u64, CutIn)>,
    merges: Vec<(u64, Merge)>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let v0 = cfg.initial_speed;
        let mut agents = Vec::with_capacity(cfg.vehicles.len());
        let mut q = 0.0;
        for (i, p) in cfg.vehicles.iter().enumerate() {
            if i > 0 {
                let offset = cfg.initial_spacing_errors.get(i - 1).copied().unwrap_or(0.0);
                q -= cfg.h * v0 + p.length + offset;
            }
            agents.push(Agent::new(i + 1, *p, VehicleState::new(q, v0, 0.0, 0.0)));
        }
        let cycle_steps = if cfg.safety.enabled { cfg.safety.cycle_steps(cfg.dt) } else { 1 };
        let due = |time: f64| {
            let k = (time / cfg.dt - 1e-9).ceil().max(0.0) as u64;
            k.div_ceil(cycle_steps) * cycle_steps
        };
        let mut sim = Sim {
            cfg,
            graph: CommGraph::chain(agents.len()),
            limits: consensus_limits(&cfg.vehicles),
            next_id: agents.len() + 1,
            agents,
            noise: NoiseSource::new(cfg.noise, cfg.seed),
            rk: Rk4::new(),
            aux: Rk4::new(),
            log: TrajectoryLog {
                h: cfg.h,
                dt_sample: cfg.dt * cfg.sample_every as f64,
                physical_accel_clamp: cfg.physical_accel_clamp,
                ..Default::default()
            },
            cycle_steps,
            cut_ins: cfg.cut_ins.iter().map(|c| (due(c.time), c.clone())).collect(),
            merges: cfg.merges.iter().map(|m| (due(m.time), m.clone())).collect(),
        };
        sim.log.n_ids = sim.agents.len();
        sim.apply_mode_bars();
        for i in 1..sim.agents.len() {
            sim.init_observer(i)?;
        }
        if cfg.safety.enabled {
            for i in 1..sim.agents.len() {
                if !sim.bootstrap_safety(i, 0, 0.0) {
                    return Err(Error::Safety(format!(
                        "initial state of vehicle {} admits no verified emergency braking",
                        sim.agents[i].id
                    )));
                }
            }
        }
        Ok(sim)
    }

    /// Fixes the consensus variables in the modes that do not run consensus.
    fn apply_mode_bars(&mut self) {
        let l = self.limits;
        for a in &mut self.agents {
            match self.cfg.controller.mode {
                ControllerMode::SelfOrganizing => {}
                ControllerMode::StaticHomogenized => {
                    (a.k_ptau, a.k_d, a.tau, a.a_max, a.a_min) = (l.k_ptau0, l.k_d0, l.tau0, l.a_max0, l.a_min0);
                }
                ControllerMode::HeterogeneousBaseline => {
                    (a.k_ptau, a.k_d, a.tau, a.a_max, a.a_min) = (a.p.kp_tau(), a.p.kd, a.p.tau, a.p.a_max, a.p.a_min);
                }
            }
        }
    }

    fn plant_bounds(&self, i: usize) -> Option<(f64, f64)> {
        let p = &self.agents[i].p;
        self.cfg.physical_accel_clamp.then_some((p.a_min, p.a_max))
    }

    fn ego_model(&self, i: usize) -> EgoModel {
        let p = &self.agents[i].p;
        EgoModel {
            tau: p.tau,
            length: p.length,
            bounds: self.plant_bounds(i),
            brake_limit: -self.cfg.safety.emergency.decel,
        }
    }

    fn observer_group(&self, i: usize) -> GroupParams {
        match self.cfg.controller.mode {
            ControllerMode::SelfOrganizing => {
                let a = &self.agents[i];
                GroupParams { tau: a.tau, kp: a.k_ptau / a.tau, kd: a.k_d }
            }
            _ => self.limits.group(),
        }
    }

    fn init_observer(&mut self, i: usize) -> Result<()> {
        if !self.cfg.controller.observer_enabled {
            return Ok(());
        }
        let g = self.observer_group(i);
        let mat = build_observer_matrices(&g, self.cfg.h, &self.cfg.observer)?;
        let pred = self.agents[i - 1].s;
        let a = &mut self.agents[i];
        a.obs = Some(Observer::new(self.cfg.observer, mat, pred.v, pred.u_bl));
        a.obs_group = Some(g);
        Ok(())
    }

    /// Checks that braking from now is safe. On success the vehicle is
    /// NOMINAL with that plan as its fallback, otherwise it starts recapturing.
    fn bootstrap_safety(&mut self, i: usize, k: u64, t: f64) -> bool {
        let model = self.ego_model(i);
        let (ego, pred, u0) = (self.agents[i].s, self.agents[i - 1].s, self.agents[i].last_u);
        let verdict = verify_fallback(&ego, &model, &pred, u0, &self.cfg.safety, self.cfg.dt);
        let id = self.agents[i].id;
        let unit = if verdict.safe {
            SafetyUnit {
                mode: SafetyMode::Nominal,
                fallback: Some(Fallback { u0, start_step: k, bounds: model.bounds }),
                applied: None,
                recapture: None,
            }
        } else {
            self.log.stats.recaptures.push(Recapture { vehicle: id, start: t, end: None, escalated: false });
            SafetyUnit {
                mode: SafetyMode::Recapturing,
                fallback: None,
                applied: None,
                recapture: Some((self.log.stats.recaptures.len() - 1, t)),
            }
        };
        let old = self.agents[i].safety.as_ref().map(|u| u.mode);
        if let Some(from) = old.filter(|m| *m != unit.mode) {
            self.push_event(t, EventKind::ModeSwitch {
                vehicle: id,
                from,
                to: unit.mode,
                cycle: k / self.cycle_steps,
                min_gap: verdict.min_gap,
            });
        }
        self.agents[i].safety = Some(unit);
        verdict.safe
    }

    fn push_event(&mut self, t: f64, kind: EventKind) {
        self.log.events.push(Event { t, kind });
    }

    fn topology_changed(&mut self) {
        self.graph = CommGraph::chain(self.agents.len());
        let params: Vec<VehicleParams> = self.agents.iter().map(|a| a.p).collect();
        self.limits = consensus_limits(&params);
        self.apply_mode_bars();
        self.log.n_ids = self.log.n_ids.max(self.next_id - 1);
    }

    fn apply_cut_in(&mut self, c: &CutIn, k: u64, t: f64) -> Result<()> {
        let idx = c.position - 1;
        if idx == 0 || idx >= self.agents.len() {
            return Err(Error::config(format!(
                "cut-in position {} is outside the platoon of {}",
                c.position,
                self.agents.len()
            )));
        }
        let ego = self.agents[idx].s;
        let probe = VehicleState::new(ego.q + self.agents[idx].p.length + 1e3, ego.v, 0.0, 0.0);
        let model = self.ego_model(idx);
        let sg = safe_gap(&ego, &model, &probe, self.agents[idx].last_u, &self.cfg.safety, self.cfg.dt).max(0.0);
        let gap = c.gap_fraction * sg;
        let id = self.next_id;
        self.next_id += 1;
        let state = VehicleState::new(ego.q + self.agents[idx].p.length + gap, ego.v, 0.0, 0.0);
        self.agents.insert(idx, Agent::new(id, c.vehicle, state));
        self.topology_changed();
        self.init_observer(idx)?;
        self.init_observer(idx + 1)?;
        self.push_event(t, EventKind::CutIn { vehicle: id, position: c.position, gap, safe_gap: sg });
        if self.cfg.safety.enabled {
            self.bootstrap_safety(idx, k, t);
            self.bootstrap_safety(idx + 1, k, t);
        }
        Ok(())
    }

    fn apply_merge(&mut self, m: &Merge, k: u64, t: f64) -> Result<()> {
        let mut ids = Vec::new();
        for p in &m.vehicles {
            let tail = self.agents.last().expect("non-empty platoon").s;
            let v = m.speed.unwrap_or(tail.v);
            let id = self.next_id;
            self.next_id += 1;
            self.agents.push(Agent::new(id, *p, VehicleState::new(tail.q - m.gap - p.length, v, 0.0, 0.0)));
            ids.push(id);
        }
        self.topology_changed();
        let first = self.agents.len() - m.vehicles.len();
        for i in first..self.agents.len() {
            self.init_observer(i)?;
            if self.cfg.safety.enabled {
                self.bootstrap_safety(i, k, t);
            }
        }
        self.push_event(t, EventKind::Merge { vehicles: ids });
        Ok(())
    }

    fn apply_events(&mut self, k: u64, t: f64) -> Result<()> {
        let cut_ins: Vec<CutIn> = self.cut_ins.iter().filter(|(d, _)| *d == k).map(|(_, c)| c.clone()).collect();
        for c in cut_ins {
            self.apply_cut_in(&c, k, t)?;
        }
        let merges: Vec<Merge> = self.merges.iter().filter(|(d, _)| *d == k).map(|(_, m)| m.clone()).collect();
        for m in merges {
            self.apply_merge(&m, k, t)?;
        }
        Ok(())
    }

    fn update_comm(&mut self, t: f64) {
        for i in 1..self.agents.len() {
            let up = self.cfg.communication_available(t, i + 1);
            self.graph.set_edge(i - 1, up);
            if up != self.agents[i].comm_up {
                self.agents[i].comm_up = up;
                let follower = self.agents[i].id;
                let kind = if up { EventKind::CommRestored { follower } } else { EventKind::CommLost { follower } };
                self.push_event(t, kind);
            }
        }
    }

    fn pack(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(NV * self.agents.len());
        for a in &self.agents {
            x.extend_from_slice(&[a.s.q, a.s.v, a.s.a, a.s.u_bl, a.k_ptau, a.k_d, a.tau]);
        }
        x
    }

    fn plans(&mut self) -> Vec<StepPlan> {
        let ctrl = self.cfg.controller;
        let noise: Vec<MeasurementNoise> = self.agents.iter().map(|_| self.noise.sample()).collect();
        (0..self.agents.len())
            .map(|i| {
                let a = &self.agents[i];
                let coop = if i == 0 || a.comm_up {
                    Coop::Pred
                } else if let (true, Some(obs)) = (ctrl.observer_enabled, &a.obs) {
                    Coop::Fixed(obs.u_bl_hat())
                } else {
                    Coop::Fixed(0.0)
                };
                StepPlan {
                    noise: noise[i],
                    coop,
                    saturation: ctrl.limits_enabled.then_some((a.a_min, a.a_max)),
                    frozen: false,
                    bounds: self.plant_bounds(i),
                    applied: None,
                }
            })
            .collect()
    }

    /// One verification cycle for every follower.
    fn safety_cycle(&mut self, k: u64, t: f64, u_nom: &[f64]) -> Result<()> {
        let scfg = self.cfg.safety;
        let dt = self.cfg.dt;
        for i in 1..self.agents.len() {
            let model = self.ego_model(i);
            let (ego, pred) = (self.agents[i].s, self.agents[i - 1].s);
            let id = self.agents[i].id;
            let stopped = self.agents[i].safety.as_ref().is_some_and(|u| u.mode == SafetyMode::EmergencyBraking)
                && ego.v <= 0.0;
            if stopped {
                self.bootstrap_safety(i, k, t);
            }
            let unit = self.agents[i].safety.clone().expect("safety unit");
            let verdict = verify_input(&ego, &model, &pred, u_nom[i], &scfg, dt);
            let (next, min_gap) = match unit.mode {
                SafetyMode::Recapturing if !verdict.safe => {
                    let (rec, start) = unit.recapture.expect("recapture record");
                    let elapsed = t - start;
                    let law = (elapsed < scfg.recapture_horizon)
                        .then(|| {
                            let sg = safe_gap(&ego, &model, &pred, self.agents[i].last_u, &scfg, dt);
                            recapture_control(&ego, &model, &pred, sg + scfg.recapture_margin, scfg.recapture_horizon - elapsed, &scfg)
                                .ok()
                        })
                        .flatten();
                    match law {
                        Some(u) => (SafetyUnit { applied: Some(Applied::Hold(u.min(u_nom[i]))), ..unit.clone() }, verdict.min_gap),
                        None => {
                            self.log.stats.recaptures[rec].escalated = true;
                            let fb = Fallback { u0: self.agents[i].last_u, start_step: k, bounds: model.bounds };
                            (
                                SafetyUnit {
                                    mode: SafetyMode::EmergencyBraking,
                                    fallback: Some(fb),
                                    applied: Some(Applied::Emergency(fb)),
                                    recapture: None,
                                },
                                verdict.min_gap,
                            )
                        }
                    }
                }
                mode => {
                    if mode == SafetyMode::Nominal {
                        if let Some(fb) = unit.fallback {
                            let m = EgoModel { bounds: fb.bounds, ..model };
                            self.log.stats.fallback_checks += 1;
                            if !verify_fallback(&ego, &m, &pred, fb.u0, &scfg, dt).safe {
                                self.log.stats.fallback_failures += 1;
                            }
                        }
                    }
                    let d = safety_step(mode, unit.fallback, &verdict, u_nom[i], k, self.cycle_steps, model.bounds)?;
                    if let Some((rec, _)) = unit.recapture.filter(|_| d.mode == SafetyMode::Nominal) {
                        self.log.stats.recaptures[rec].end = Some(t);
                    }
                    let recapture = if d.mode == SafetyMode::Nominal { None } else { unit.recapture };
                    (SafetyUnit { mode: d.mode, fallback: d.fallback, applied: Some(d.applied), recapture }, verdict.min_gap)
                }
            };
            if next.mode != unit.mode {
                self.push_event(t, EventKind::ModeSwitch {
                    vehicle: id,
                    from: unit.mode,
                    to: next.mode,
                    cycle: k / self.cycle_steps,
                    min_gap,
                });
            }
            self.agents[i].safety = Some(next);
        }
        Ok(())
    }

    fn sample(&self, t: f64, cmds: &[Cmd], x_pred_nu: bool) -> LogRow {
        let h = self.cfg.h;
        let mut vehicles = vec![None; self.log.n_ids.max(self.next_id - 1)];
        for (i, a) in self.agents.iter().enumerate() {
            let mut s = VehicleSample {
                q: a.s.q,
                v: a.s.v,
                a: a.s.a,
                u: cmds[i].u,
                u_bl: a.s.u_bl,
                k_ptau_bar: a.k_ptau,
                k_d_bar: a.k_d,
                tau_bar: a.tau,
                kp_bar: a.k_ptau / a.tau,
                a_max_bar: a.a_max,
                a_min_bar: a.a_min,
                ..Default::default()
            };
            if i > 0 {
                let pred = &self.agents[i - 1];
                let se = spacing_error(&pred.s, &a.s, h, a.p.length);
                s.e = Some(se.e);
                s.gap = Some(se.gap);
                s.x_hat = a.obs.as_ref().map(|o| o.uio);
                s.x_pred = Some([pred.s.v, pred.s.a, pred.s.u_bl]);
                if x_pred_nu && i > 1 {
                    s.nu_o = Some(self.nu_o(i));
                }
                s.comm_up = Some(a.comm_up);
                s.mode = a.safety.as_ref().map(|u| u.mode);
            }
            vehicles[a.id - 1] = Some(s);
        }
        LogRow { t, vehicles }
    }

    /// Unknown input driving the predecessor of vehicle `i` in the group model.
    fn nu_o(&self, i: usize) -> f64 {
        let g = self.limits.group();
        let (pp, p) = (&self.agents[i - 2], &self.agents[i - 1]);
        g.kp * (pp.s.q - p.s.q - p.p.length) + g.kd * pp.s.v + pp.s.u_bl
    }

    fn track_convergence(&mut self, t: f64) {
        if self.cfg.controller.mode != ControllerMode::SelfOrganizing {
            return;
        }
        let l = self.limits;
        let averaged = self.agents.iter().all(|a| {
            (a.k_ptau - l.k_ptau0).abs() < CONSENSUS_TOL
                && (a.k_d - l.k_d0).abs() < CONSENSUS_TOL
                && (a.tau - l.tau0).abs() < CONSENSUS_TOL
        });
        let extremes = self.agents.iter().all(|a| a.a_max == l.a_max0 && a.a_min == l.a_min0);
        let st = &mut self.log.stats;
        st.consensus_time = if averaged { st.consensus_time.or(Some(t)) } else { None };
        st.maxmin_time = if extremes { st.maxmin_time.or(Some(t)) } else { None };
    }

    fn check_contacts(&mut self, t: f64) -> bool {
        let mut new_contact = false;
        for i in 1..self.agents.len() {
            let se = spacing_error(&self.agents[i - 1].s, &self.agents[i].s, self.cfg.h, self.agents[i].p.length);
            let touching = se.gap <= 0.0;
            if touching && !self.agents[i].contact {
                new_contact = true;
                let (pred, ego) = (self.agents[i - 1].id, self.agents[i].id);
                self.push_event(t, EventKind::Collision { pred, ego, gap: se.gap });
            }
            self.agents[i].contact = touching;
        }
        new_contact
    }

    fn run(mut self) -> Result<TrajectoryLog> {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let n_steps = cfg.n_steps();
        let observing = cfg.controller.observer_enabled;
        self.track_convergence(0.0);
        for k in 0..=n_steps {
            let t = k as f64 * dt;
            self.apply_events(k, t)?;
            self.update_comm(t);
            let mut plans = self.plans();
            let mut x = self.pack();

            let start: Vec<Cmd> = {
                let ctx = self.ctx(&plans, k);
                (0..self.agents.len()).map(|i| ctx.command(i, &x, 0.0)).collect()
            };
            for (i, c) in start.iter().enumerate() {
                if let Some((lo, hi)) = plans[i].saturation {
                    let u_bl = self.agents[i].s.u_bl;
                    plans[i].frozen = windup_branch(c.u_ctrl, u_bl, c.xi, hi, lo) != WindupBranch::Integrating;
                }
            }
            let u_nom: Vec<f64> = start.iter().map(|c| c.u_ctrl).collect();
            if cfg.safety.enabled {
                if k % self.cycle_steps == 0 {
                    self.safety_cycle(k, t, &u_nom)?;
                }
                let decel_profile = cfg.safety.emergency;
                for (i, plan) in plans.iter_mut().enumerate().skip(1) {
                    let unit = self.agents[i].safety.as_ref().expect("safety unit");
                    plan.applied = unit.applied;
                    if let Some(Applied::Emergency(fb)) = unit.applied {
                        plan.bounds = fb.bounds.map(|(lo, hi)| (lo.min(-decel_profile.decel), hi));
                    } else if let Some(fb) = unit.fallback.filter(|_| unit.applied.is_some()) {
                        plan.bounds = fb.bounds;
                    }
                }
            }
            let cmds: Vec<Cmd> = {
                let ctx = self.ctx(&plans, k);
                (0..self.agents.len()).map(|i| ctx.command(i, &x, 0.0)).collect()
            };
            for (a, c) in self.agents.iter_mut().zip(&cmds) {
                a.last_u = c.u;
            }
            if k % cfg.sample_every as u64 == 0 {
                let row = self.sample(t, &cmds, observing);
                self.note_nu_o(&row);
                self.log.rows.push(row);
            }
            if k == n_steps {
                break;
            }

            let v_meas: Vec<f64> = (0..self.agents.len())
                .map(|i| {
                    if i == 0 {
                        return 0.0;
                    }
                    let n = plans[i].noise;
                    let (ego, pred) = (self.agents[i].s, self.agents[i - 1].s);
                    (ego.v + n.v) + (pred.v - ego.v + n.rel_v)
                })
                .collect();
            {
                let ctx = Ctx {
                    cfg,
                    agents: &self.agents,
                    plans: &plans,
                    graph: &self.graph,
                    limits: &self.limits,
                    k,
                };
                self.rk.step(0.0, &mut x, dt, |s, x, dx| ctx.rhs(s, x, dx));
            }
            let t_next = (k + 1) as f64 * dt;
            for (i, a) in self.agents.iter_mut().enumerate() {
                let o = i * NV;
                a.s = VehicleState::new(x[o], x[o + 1], x[o + 2], x[o + 3]);
                clamp_after_step(&mut a.s.v, &mut a.s.a, plans[i].bounds);
                (a.k_ptau, a.k_d, a.tau) = (x[o + 4], x[o + 5], x[o + 6]);
                if !x[o..o + NV].iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence {
                        vehicle: a.id,
                        t: t_next,
                        what: "non-finite state after integration".into(),
                    });
                }
            }
            if cfg.controller.mode == ControllerMode::SelfOrganizing {
                let mut max: Vec<f64> = self.agents.iter().map(|a| a.a_max).collect();
                let mut min: Vec<f64> = self.agents.iter().map(|a| a.a_min).collect();
                let c = &cfg.consensus;
                maxmin_step(&mut max, &mut min, &self.graph, c.maxmin_rate, dt, c.deadband);
                for (a, (hi, lo)) in self.agents.iter_mut().zip(max.into_iter().zip(min)) {
                    (a.a_max, a.a_min) = (hi, lo);
                }
            }
            if observing {
                self.step_observers(&v_meas, dt)?;
            }
            self.track_convergence(t_next);
            if self.check_contacts(t_next) && cfg.halt_on_collision {
                self.log.stats.halted = true;
                self.push_event(t_next, EventKind::Halted);
                let ctx_plans = self.plans();
                let ctx = self.ctx(&ctx_plans, k + 1);
                let x = self.pack();
                let cmds: Vec<Cmd> = (0..self.agents.len()).map(|i| ctx.command(i, &x, 0.0)).collect();
                let row = self.sample(t_next, &cmds, observing);
                self.log.rows.push(row);
                self.log.stats.steps = k + 1;
                return Ok(self.log);
            }
            self.log.stats.steps = k + 1;
        }
        Ok(self.log)
    }

    fn note_nu_o(&mut self, row: &LogRow) {
        let obs = &self.cfg.observer;
        for s in row.vehicles.iter().flatten() {
            if let Some(nu) = s.nu_o {
                let st = &mut self.log.stats;
                st.max_abs_nu_o = Some(st.max_abs_nu_o.map_or(nu.abs(), |m: f64| m.max(nu.abs())));
                if nu.abs() > obs.eta {
                    st.eta_exceeded = true;
                }
            }
        }
    }

    fn step_observers(&mut self, v_meas: &[f64], dt: f64) -> Result<()> {
        for i in 1..self.agents.len() {
            if self.agents[i].obs.is_none() {
                continue;
            }
            if self.agents[i].comm_up && self.cfg.controller.mode == ControllerMode::SelfOrganizing {
                let g = self.observer_group(i);
                let old = self.agents[i].obs_group.expect("observer group");
                let moved = |a: f64, b: f64| (a - b).abs() > 1e-9 * b.abs().max(1e-3);
                if moved(g.tau, old.tau) || moved(g.kp, old.kp) || moved(g.kd, old.kd) {
                    let mat = build_observer_matrices(&g, self.cfg.h, &self.cfg.observer)?;
                    let a = &mut self.agents[i];
                    a.obs.as_mut().expect("observer").mat = mat;
                    a.obs_group = Some(g);
                }
            }
            let obs = self.agents[i].obs.as_mut().expect("observer");
            obs.step(v_meas[i], dt, &mut self.aux);
        }
        Ok(())
    }

    fn ctx<'b>(&'b self, plans: &'b [StepPlan], k: u64) -> Ctx<'b> {
        Ctx { cfg: self.cfg, agents: &self.agents, plans, graph: &self.graph, limits: &self.limits, k }
    }
}
