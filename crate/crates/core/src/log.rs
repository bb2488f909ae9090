//! Time-indexed simulation output, CSV serialization and metrics.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::safety::SafetyMode;
use crate::scenario::ScenarioConfig;

/// One vehicle at one sample. Follower-only fields are `None` for the leader.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleSample {
    pub q: f64,
    pub v: f64,
    pub a: f64,
    /// Command applied at the start of the following step.
    pub u: f64,
    pub u_bl: f64,
    pub e: Option<f64>,
    pub gap: Option<f64>,
    pub k_ptau_bar: f64,
    pub k_d_bar: f64,
    pub tau_bar: f64,
    pub kp_bar: f64,
    pub a_max_bar: f64,
    pub a_min_bar: f64,
    /// Observer estimate `(v̂, â, û_bl)` of the predecessor.
    pub x_hat: Option<[f64; 3]>,
    /// Predecessor's true `(v, a, u_bl)`.
    pub x_pred: Option<[f64; 3]>,
    /// Unknown input of the predecessor model, when defined.
    pub nu_o: Option<f64>,
    pub comm_up: Option<bool>,
    pub mode: Option<SafetyMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Indexed by vehicle id - 1; `None` when the vehicle is not (yet) present.
    pub vehicles: Vec<Option<VehicleSample>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Collision { pred: usize, ego: usize, gap: f64 },
    CommLost { follower: usize },
    CommRestored { follower: usize },
    ModeSwitch { vehicle: usize, from: SafetyMode, to: SafetyMode, cycle: u64, min_gap: f64 },
    CutIn { vehicle: usize, position: usize, gap: f64, safe_gap: f64 },
    Merge { vehicles: Vec<usize> },
    Halted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.2} ", self.t)?;
        match &self.kind {
            EventKind::Collision { pred, ego, gap } => write!(f, "collision between {pred} and {ego} (gap {gap:.3} m)"),
            EventKind::CommLost { follower } => write!(f, "link into vehicle {follower} lost"),
            EventKind::CommRestored { follower } => write!(f, "link into vehicle {follower} restored"),
            EventKind::ModeSwitch { vehicle, from, to, cycle, min_gap } => write!(
                f,
                "vehicle {vehicle}: {} -> {} at cycle {cycle} (min gap {min_gap:.3} m)",
                from.as_str(),
                to.as_str()
            ),
            EventKind::CutIn { vehicle, position, gap, safe_gap } => write!(
                f,
                "vehicle {vehicle} cut in at position {position}, gap {gap:.2} m (safe {safe_gap:.2} m)"
            ),
            EventKind::Merge { vehicles } => write!(f, "merged vehicles {vehicles:?}"),
            EventKind::Halted => write!(f, "halted on collision"),
        }
    }
}

/// Counters and times tracked during the run rather than from samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    /// First time after which all average-consensus variables stay within
    /// tolerance of their limits.
    pub consensus_time: Option<f64>,
    /// First time after which all max-min estimates equal the true extremes.
    pub maxmin_time: Option<f64>,
    pub max_abs_nu_o: Option<f64>,
    pub eta_exceeded: bool,
    pub fallback_checks: u64,
    pub fallback_failures: u64,
    pub recaptures: Vec<Recapture>,
    pub halted: bool,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recapture {
    pub vehicle: usize,
    pub start: f64,
    pub end: Option<f64>,
    pub escalated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub h: f64,
    pub dt_sample: f64,
    pub physical_accel_clamp: bool,
    /// Number of vehicle ids ever present.
    pub n_ids: usize,
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
    pub stats: RunStats,
}

const FIELDS: [&str; 22] = [
    "q", "v", "a", "u", "u_bl", "e", "gap", "kptau_bar", "kd_bar", "tau_bar", "kp_bar", "amax_bar", "amin_bar",
    "vhat", "ahat", "ublhat", "v_pred", "a_pred", "ubl_pred", "nu_o", "comm", "mode",
];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl TrajectoryLog {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        for id in 1..=self.n_ids {
            for f in FIELDS {
                cols.push(format!("v{id}_{f}"));
            }
        }
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        for row in &self.rows {
            let mut cells = vec![num(row.t)];
            for id in 0..self.n_ids {
                match row.vehicles.get(id).copied().flatten() {
                    None => cells.extend(std::iter::repeat_n(String::new(), FIELDS.len())),
                    Some(s) => {
                        cells.extend([s.q, s.v, s.a, s.u, s.u_bl].map(num));
                        cells.push(opt(s.e));
                        cells.push(opt(s.gap));
                        cells.extend([s.k_ptau_bar, s.k_d_bar, s.tau_bar, s.kp_bar, s.a_max_bar, s.a_min_bar].map(num));
                        for k in 0..3 {
                            cells.push(opt(s.x_hat.map(|x| x[k])));
                        }
                        for k in 0..3 {
                            cells.push(opt(s.x_pred.map(|x| x[k])));
                        }
                        cells.push(opt(s.nu_o));
                        cells.push(s.comm_up.map(|c| if c { "1" } else { "0" }.to_string()).unwrap_or_default());
                        cells.push(s.mode.map(|m| m.as_str().to_string()).unwrap_or_default());
                    }
                }
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Samples of one vehicle as `(t, sample)` pairs.
    pub fn series(&self, id: usize) -> impl Iterator<Item = (f64, &VehicleSample)> + '_ {
        self.rows
            .iter()
            .filter_map(move |r| r.vehicles.get(id - 1).and_then(|s| s.as_ref()).map(|s| (r.t, s)))
    }

    /// Largest `|e|` of a follower over `[t0, t1]`.
    pub fn max_abs_e_between(&self, id: usize, t0: f64, t1: f64) -> f64 {
        self.series(id)
            .filter(|(t, _)| *t >= t0 - 1e-9 && *t <= t1 + 1e-9)
            .filter_map(|(_, s)| s.e)
            .fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn follower_ids(&self) -> Vec<usize> {
        (1..=self.n_ids).filter(|&id| self.series(id).any(|(_, s)| s.e.is_some())).collect()
    }

    pub fn collisions(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Collision { .. }))
    }

    pub fn end_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: usize,
    pub max_abs_e: f64,
    pub rms_e_steady: f64,
    pub min_gap: f64,
    pub mean_time_gap_error: f64,
    pub collision: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer_steady_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observer_peak_ubl_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub collision: bool,
    pub collision_count: usize,
    pub halted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maxmin_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_nu_o: Option<f64>,
    pub eta_exceeded: bool,
    pub fallback_checks: u64,
    pub fallback_failures: u64,
    pub mode_switches: usize,
    pub recaptures: Vec<Recapture>,
    pub followers: Vec<VehicleMetrics>,
}

impl Metrics {
    pub fn follower(&self, id: usize) -> Option<&VehicleMetrics> {
        self.followers.iter().find(|m| m.id == id)
    }

    pub fn max_abs_e(&self) -> f64 {
        self.followers.iter().fold(0.0, |m, v| m.max(v.max_abs_e))
    }

    pub fn min_gap(&self) -> f64 {
        self.followers.iter().fold(f64::INFINITY, |m, v| m.min(v.min_gap))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }
}

pub fn compute_metrics(log: &TrajectoryLog, cfg: &ScenarioConfig) -> Metrics {
    let t_end = log.end_time();
    let steady_from = t_end - cfg.steady_window;
    let collided: Vec<usize> = log
        .collisions()
        .filter_map(|e| match e.kind {
            EventKind::Collision { ego, .. } => Some(ego),
            _ => None,
        })
        .collect();
    let mut followers = Vec::new();
    for id in log.follower_ids() {
        let mut max_e: f64 = 0.0;
        let mut min_gap = f64::INFINITY;
        let (mut tg_sum, mut tg_n) = (0.0, 0usize);
        let (mut sq, mut sq_n) = (0.0, 0usize);
        let (mut obs, mut obs_n) = (0.0, 0usize);
        let mut obs_peak: Option<f64> = None;
        for (t, s) in log.series(id) {
            let (Some(e), Some(gap)) = (s.e, s.gap) else { continue };
            max_e = max_e.max(e.abs());
            min_gap = min_gap.min(gap);
            tg_sum += (gap / s.v.max(cfg.v_floor) - cfg.h).abs();
            tg_n += 1;
            if let (Some(xh), Some(xp)) = (s.x_hat, s.x_pred) {
                let err = (xh[2] - xp[2]).abs();
                obs_peak = Some(obs_peak.map_or(err, |p: f64| p.max(err)));
                if t >= steady_from - 1e-9 {
                    let d = [xp[0] - xh[0], xp[1] - xh[1], xp[2] - xh[2]];
                    obs += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    obs_n += 1;
                }
            }
            if t >= steady_from - 1e-9 {
                sq += e * e;
                sq_n += 1;
            }
        }
        followers.push(VehicleMetrics {
            id,
            max_abs_e: max_e,
            rms_e_steady: if sq_n > 0 { (sq / sq_n as f64).sqrt() } else { 0.0 },
            min_gap,
            mean_time_gap_error: if tg_n > 0 { tg_sum / tg_n as f64 } else { 0.0 },
            collision: collided.contains(&id),
            observer_steady_error: (obs_n > 0).then(|| obs / obs_n as f64),
            observer_peak_ubl_error: obs_peak,
        });
    }
    let s = &log.stats;
    Metrics {
        collision: !collided.is_empty(),
        collision_count: collided.len(),
        halted: s.halted,
        consensus_time: s.consensus_time,
        maxmin_time: s.maxmin_time,
        max_abs_nu_o: s.max_abs_nu_o,
        eta_exceeded: s.eta_exceeded,
        fallback_checks: s.fallback_checks,
        fallback_failures: s.fallback_failures,
        mode_switches: log.events.iter().filter(|e| matches!(e.kind, EventKind::ModeSwitch { .. })).count(),
        recaptures: s.recaptures.clone(),
        followers,
    }
}
