//! Declarative experiment description.

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusConfig;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::noise::NoiseConfig;
use crate::observer::ObserverConfig;
use crate::safety::SafetyConfig;
use crate::vehicle::VehicleParams;

/// Leader reference acceleration `u_r(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderProfile {
    /// Constant reference (zero keeps the initial speed).
    Constant {
        #[serde(default)]
        u_r: f64,
    },
    /// Accelerate, cruise, decelerate, cruise.
    Trapezoid {
        #[serde(default = "d_limit")]
        accel: f64,
        #[serde(default = "d_limit")]
        decel: f64,
        #[serde(default = "d_start")]
        start: f64,
        #[serde(default = "d_phase")]
        accel_time: f64,
        #[serde(default = "d_cruise")]
        cruise_time: f64,
        #[serde(default = "d_phase")]
        decel_time: f64,
    },
    /// Consecutive `[duration, u_r]` segments; zero afterwards.
    Piecewise { segments: Vec<[f64; 2]> },
    /// Repeated brake / stand / accelerate / cruise cycles.
    StopAndGo {
        start: f64,
        decel: f64,
        brake_time: f64,
        stop_time: f64,
        accel: f64,
        accel_time: f64,
        cruise_time: f64,
        cycles: usize,
    },
    /// Hard braking from `time` onward.
    FullBrake { time: f64, decel: f64 },
    /// Speed `mean + amplitude·sin(2πt/period)`.
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
}

fn d_limit() -> f64 {
    0.425
}
fn d_start() -> f64 {
    10.0
}
fn d_phase() -> f64 {
    40.0
}
fn d_cruise() -> f64 {
    30.0
}

impl Default for LeaderProfile {
    fn default() -> Self {
        LeaderProfile::Constant { u_r: 0.0 }
    }
}

fn piecewise(segments: &[[f64; 2]], t: f64) -> f64 {
    let mut t0 = 0.0;
    for &[dur, u] in segments {
        if t < t0 + dur {
            return u;
        }
        t0 += dur;
    }
    0.0
}

impl LeaderProfile {
    pub fn u_r(&self, t: f64) -> f64 {
        match self {
            LeaderProfile::Constant { u_r } => *u_r,
            LeaderProfile::Trapezoid { accel, decel, start, accel_time, cruise_time, decel_time } => {
                let t1 = start + accel_time;
                let t2 = t1 + cruise_time;
                let t3 = t2 + decel_time;
                if t < *start || t >= t3 {
                    0.0
                } else if t < t1 {
                    *accel
                } else if t < t2 {
                    0.0
                } else {
                    -decel
                }
            }
            LeaderProfile::Piecewise { segments } => piecewise(segments, t),
            LeaderProfile::StopAndGo { start, decel, brake_time, stop_time, accel, accel_time, cruise_time, cycles } => {
                if t < *start {
                    return 0.0;
                }
                let period = brake_time + stop_time + accel_time + cruise_time;
                let k = ((t - start) / period).floor();
                if k as usize >= *cycles {
                    return 0.0;
                }
                let tau = t - start - k * period;
                piecewise(&[[*brake_time, -decel], [*stop_time, 0.0], [*accel_time, *accel], [*cruise_time, 0.0]], tau)
            }
            LeaderProfile::FullBrake { time, decel } => {
                if t >= *time {
                    -decel
                } else {
                    0.0
                }
            }
            LeaderProfile::Sinusoid { amplitude, period, .. } => {
                let w = 2.0 * std::f64::consts::PI / period;
                amplitude * w * (w * t).cos()
            }
        }
    }

    fn validate(&self, initial_speed: f64) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("leader profile: {m}")));
        match self {
            LeaderProfile::Trapezoid { accel_time, cruise_time, decel_time, .. }
                if *accel_time < 0.0 || *cruise_time < 0.0 || *decel_time < 0.0 =>
            {
                bad("phase durations must be non-negative")
            }
            LeaderProfile::Piecewise { segments } if segments.iter().any(|s| !(s[0] >= 0.0)) => {
                bad("segment durations must be non-negative")
            }
            LeaderProfile::StopAndGo { brake_time, stop_time, accel_time, cruise_time, .. }
                if brake_time + stop_time + accel_time + cruise_time <= 0.0 =>
            {
                bad("stop-and-go cycle must have positive length")
            }
            LeaderProfile::FullBrake { decel, .. } if !(*decel > 0.0) => bad("brake deceleration must be positive"),
            LeaderProfile::Sinusoid { mean, amplitude, period } => {
                if !(*period > 0.0) || *amplitude < 0.0 {
                    bad("sinusoid needs a positive period and non-negative amplitude")
                } else if (initial_speed - mean).abs() > 1e-9 {
                    bad("initial_speed must equal the sinusoid mean")
                } else if amplitude > mean {
                    bad("amplitude larger than the mean would reverse the leader")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Links lose communication during `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureWindow {
    pub start: f64,
    pub end: f64,
    /// Chain positions (1 = leader) of the followers whose link to their
    /// predecessor fails. Empty means every link.
    #[serde(default)]
    pub followers: Vec<usize>,
}

/// A vehicle inserted in front of the follower at `position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutIn {
    pub time: f64,
    /// Chain position (1 = leader) the new vehicle takes; the vehicle that
    /// held it becomes its follower.
    pub position: usize,
    /// New gap as a fraction of the follower's safe gap.
    pub gap_fraction: f64,
    pub vehicle: VehicleParams,
}

/// Vehicles appended behind the current tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Merge {
    pub time: f64,
    /// Bumper-to-bumper gap from the tail to the first merged vehicle and
    /// between merged vehicles, m.
    pub gap: f64,
    /// Speed of the merged vehicles; defaults to the tail's speed.
    #[serde(default)]
    pub speed: Option<f64>,
    pub vehicles: Vec<VehicleParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "d_name")]
    pub name: String,
    /// Time headway, s.
    pub h: f64,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Log every n-th step.
    #[serde(default = "d_sample")]
    pub sample_every: usize,
    #[serde(default)]
    pub halt_on_collision: bool,
    /// Clamp physical acceleration to each vehicle's own limits even when the
    /// resilient bounds are off.
    #[serde(default = "d_true")]
    pub physical_accel_clamp: bool,
    /// Initial speed of every vehicle, m/s.
    pub initial_speed: f64,
    /// Offsets added to the equilibrium gaps, one per follower, m.
    #[serde(default)]
    pub initial_spacing_errors: Vec<f64>,
    /// Speed floor in the time-gap metric, m/s.
    #[serde(default = "d_floor")]
    pub v_floor: f64,
    /// Trailing window for steady-state metrics, s.
    #[serde(default = "d_window")]
    pub steady_window: f64,
    #[serde(default)]
    pub leader: LeaderProfile,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub comm_failures: Vec<FailureWindow>,
    #[serde(default)]
    pub cut_ins: Vec<CutIn>,
    #[serde(default)]
    pub merges: Vec<Merge>,
    pub vehicles: Vec<VehicleParams>,
}

fn d_name() -> String {
    "scenario".into()
}
fn d_dt() -> f64 {
    0.01
}
fn d_sample() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_floor() -> f64 {
    0.1
}
fn d_window() -> f64 {
    20.0
}

impl ScenarioConfig {
    /// A config with every optional section at its default.
    pub fn new(vehicles: Vec<VehicleParams>, h: f64, duration: f64, initial_speed: f64) -> Self {
        ScenarioConfig {
            name: d_name(),
            h,
            duration,
            dt: d_dt(),
            seed: 0,
            sample_every: 1,
            halt_on_collision: false,
            physical_accel_clamp: true,
            initial_speed,
            initial_spacing_errors: Vec::new(),
            v_floor: d_floor(),
            steady_window: d_window(),
            leader: LeaderProfile::default(),
            controller: ControllerConfig::default(),
            consensus: ConsensusConfig::default(),
            observer: ObserverConfig::default(),
            safety: SafetyConfig::default(),
            noise: NoiseConfig::default(),
            comm_failures: Vec::new(),
            cut_ins: Vec::new(),
            merges: Vec::new(),
            vehicles,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses TOML, applies `key.path = value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc: toml::Value =
            toml::from_str::<toml::Table>(text).map(toml::Value::Table).map_err(|e| Error::config(e.to_string()))?;
        for (key, value) in overrides {
            set_path(&mut doc, key, parse_value(value))?;
        }
        let cfg: ScenarioConfig = doc.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one dotted-path override to an already parsed config.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        Self::from_toml_with_overrides(&self.to_toml(), &[(key.to_string(), value.to_string())])
    }

    pub fn n_steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vehicles.len() < 2 {
            return bad("at least two vehicles are required".into());
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            v.validate().map_err(|e| Error::Config(format!("vehicle {}: {e}", i + 1)))?;
        }
        if !(self.h > 0.0) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !(self.duration > 0.0) || !(self.dt > 0.0) || self.dt > self.duration {
            return bad("duration and dt must be positive with dt <= duration".into());
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return bad("duration must be a whole number of steps".into());
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        if !(self.initial_speed >= 0.0) {
            return bad("initial_speed must be non-negative".into());
        }
        if self.initial_spacing_errors.len() > self.vehicles.len() - 1 {
            return bad("more initial spacing errors than followers".into());
        }
        if !(self.v_floor > 0.0) || !(self.steady_window > 0.0) {
            return bad("v_floor and steady_window must be positive".into());
        }
        self.leader.validate(self.initial_speed)?;
        let c = &self.consensus;
        if !(c.mu_p > 0.0 && c.mu_d > 0.0 && c.mu_tau > 0.0 && c.maxmin_rate > 0.0 && c.deadband >= 0.0) {
            return bad("consensus gains must be positive".into());
        }
        if self.controller.observer_enabled {
            self.observer.validate()?;
        }
        if self.safety.enabled {
            self.safety.validate(self.dt)?;
        }
        for w in &self.comm_failures {
            if !(w.start < w.end) || w.start < 0.0 || w.end > self.duration + 1e-9 {
                return bad(format!("failure window [{}, {}) must lie within the run", w.start, w.end));
            }
            if w.followers.iter().any(|&p| p < 2) {
                return bad("failure windows name follower positions starting at 2".into());
            }
        }
        for c in &self.cut_ins {
            c.vehicle.validate()?;
            if c.position < 2 || !(c.gap_fraction > 0.0) || !(c.time >= 0.0 && c.time < self.duration) {
                return bad("cut-in needs position >= 2, a positive gap fraction and a time inside the run".into());
            }
        }
        for m in &self.merges {
            if m.vehicles.is_empty() || !(m.gap > 0.0) || !(m.time >= 0.0 && m.time < self.duration) {
                return bad("merge needs vehicles, a positive gap and a time inside the run".into());
            }
            for v in &m.vehicles {
                v.validate()?;
            }
        }
        Ok(())
    }

    /// Whether the link into the follower at chain position `pos` is up.
    pub fn communication_available(&self, t: f64, pos: usize) -> bool {
        !self
            .comm_failures
            .iter()
            .any(|w| t >= w.start && t < w.end && (w.followers.is_empty() || w.followers.contains(&pos)))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key '{key}'")));
    }
    let mut cur = doc;
    for (n, part) in parts.iter().enumerate() {
        let last = n + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(format!("'{part}' in '{key}' is not an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(format!("index {idx} out of range ({len}) in '{key}'")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(format!("'{key}' descends into a scalar"))),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
h = 0.7
duration = 10.0
initial_speed = 20.0

[[vehicles]]
tau = 0.1
kp = 0.2
kd = 0.7
a_max = 0.425
a_min = -0.425

[[vehicles]]
tau = 0.2
kp = 0.1
kd = 0.35
a_max = 0.35
a_min = -0.35
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.dt, 0.01);
        assert_eq!(c.consensus.mu_tau, 2.0);
        assert_eq!(c.noise.radar, 0.025);
        assert_eq!(c.leader, LeaderProfile::Constant { u_r: 0.0 });
        assert_eq!(c.n_steps(), 1000);
    }

    #[test]
    fn overrides_apply() {
        let c = ScenarioConfig::from_toml_with_overrides(
            MINIMAL,
            &[
                ("observer.epsilon".into(), "0.05".into()),
                ("vehicles.1.tau".into(), "0.15".into()),
                ("name".into(), "renamed".into()),
                ("controller.mode".into(), "\"static-homogenized\"".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.observer.epsilon, 0.05);
        assert_eq!(c.vehicles[1].tau, 0.15);
        assert_eq!(c.name, "renamed");
        assert!(ScenarioConfig::from_toml_with_overrides(MINIMAL, &[("vehicles.9.tau".into(), "1".into())]).is_err());
    }

    #[test]
    fn roundtrip() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioConfig::from_toml("h = ").is_err());
        assert!(ScenarioConfig::from_toml(&MINIMAL.replace("h = 0.7", "h = -1.0")).is_err());
        assert!(ScenarioConfig::from_toml(&format!("bogus = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn communication_windows() {
        let mut c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert!(c.communication_available(5.0, 2));
        c.comm_failures.push(FailureWindow { start: 50.0, end: 150.0, followers: vec![] });
        assert!(!c.communication_available(100.0, 2));
        assert!(c.communication_available(150.0, 2));
    }

    #[test]
    fn leader_profiles() {
        let trap = LeaderProfile::Trapezoid {
            accel: 0.425,
            decel: 0.425,
            start: 10.0,
            accel_time: 40.0,
            cruise_time: 30.0,
            decel_time: 40.0,
        };
        assert_eq!(trap.u_r(5.0), 0.0);
        assert_eq!(trap.u_r(20.0), 0.425);
        assert_eq!(trap.u_r(60.0), 0.0);
        assert_eq!(trap.u_r(100.0), -0.425);
        assert_eq!(trap.u_r(130.0), 0.0);
        let pw = LeaderProfile::Piecewise { segments: vec![[5.0, 1.0], [5.0, -1.0]] };
        assert_eq!((pw.u_r(1.0), pw.u_r(7.0), pw.u_r(11.0)), (1.0, -1.0, 0.0));
        let s = LeaderProfile::Sinusoid { mean: 15.0, amplitude: 6.0, period: 70.0 };
        assert!((s.u_r(0.0) - 6.0 * 2.0 * std::f64::consts::PI / 70.0).abs() < 1e-12);
    }
}
