//! Paired experiments: each suite runs its feature-off and feature-on arms on
//! a shared seed and checks the expected qualitative outcome.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::presets;
use crate::scenario::{LeaderProfile, ScenarioConfig};
use crate::sim::{run_scenario, SimOutcome};

/// Ratio the observer arm must beat on every follower's peak |e|.
pub const COMM_PEAK_RATIO: f64 = 0.5;
/// Smallest no-observer peak |e| counted as "meters", m.
pub const COMM_MIN_PEAK: f64 = 1.0;
/// Steady spacing error bound, m.
pub const STEADY_E: f64 = 0.1;
pub const SINUSOID_PERIODS: [f64; 3] = [70.0, 50.0, 30.0];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Replaces every arm's seed.
    pub seed: Option<u64>,
    /// `key=value` overrides applied to every arm.
    pub overrides: Vec<(String, String)>,
    /// Random braking profiles run with the safety layer on.
    pub fuzz_runs: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: None, overrides: Vec::new(), fuzz_runs: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub config: ScenarioConfig,
    pub outcome: SimOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

impl Claim {
    fn new(text: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Claim { text: text.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub arms: Vec<Arm>,
    pub claims: Vec<Claim>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Claim> {
        self.claims.iter().filter(|c| !c.passed)
    }

    pub fn arm(&self, label: &str) -> Option<&Arm> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("suite {}\n", self.suite);
        for arm in &self.arms {
            let m = &arm.outcome.metrics;
            let _ = writeln!(
                s,
                "  arm {:<14} seed {:<6} collision {:<5} max|e| {:>10.4} min gap {:>10.4} consensus {}",
                arm.label,
                arm.config.seed,
                m.collision,
                m.max_abs_e(),
                m.min_gap(),
                m.consensus_time.map_or("-".into(), |t| format!("{t:.2} s")),
            );
        }
        for c in &self.claims {
            let _ = writeln!(s, "  [{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.text, c.detail);
        }
        let _ = writeln!(s, "  result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn prepare(mut cfg: ScenarioConfig, opts: &SuiteOptions) -> Result<ScenarioConfig> {
    if !opts.overrides.is_empty() {
        cfg = ScenarioConfig::from_toml_with_overrides(&cfg.to_toml(), &opts.overrides)?;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs independent scenarios on scoped threads, results in input order.
pub fn run_many(cfgs: &[ScenarioConfig]) -> Vec<Result<SimOutcome>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfgs.len().max(1));
    let chunk = cfgs.len().div_ceil(workers).max(1);
    std::thread::scope(|sc| {
        let handles: Vec<_> = cfgs.chunks(chunk).map(|part| sc.spawn(move || part.iter().map(run_scenario).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("simulation thread panicked")).collect()
    })
}

fn run_arms(specs: Vec<(&str, ScenarioConfig)>, opts: &SuiteOptions) -> Result<Vec<Arm>> {
    let cfgs = specs.iter().map(|(_, c)| prepare(c.clone(), opts)).collect::<Result<Vec<_>>>()?;
    let outs = run_many(&cfgs);
    specs
        .into_iter()
        .zip(cfgs)
        .zip(outs)
        .map(|(((label, _), config), out)| Ok(Arm { label: label.to_string(), config, outcome: out? }))
        .collect()
}

fn steady_max_e(out: &SimOutcome, window: f64) -> f64 {
    let end = out.log.end_time();
    out.log.follower_ids().into_iter().map(|id| out.log.max_abs_e_between(id, end - window, end)).fold(0.0, f64::max)
}

/// Leader deceleration window of a trapezoid profile.
fn decel_window(p: &LeaderProfile) -> Option<(f64, f64)> {
    match *p {
        LeaderProfile::Trapezoid { start, accel_time, cruise_time, decel_time, .. } => {
            let t2 = start + accel_time + cruise_time;
            Some((t2, t2 + decel_time))
        }
        _ => None,
    }
}

/// Runs a named suite.
pub fn replicate(suite: &str, opts: &SuiteOptions) -> Result<SuiteReport> {
    let (arms, claims) = match suite {
        "accel-limits" => accel_limits(opts)?,
        "comm-failure" => comm_failure(opts)?,
        "safety-brake" => safety_brake(opts)?,
        "cut-in" => cut_in(opts)?,
        "merge" => merge(opts)?,
        "sinusoid" => sinusoid(opts)?,
        _ => return Err(Error::config(format!("unknown suite `{suite}`; expected one of {}", presets::SUITES.join(", ")))),
    };
    Ok(SuiteReport { suite: suite.to_string(), arms, claims })
}

type Parts = (Vec<Arm>, Vec<Claim>);

fn accel_limits(opts: &SuiteOptions) -> Result<Parts> {
    let arms = run_arms(vec![("off", presets::accel_limits(false)), ("on", presets::accel_limits(true))], opts)?;
    let (off, on) = (&arms[0], &arms[1]);
    let mut claims = Vec::new();
    let times: Vec<f64> = off.outcome.log.collisions().map(|e| e.t).collect();
    match decel_window(&off.config.leader) {
        Some((t0, t1)) => {
            let during = times.iter().filter(|&&t| t >= t0 && t <= t1).count();
            claims.push(Claim::new(
                "resilience off collides during deceleration",
                during > 0,
                format!("{during} of {} collision events in [{t0:.1}, {t1:.1}] s, first at {}", times.len(), first(&times)),
            ));
        }
        None => claims.push(Claim::new("resilience off collides", !times.is_empty(), format!("{} collision events", times.len()))),
    }
    claims.push(Claim::new(
        "resilience on is collision-free",
        !on.outcome.metrics.collision,
        format!("{} collision events", on.outcome.metrics.collision_count),
    ));
    let w = on.config.steady_window;
    let e = steady_max_e(&on.outcome, w);
    claims.push(Claim::new(
        format!("resilience on steady max |e| < {STEADY_E} m"),
        e < STEADY_E,
        format!("{e:.4} m over the last {w} s"),
    ));
    Ok((arms, claims))
}

fn first(times: &[f64]) -> String {
    times.first().map_or("-".into(), |t| format!("{t:.2} s"))
}

fn comm_failure(opts: &SuiteOptions) -> Result<Parts> {
    let arms = run_arms(vec![("no-observer", presets::comm_failure(false)), ("observer", presets::comm_failure(true))], opts)?;
    let (acc, obs) = (&arms[0].outcome.metrics, &arms[1].outcome.metrics);
    let mut claims = Vec::new();
    for f in &acc.followers {
        let with = obs.follower(f.id).map_or(f64::INFINITY, |g| g.max_abs_e);
        let ratio = with / f.max_abs_e;
        claims.push(Claim::new(
            format!("vehicle {} observer peak |e| < {COMM_PEAK_RATIO} x no-observer peak", f.id),
            ratio < COMM_PEAK_RATIO,
            format!("{with:.3} m vs {:.3} m, ratio {ratio:.3}", f.max_abs_e),
        ));
    }
    let peak = acc.max_abs_e();
    claims.push(Claim::new(
        "no-observer peak |e| is on the order of meters",
        peak >= COMM_MIN_PEAK,
        format!("{peak:.3} m"),
    ));
    Ok((arms, claims))
}

/// Random leader braking profiles for the safety-layer fuzz: a cruise, then a
/// few segments of braking up to the predecessor bound, coasting or mild
/// acceleration.
pub fn brake_fuzz_configs(base: &ScenarioConfig, seed: u64, n: usize) -> Vec<ScenarioConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b_max = base.safety.pred_max_decel;
    (0..n)
        .map(|k| {
            let mut c = base.clone();
            c.name = format!("{}-fuzz-{k}", base.name);
            c.seed = rng.random();
            c.initial_speed = rng.random_range(8.0..25.0);
            let mut segments = vec![[rng.random_range(2.0..8.0), 0.0]];
            for _ in 0..rng.random_range(2..7) {
                let seg = match rng.random_range(0..3) {
                    0 => [rng.random_range(0.2..4.0), -rng.random_range(1.0..=b_max)],
                    1 => [rng.random_range(0.5..3.0), 0.0],
                    _ => [rng.random_range(0.5..4.0), rng.random_range(0.0..2.0)],
                };
                segments.push(seg);
            }
            c.leader = LeaderProfile::Piecewise { segments };
            c
        })
        .collect()
}

fn safety_brake(opts: &SuiteOptions) -> Result<Parts> {
    let arms = run_arms(vec![("off", presets::safety_brake(false)), ("on", presets::safety_brake(true))], opts)?;
    let (off, on) = (&arms[0].outcome.metrics, &arms[1].outcome.metrics);
    let mut claims = vec![
        Claim::new("layer off collides", off.collision, format!("{} collision events", off.collision_count)),
        Claim::new("layer on keeps every gap positive", on.min_gap() > 0.0 && !on.collision, format!("min gap {:.4} m", on.min_gap())),
        Claim::new(
            "fallback re-verification passes every cycle",
            on.fallback_failures == 0 && on.fallback_checks > 0,
            format!("{} checks, {} failures", on.fallback_checks, on.fallback_failures),
        ),
    ];
    if opts.fuzz_runs > 0 {
        let base = arms[1].config.clone();
        let cfgs = brake_fuzz_configs(&base, base.seed, opts.fuzz_runs);
        let mut collided = 0;
        let mut failed = 0;
        let mut errors = 0;
        let mut worst = f64::INFINITY;
        for r in run_many(&cfgs) {
            match r {
                Ok(o) => {
                    collided += usize::from(o.metrics.collision);
                    failed += usize::from(o.metrics.fallback_failures > 0);
                    worst = worst.min(o.metrics.min_gap());
                }
                Err(_) => errors += 1,
            }
        }
        claims.push(Claim::new(
            format!("{} random braking profiles with layer on are collision-free", opts.fuzz_runs),
            collided == 0 && errors == 0 && failed == 0,
            format!("{collided} collided, {failed} with fallback failures, {errors} errors, worst min gap {worst:.3e} m"),
        ));
    }
    Ok((arms, claims))
}

fn cut_in(opts: &SuiteOptions) -> Result<Parts> {
    let arms = run_arms(vec![("cut-in", presets::cut_in())], opts)?;
    let arm = &arms[0];
    let m = &arm.outcome.metrics;
    let horizon = arm.config.safety.recapture_horizon;
    let recovered = !m.recaptures.is_empty()
        && m.recaptures.iter().all(|r| !r.escalated && r.end.is_some_and(|end| end - r.start <= horizon + 1e-9));
    let spans: Vec<String> = m
        .recaptures
        .iter()
        .map(|r| format!("vehicle {} {}", r.vehicle, r.end.map_or("never".into(), |e| format!("{:.2} s", e - r.start))))
        .collect();
    let w = arm.config.steady_window;
    let e = steady_max_e(&arm.outcome, w);
    let claims = vec![
        Claim::new(format!("safe distance re-established within {horizon} s"), recovered, spans.join(", ")),
        Claim::new("no collision", !m.collision, format!("{} collision events", m.collision_count)),
        Claim::new(format!("steady max |e| < {STEADY_E} m"), e < STEADY_E, format!("{e:.4} m over the last {w} s")),
    ];
    Ok((arms, claims))
}

fn merge(opts: &SuiteOptions) -> Result<Parts> {
    let arms = run_arms(vec![("merge", presets::merge())], opts)?;
    let arm = &arms[0];
    let m = &arm.outcome.metrics;
    let merge_t = arm.config.merges.iter().map(|g| g.time).fold(0.0, f64::max);
    let claims = vec![
        Claim::new("no collision", !m.collision, format!("{} collision events", m.collision_count)),
        Claim::new(
            "merged platoon reaches consensus after the merge",
            m.consensus_time.is_some_and(|t| t >= merge_t),
            format!("consensus {}", m.consensus_time.map_or("never".into(), |t| format!("at {t:.2} s"))),
        ),
        Claim::new(
            "max-min bounds agree after the merge",
            m.maxmin_time.is_some_and(|t| t >= merge_t),
            format!("agreement {}", m.maxmin_time.map_or("never".into(), |t| format!("at {t:.2} s"))),
        ),
    ];
    Ok((arms, claims))
}

fn sinusoid(opts: &SuiteOptions) -> Result<Parts> {
    let mut specs = Vec::new();
    let labels: Vec<(String, String)> =
        SINUSOID_PERIODS.iter().map(|p| (format!("hetero-{p}"), format!("group-{p}"))).collect();
    for (p, (lh, lg)) in SINUSOID_PERIODS.iter().zip(&labels) {
        specs.push((lh.as_str(), presets::sinusoid(*p, false)));
        specs.push((lg.as_str(), presets::sinusoid(*p, true)));
    }
    let arms = run_arms(specs, opts)?;
    let mut claims = Vec::new();
    for (pair, p) in arms.chunks(2).zip(SINUSOID_PERIODS) {
        let (het, grp) = (&pair[0].outcome.metrics, &pair[1].outcome.metrics);
        let mut ok = true;
        let mut detail = Vec::new();
        for f in &het.followers {
            let g = grp.follower(f.id).map_or(f64::INFINITY, |g| g.mean_time_gap_error);
            ok &= g < f.mean_time_gap_error;
            detail.push(format!("v{} {:.5}->{g:.5}", f.id, f.mean_time_gap_error));
        }
        claims.push(Claim::new(format!("period {p} s: group model lowers every follower's time-gap error"), ok, detail.join(", ")));
    }
    Ok((arms, claims))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_config_error() {
        assert!(matches!(replicate("nope", &SuiteOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn fuzz_profiles_are_reproducible() {
        let base = presets::safety_brake(true);
        let a = brake_fuzz_configs(&base, 7, 5);
        let b = brake_fuzz_configs(&base, 7, 5);
        assert_eq!(a, b);
        assert_ne!(a[0].leader, a[1].leader);
    }
}
