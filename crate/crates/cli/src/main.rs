//! `platoon`: run scenarios, paired suites, feature comparisons and sweeps.
//!
//! Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 numerical
//! divergence, 4 collision with halt-on-collision, 5 a suite claim failed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use platoon_core::suites::{self, SuiteOptions};
use platoon_core::{presets, run_scenario, Error, Event, Metrics, ScenarioConfig, SimOutcome};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Self-organizing CACC platoon simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory and report.
    Run {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        common: Common,
    },
    /// Run a paired suite and check its claims.
    Replicate {
        /// One of accel-limits, comm-failure, safety-brake, cut-in, merge, sinusoid.
        suite: String,
        #[command(flatten)]
        common: Common,
        /// Random braking profiles in the safety-brake suite.
        #[arg(long, default_value_t = 200)]
        fuzz: usize,
    },
    /// Run a scenario with a boolean feature off and on, same seed.
    Compare {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        common: Common,
        /// self-organizing, accel-limits, observer, safety-layer, or any
        /// boolean config key.
        #[arg(long)]
        feature: String,
    },
    /// One run per value of a config key.
    Sweep {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        common: Common,
        /// Dotted config key, e.g. observer.epsilon.
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML), or a run report written by this tool.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: reference, accel-limits, comm-failure, safety-brake,
    /// cut-in, merge, sinusoid.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config value, `key.path=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    halt_on_collision: bool,
}

enum Failure {
    Io(PathBuf, std::io::Error),
    Core(Error),
    Collision,
    Claims(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(..) => 1,
            Failure::Core(Error::Divergence { .. } | Error::NonFinite(_) | Error::CommunicationFailure { .. }) => 3,
            Failure::Core(_) => 2,
            Failure::Collision => 4,
            Failure::Claims(_) => 5,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Collision => write!(f, "collision; run halted"),
            Failure::Claims(n) => write!(f, "{n} claim(s) failed"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Res<T> = Result<T, Failure>;

fn parse_sets(sets: &[String]) -> Res<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")).into())
        })
        .collect()
}

/// A report embeds its config under `[config]`; accept either form.
fn config_text(text: &str) -> Res<String> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    match table.get("config") {
        Some(toml::Value::Table(c)) if table.contains_key("metrics") => {
            toml::to_string(c).map_err(|e| Error::Config(e.to_string()).into())
        }
        _ => Ok(text.to_string()),
    }
}

fn load(src: &Source, common: &Common) -> Res<ScenarioConfig> {
    let mut overrides = parse_sets(&common.set)?;
    if common.halt_on_collision {
        overrides.push(("halt_on_collision".into(), "true".into()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let text = match (&src.config, &src.preset) {
        (Some(path), _) => {
            let raw = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            config_text(&raw)?
        }
        (None, Some(name)) => presets::by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?
            .to_toml(),
        (None, None) => return Err(Error::Config("either --config or --preset is required".into()).into()),
    };
    Ok(ScenarioConfig::from_toml_with_overrides(&text, &overrides)?)
}

#[derive(Serialize)]
struct Report<'a> {
    metrics: &'a Metrics,
    events: &'a [Event],
    config: &'a ScenarioConfig,
}

fn report_toml(cfg: &ScenarioConfig, out: &SimOutcome) -> String {
    let r = Report { metrics: &out.metrics, events: &out.log.events, config: cfg };
    toml::to_string(&r).expect("report serializes")
}

fn write(path: &Path, contents: &str) -> Res<()> {
    fs::write(path, contents).map_err(|e| Failure::Io(path.to_path_buf(), e))
}

fn mkdir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(dir.to_path_buf(), e))
}

fn write_run(dir: &Path, csv: &str, report: &str, cfg: &ScenarioConfig, out: &SimOutcome) -> Res<()> {
    let csv = dir.join(csv);
    let file = fs::File::create(&csv).map_err(|e| Failure::Io(csv.clone(), e))?;
    out.log.write_csv(std::io::BufWriter::new(file)).map_err(|e| Failure::Io(csv.clone(), e))?;
    write(&dir.join(report), &report_toml(cfg, out))
}

fn summary(label: &str, m: &Metrics) -> String {
    format!(
        "{label}: collision {} max|e| {:.4} m min gap {:.4} m consensus {}",
        m.collision,
        m.max_abs_e(),
        m.min_gap(),
        m.consensus_time.map_or("-".into(), |t| format!("{t:.2} s"))
    )
}

fn cmd_run(src: &Source, common: &Common) -> Res<()> {
    let cfg = load(src, common)?;
    let out = run_scenario(&cfg)?;
    mkdir(&common.out)?;
    write_run(&common.out, "trajectory.csv", "report.toml", &cfg, &out)?;
    println!("{}", summary(&cfg.name, &out.metrics));
    if out.metrics.halted {
        return Err(Failure::Collision);
    }
    Ok(())
}

fn cmd_replicate(suite: &str, common: &Common, fuzz: usize) -> Res<()> {
    let mut overrides = parse_sets(&common.set)?;
    if common.halt_on_collision {
        overrides.push(("halt_on_collision".into(), "true".into()));
    }
    let opts = SuiteOptions { seed: common.seed, overrides, fuzz_runs: fuzz };
    let report = suites::replicate(suite, &opts)?;
    let dir = common.out.join(suite);
    mkdir(&dir)?;
    for arm in &report.arms {
        write_run(&dir, &format!("{}.csv", arm.label), &format!("{}.toml", arm.label), &arm.config, &arm.outcome)?;
    }
    let text = report.to_text();
    write(&dir.join("report.txt"), &text)?;
    print!("{text}");
    match report.failures().count() {
        0 => Ok(()),
        n => Err(Failure::Claims(n)),
    }
}

fn feature_key(name: &str) -> (&str, &str, &str) {
    match name {
        "self-organizing" => ("controller.mode", "heterogeneous-baseline", "self-organizing"),
        "accel-limits" => ("controller.limits_enabled", "false", "true"),
        "observer" => ("controller.observer_enabled", "false", "true"),
        "safety-layer" => ("safety.enabled", "false", "true"),
        other => (other, "false", "true"),
    }
}

fn cmd_compare(src: &Source, common: &Common, feature: &str) -> Res<()> {
    let base = load(src, common)?;
    let (key, off, on) = feature_key(feature);
    let arms = [("off", base.with_override(key, off)?), ("on", base.with_override(key, on)?)];
    let cfgs: Vec<ScenarioConfig> = arms.iter().map(|(_, c)| c.clone()).collect();
    let outs = suites::run_many(&cfgs);
    mkdir(&common.out)?;
    let mut text = format!("compare {feature} ({key}) on {} seed {}\n", base.name, base.seed);
    let mut halted = false;
    for ((label, cfg), out) in arms.iter().zip(outs) {
        let out = out?;
        write_run(&common.out, &format!("{label}.csv"), &format!("{label}.toml"), cfg, &out)?;
        halted |= out.metrics.halted;
        text.push_str(&format!("  {}\n", summary(label, &out.metrics)));
        for f in &out.metrics.followers {
            text.push_str(&format!(
                "    v{} max|e| {:.4} min gap {:.4} time-gap error {:.5}\n",
                f.id, f.max_abs_e, f.min_gap, f.mean_time_gap_error
            ));
        }
    }
    write(&common.out.join("compare.txt"), &text)?;
    print!("{text}");
    if halted {
        return Err(Failure::Collision);
    }
    Ok(())
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6e}"))
}

fn cmd_sweep(src: &Source, common: &Common, param: &str, values: &[String]) -> Res<()> {
    let base = load(src, common)?;
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    let mut rows = vec![
        "value,collision,max_abs_e,min_gap,consensus_time,maxmin_time,mean_time_gap_error,observer_steady_error,error".to_string(),
    ];
    let prepared: Vec<Result<ScenarioConfig, Error>> = values.iter().map(|v| base.with_override(param, v)).collect();
    let runnable: Vec<ScenarioConfig> = prepared.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let mut outs = suites::run_many(&runnable).into_iter();
    for (v, p) in values.iter().zip(&prepared) {
        let result = match p {
            Ok(_) => outs.next().expect("one outcome per runnable config"),
            Err(e) => Err(e.clone()),
        };
        rows.push(match result {
            Ok(o) => {
                let m = &o.metrics;
                format!(
                    "{v},{},{:.6e},{:.6e},{},{},{},{},",
                    m.collision,
                    m.max_abs_e(),
                    m.min_gap(),
                    opt(m.consensus_time),
                    opt(m.maxmin_time),
                    opt(mean(m.followers.iter().map(|f| f.mean_time_gap_error))),
                    opt(mean(m.followers.iter().filter_map(|f| f.observer_steady_error))),
                )
            }
            Err(e) => format!("{v},,,,,,,,\"{}\"", e.to_string().trim().replace('"', "'").replace('\n', " ")),
        });
    }
    mkdir(&common.out)?;
    let table = rows.join("\n") + "\n";
    write(&common.out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Run { src, common } => cmd_run(src, common),
        Command::Replicate { suite, common, fuzz } => cmd_replicate(suite, common, *fuzz),
        Command::Compare { src, common, feature } => cmd_compare(src, common, feature),
        Command::Sweep { src, common, param, values } => cmd_sweep(src, common, param, values),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("platoon: {f}");
            ExitCode::from(f.code())
        }
    }
}
