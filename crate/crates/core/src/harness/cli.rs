use std::path::{Path, PathBuf};
use std::thread;

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::export::write_run;
use super::metrics::{tracking_error_metrics, MetricsReport};
use super::scenario::{FieldError, Scenario};
use crate::schemes::SchemeKind;
use crate::simulator::{run, run_wall_clock, DelayModel, SimError};

#[derive(Debug, Parser)]
#[command(name = "replan", about = "Run and compare NMPC update schemes on simulated vehicles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario with one scheme.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "asap")]
        scheme: SchemeKind,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Real-time ASAP with measured solve times.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Run every scheme on the same scenario and seeds.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary the update period or the delay model.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "asap")]
        scheme: SchemeKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated values of m.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        /// Comma-separated deterministic delays, s.
        #[arg(long, value_delimiter = ',')]
        delay: Vec<f64>,
    },
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        scheme: Option<SchemeKind>,
    },
}

/// Machine-readable error printed to stderr.
#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    fields: Vec<String>,
    message: String,
}

#[derive(Debug)]
enum CliError {
    Validation(FieldError),
    Run(String),
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Run(_) => 1,
            CliError::Usage(_) => 64,
        }
    }

    fn print(&self) {
        let report = match self {
            CliError::Validation(e) => ErrorReport {
                error: "validation",
                fields: e.fields.clone(),
                message: e.message.clone(),
            },
            CliError::Run(m) => ErrorReport {
                error: "run",
                fields: vec![],
                message: m.clone(),
            },
            CliError::Usage(m) => ErrorReport {
                error: "usage",
                fields: vec![],
                message: m.clone(),
            },
        };
        eprintln!("{}", serde_json::to_string(&report).expect("error reports serialize"));
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(f) => CliError::Validation(f),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<Scenario, CliError> {
    Scenario::load(path).map_err(CliError::Validation)
}

/// One line of the human-readable summary, in cm and ms.
pub fn summary_line(label: &str, r: &MetricsReport) -> String {
    let t = &r.tracking;
    let ms = |v: f64| v * 1e3;
    let (median, max) = r
        .timing
        .as_ref()
        .map(|m| (ms(m.solve_time.median), ms(m.solve_time.max)))
        .unwrap_or((f64::NAN, f64::NAN));
    format!(
        "{label:<14} {:<13} p95 {:7.2} cm  p99 {:7.2} cm  solve med {:7.1} ms  max {:7.1} ms  switches {:4}  jumps>1cm {:4}  alt-run {:3}  max jump {:6.2} cm",
        r.outcome.name(),
        t.norm.p95 * 100.0,
        t.norm.p99 * 100.0,
        median,
        max,
        r.jumps.switches,
        r.jumps.large_jumps,
        r.jumps.longest_alternating_run,
        r.jumps.max_position_jump * 100.0,
    )
}

fn simulate(
    scenario: &Scenario,
    kind: SchemeKind,
    seed: u64,
    dir: &Path,
    wall: bool,
) -> Result<MetricsReport, CliError> {
    let log = if wall {
        run_wall_clock(scenario, seed)?
    } else {
        run(scenario, kind, seed)?
    };
    let report = tracking_error_metrics(&log).map_err(|e| CliError::Run(e.to_string()))?;
    write_run(dir, &log, &report).map_err(|e| CliError::Run(e.to_string()))?;
    Ok(report)
}

/// Runs independent simulations concurrently, one output directory each.
fn run_all(
    jobs: Vec<(String, Scenario, SchemeKind, PathBuf)>,
    seed: u64,
) -> Result<Vec<(String, MetricsReport)>, CliError> {
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(label, sc, kind, dir)| {
                s.spawn(move || simulate(sc, *kind, seed, dir, false).map(|r| (label.clone(), r)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            scheme,
            seed,
            out,
            wall_clock,
        } => {
            let sc = load(&scenario)?;
            let seed = seed.unwrap_or(sc.seed);
            if wall_clock && scheme != SchemeKind::Asap {
                return Err(CliError::Usage("wall-clock mode runs ASAP only".into()));
            }
            let report = simulate(&sc, scheme, seed, &out, wall_clock)?;
            println!("{}", summary_line(scheme.name(), &report));
        }
        Command::Compare { scenario, seed, out } => {
            let sc = load(&scenario)?;
            let seed = seed.unwrap_or(sc.seed);
            for kind in SchemeKind::ALL {
                sc.validate_for(kind).map_err(CliError::Validation)?;
            }
            let jobs = SchemeKind::ALL
                .iter()
                .map(|&k| (k.name().to_string(), sc.clone(), k, out.join(k.name())))
                .collect();
            let rows = run_all(jobs, seed)?;
            for (label, r) in &rows {
                println!("{}", summary_line(label, r));
            }
            let table: Vec<&MetricsReport> = rows.iter().map(|(_, r)| r).collect();
            std::fs::write(
                out.join("compare.json"),
                serde_json::to_string_pretty(&table).expect("reports serialize") + "\n",
            )
            .map_err(|e| CliError::Run(e.to_string()))?;
        }
        Command::Sweep {
            scenario,
            scheme,
            seed,
            out,
            m,
            delay,
        } => {
            let sc = load(&scenario)?;
            let seed = seed.unwrap_or(sc.seed);
            if m.is_empty() == delay.is_empty() {
                return Err(CliError::Usage("sweep needs exactly one of --m or --delay".into()));
            }
            let mut jobs = Vec::new();
            for &mi in &m {
                let mut s = sc.clone();
                s.scheme.m = mi;
                s.scheme.delta = None;
                jobs.push((format!("m_{mi}"), s, scheme, out.join(format!("m_{mi}"))));
            }
            for &d in &delay {
                let mut s = sc.clone();
                s.delay = DelayModel::Deterministic { value: d };
                let label = format!("delay_{}", d);
                jobs.push((label.clone(), s, scheme, out.join(label)));
            }
            for (_, s, k, _) in &jobs {
                s.validate_for(*k).map_err(CliError::Validation)?;
            }
            for (label, r) in run_all(jobs, seed)? {
                println!("{}", summary_line(&label, &r));
            }
        }
        Command::Validate { scenario, scheme } => {
            let sc = load(&scenario)?;
            match scheme {
                Some(k) => sc.validate_for(k),
                None => sc.validate(),
            }
            .map_err(CliError::Validation)?;
            println!(
                "{{\"valid\":true,\"scenario\":{}}}",
                serde_json::to_string(&sc.name).expect("string")
            );
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run_experiment<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            e.print();
            e.exit_code()
        }
    }
}
