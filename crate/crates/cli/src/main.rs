//! `veloshield`: run, sweep and validate safe-velocity scenarios.
//!
//! Outputs are staged in a temporary directory next to `--out` and renamed
//! into place only after every run succeeded, so a failed invocation leaves
//! nothing behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use veloshield_core::report::summary_json;
use veloshield_core::{bundled, run_summary, simulate, sweep_csv, trajectory_csv, Scenario, SweepRow, BUNDLED};

/// Directory searched for `<name>.toml` before the bundled scenarios.
const SCENARIO_DIR_VAR: &str = "VELOSHIELD_SCENARIO_DIR";

#[derive(Parser)]
#[command(name = "veloshield", version, about = "Safe velocity tracking simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectory.csv and summary.json.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Simulate once per parameter value; writes `<param>=<value>/` and sweep.csv.
    Sweep {
        scenario: String,
        /// Dotted scenario path such as `filter.alpha`, or `alpha`, `step`, `duration`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        opts: RunOpts,
        /// Concurrent runs (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and check a scenario without simulating.
    Validate { scenario: String },
    /// List the bundled scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunOpts {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Integration step override (s).
    #[arg(long)]
    step: Option<f64>,
    /// Duration override (s).
    #[arg(long)]
    duration: Option<f64>,
    /// Reserved; simulations are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Scenario::from_toml(&text).with_context(|| format!("parsing {}", path.display()));
    }
    if let Some(dir) = std::env::var_os(SCENARIO_DIR_VAR) {
        let candidate = Path::new(&dir).join(format!("{name}.toml"));
        if candidate.is_file() {
            return load(&candidate.to_string_lossy());
        }
    }
    match bundled(name) {
        Some(s) => Ok(s),
        None => bail!("no scenario file or bundled scenario named {name:?}"),
    }
}

fn apply_overrides(mut s: Scenario, opts: &RunOpts) -> Result<Scenario> {
    if let Some(step) = opts.step {
        s.sim.step = step;
    }
    if let Some(duration) = opts.duration {
        s.sim.duration = duration;
    }
    s.validate()?;
    Ok(s)
}

/// Trajectory CSV and summary JSON of one run.
fn run_files(s: &Scenario) -> Result<(String, String)> {
    let log = simulate(s).with_context(|| format!("simulating {}", s.name))?;
    Ok((trajectory_csv(&log), summary_json(&run_summary(s, &log))))
}

fn write_run(dir: &Path, files: &(String, String)) -> Result<()> {
    fs::write(dir.join("trajectory.csv"), &files.0)?;
    fs::write(dir.join("summary.json"), &files.1)?;
    Ok(())
}

/// Stage outputs with `fill` and move them to `out`. An existing `out` is
/// replaced only if it holds earlier veloshield output.
fn publish(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if out.exists() {
        let ours = out.is_dir() && (out.join("summary.json").is_file() || out.join("sweep.csv").is_file());
        if !ours {
            bail!("{} exists and does not look like veloshield output", out.display());
        }
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".veloshield-").tempdir_in(&parent)?;
    fill(staging.path())?;
    if out.exists() {
        fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out).with_context(|| format!("moving output to {}", out.display()))?;
    Ok(())
}

fn run(scenario: &str, opts: &RunOpts) -> Result<()> {
    let s = apply_overrides(load(scenario)?, opts)?;
    let files = run_files(&s)?;
    publish(&opts.out, |dir| write_run(dir, &files))
}

fn sweep(scenario: &str, param: &str, values: &[f64], opts: &RunOpts, workers: Option<usize>) -> Result<()> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let base = apply_overrides(load(scenario)?, opts)?;
    let scenarios = values
        .iter()
        .map(|&v| base.with_parameter(param, v).with_context(|| format!("setting {param} = {v}")))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    let results: Vec<_> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| -> Result<_> {
                let log = simulate(s).with_context(|| format!("simulating {}", s.name))?;
                let summary = run_summary(s, &log);
                Ok((trajectory_csv(&log), summary_json(&summary), summary))
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    publish(&opts.out, |dir| {
        let mut rows = Vec::with_capacity(values.len());
        for (&value, (csv, json, summary)) in values.iter().zip(results) {
            let sub = dir.join(format!("{param}={value}"));
            fs::create_dir(&sub).with_context(|| format!("creating {}", sub.display()))?;
            write_run(&sub, &(csv, json))?;
            rows.push(SweepRow::from_summary(value, &summary));
        }
        fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
        Ok(())
    })
}

fn validate(scenario: &str) -> Result<()> {
    let s = load(scenario)?;
    s.assemble()?;
    println!("{}: ok", s.name);
    Ok(())
}

fn list_scenarios() -> Result<()> {
    for (name, text) in BUNDLED {
        let s = Scenario::from_toml(text)?;
        println!("{name}\t{}", s.description);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, opts } => run(scenario, opts),
        Command::Sweep {
            scenario,
            param,
            values,
            opts,
            workers,
        } => sweep(scenario, param, values, opts, *workers),
        Command::Validate { scenario } => validate(scenario),
        Command::ListScenarios => list_scenarios(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
