//! Command-line entry point. [`main_with_args`] does all the work and returns
//! the exit code, so tests can drive the CLI in-process.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical
//! failure, 3 a check failed under `--check`. Errors are reported on stderr
//! as one line of JSON.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{HarnessError, Result};
use crate::output::RunOutput;
use crate::scenarios::{self, ScenarioOutput};

pub const OUTPUT_DIR_ENV: &str = "RECONFIG_OUTPUT_DIR";
pub const WORKERS_ENV: &str = "RECONFIG_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "reconfig", version, about = "Seeded reconfiguration-capacity experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Directory for the run artifacts. Overrides RECONFIG_OUTPUT_DIR
        /// and the config's output_dir.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Exit with status 3 if any scenario check fails.
        #[arg(long)]
        check: bool,
    },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// List the available scenarios.
    Scenarios,
    /// Print the default config of a scenario as TOML.
    DefaultConfig { scenario: String },
    /// Print the version.
    Version,
}

/// Where a run writes: flag, then environment, then config, then
/// `runs/<scenario>`.
fn resolve_output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(config.scenario.name()))
}

fn worker_pool() -> Result<Option<rayon::ThreadPool>> {
    let Some(raw) = std::env::var_os(WORKERS_ENV) else {
        return Ok(None);
    };
    let text = raw.to_string_lossy();
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| HarnessError::config(WORKERS_ENV, format!("must be a positive integer, got {text:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| HarnessError::config(WORKERS_ENV, e.to_string()))
}

/// Writes every artifact of a finished scenario and returns the manifest
/// path.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &ScenarioOutput) -> Result<PathBuf> {
    let mut out = RunOutput::create(dir, config)?;
    for table in &result.tables {
        out.write_table(table)?;
    }
    for (name, doc) in &result.documents {
        out.write_json(name, doc)?;
    }
    out.write_table(&result.checks_table())?;
    out.write_json("config.json", config)?;
    out.finish(config, &result.seeds)
}

fn run(config_path: &Path, output_dir: Option<PathBuf>, check: bool, stdout: &mut dyn Write) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let dir = resolve_output_dir(output_dir, &config);
    let result = match worker_pool()? {
        Some(pool) => pool.install(|| scenarios::run(&config))?,
        None => scenarios::run(&config)?,
    };
    let manifest = write_outputs(&dir, &config, &result)?;
    let print = |stdout: &mut dyn Write, line: String| {
        writeln!(stdout, "{line}").map_err(|e| HarnessError::io("writing to stdout", e))
    };
    for c in &result.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        print(stdout, format!("{status} {} observed={:?} limit={:?}", c.name, c.observed, c.limit))?;
    }
    print(stdout, format!("manifest {}", manifest.display()))?;
    let failed = result.failed_checks();
    if check && failed > 0 {
        return Err(HarnessError::CheckFailed(failed));
    }
    Ok(())
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let io = |e| HarnessError::io("writing to stdout", e);
    match command {
        Command::Run {
            config,
            output_dir,
            check,
        } => run(&config, output_dir, check, stdout),
        Command::Validate { config } => {
            let c = ExperimentConfig::load(&config)?;
            writeln!(stdout, "ok {} ({})", config.display(), c.scenario).map_err(io)
        }
        Command::Scenarios => {
            for s in Scenario::ALL {
                writeln!(stdout, "{:<18} {}", s.name(), s.description()).map_err(io)?;
            }
            Ok(())
        }
        Command::DefaultConfig { scenario } => {
            let s: Scenario = scenario.parse()?;
            write!(stdout, "{}", ExperimentConfig::default_for(s).to_toml()).map_err(io)
        }
        Command::Version => writeln!(stdout, "reconfig {}", env!("CARGO_PKG_VERSION")).map_err(io),
    }
}

pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let err = HarnessError::config("arguments", e.render().to_string().trim().to_string());
                    let _ = writeln!(stderr, "{}", err.record());
                    err.exit_code()
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.record());
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = main_with_args(std::iter::once("reconfig").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(call(&["--help"]).0, 0);
        assert_eq!(call(&["--version"]).0, 0);
        let (code, out, _) = call(&["version"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("reconfig "));
    }

    #[test]
    fn unknown_arguments_exit_one_with_json() {
        let (code, _, err) = call(&["frobnicate"]);
        assert_eq!(code, 1);
        let record: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(record["exit_code"], 1);
    }

    #[test]
    fn default_config_validates() {
        let dir = tempfile::tempdir().unwrap();
        for s in Scenario::ALL {
            let (code, out, _) = call(&["default-config", s.name()]);
            assert_eq!(code, 0);
            let path = dir.path().join(format!("{s}.toml"));
            std::fs::write(&path, out).unwrap();
            assert_eq!(call(&["validate", path.to_str().unwrap()]).0, 0);
        }
        assert_eq!(call(&["default-config", "nope"]).0, 1);
    }

    #[test]
    fn bad_configs_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.toml");
        assert_eq!(call(&["validate", missing.to_str().unwrap()]).0, 1);

        let path = dir.path().join("bad.toml");
        let text = ExperimentConfig::default_for(Scenario::RankDecay)
            .to_toml()
            .replace("step_size = 0.1", "step_size = 50.0");
        std::fs::write(&path, text).unwrap();
        let (code, _, err) = call(&["run", path.to_str().unwrap()]);
        assert_eq!(code, 1);
        let record: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(record["field"], "rule.step_size");
    }

    #[test]
    fn failed_check_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.toml");
        // Without the graded penalty the usable count never moves and the rank
        // correlation is undefined.
        let mut config = ExperimentConfig::default_for(Scenario::ProxyProbe);
        config.dim = 4;
        config.k_a = 2;
        config.n_steps = 40;
        config.probe.as_mut().unwrap().checkpoint_every = 20;
        config.probe.as_mut().unwrap().penalty_strength = 0.0;
        std::fs::write(&path, config.to_toml()).unwrap();
        let out_dir = dir.path().join("out");
        let args = ["run", path.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap(), "--check"];
        let (code, out, err) = call(&args);
        assert_eq!(code, 3, "{out}{err}");
        assert!(out_dir.join("checks.csv").exists());
        assert!(out_dir.join("manifest.json").exists());
    }
}
