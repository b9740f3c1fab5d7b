use clap::{Parser, Subcommand};
use coopsim_cli::cmd_report::{cmd_report, scenario_path, SUMMARY};
use coopsim_cli::cmd_run::cmd_run;
use coopsim_cli::config::ExperimentConfig;
use coopsim_cli::CliError;
use coopsim_core::scenario::generate_synthetic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "coopsim", version, about = "Cooperative perception and prediction experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value by dotted path, e.g. base.compression=256.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run only this scenario seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant on every seed, then write the report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = "COOPSIM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Recompute metrics.csv and summary.txt from existing logs.
    Report {
        #[arg(long, env = "COOPSIM_OUT", default_value = "out")]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate one scenario and write it under <out>/scenarios.
    GenScenario {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "COOPSIM_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a configuration, printing the resolved document.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("experiment.seeds=[{s}]"));
    }
    match &common.config {
        Some(p) => ExperimentConfig::load(p, &overrides),
        None => ExperimentConfig::from_toml("", &overrides),
    }
}

fn with_threads<T>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn report(out: &Path, jobs: usize) -> Result<(), CliError> {
    let outcome = with_threads(jobs, || cmd_report(out))??;
    for p in &outcome.problems {
        eprintln!("warning: {p}");
    }
    println!("{} runs summarized in {}", outcome.runs, out.join(SUMMARY).display());
    if outcome.problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} log files could not be used", outcome.problems.len())))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, jobs, out } => {
            let cfg = load(&common)?;
            let outcome = cmd_run(&cfg, &out, jobs)?;
            for f in &outcome.failures {
                eprintln!("error: {f}");
            }
            for p in &outcome.report.problems {
                eprintln!("warning: {p}");
            }
            println!(
                "{} run logs written, summary in {}",
                outcome.logs_written,
                out.join(SUMMARY).display()
            );
            if outcome.failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{} runs failed", outcome.failures.len())))
            }
        }
        Command::Report { out, jobs } => report(&out, jobs),
        Command::GenScenario { common, out } => {
            let cfg = load(&common)?;
            let seed = cfg.experiment.seeds[0];
            let scenario = generate_synthetic(&cfg.generator_for(0), seed)?;
            let path = scenario_path(&out, seed);
            std::fs::create_dir_all(path.parent().unwrap_or(&out))?;
            scenario.save(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::ValidateConfig { common } => {
            let cfg = load(&common)?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
