//! Executes the experiment matrix and writes logs plus the report.

use crate::cmd_report::{cmd_report, run_path, scenario_path, Manifest, ReportOutcome, MANIFEST};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use coopsim_core::pipeline::{run, train_intentions};
use coopsim_core::prediction::IntentionSet;
use coopsim_core::scenario::{generate_synthetic, Scenario};
use rayon::prelude::*;
use std::path::Path;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const INTENTIONS: &str = "intentions.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub logs_written: usize,
    pub failures: Vec<String>,
    pub report: ReportOutcome,
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

/// Generates the scenario for the `index`-th seed of the experiment.
pub fn scenario_for(cfg: &ExperimentConfig, index: usize) -> Result<Scenario, CliError> {
    let seed = cfg.experiment.seeds[index];
    generate_synthetic(&cfg.generator_for(index), seed).map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))
}

/// Runs every (variant, seed) pair on a pool of `jobs` threads. A failing
/// pair is reported and skipped; the others still complete.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(runtime("thread pool"))?;
    std::fs::create_dir_all(out.join("scenarios"))?;
    for v in &cfg.variants {
        std::fs::create_dir_all(out.join("runs").join(&v.label))?;
    }
    std::fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    let manifest = Manifest {
        name: cfg.experiment.name.clone(),
        variants: cfg.variants.iter().map(|v| v.label.clone()).collect(),
        seeds: cfg.experiment.seeds.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime("manifest"))?;
    std::fs::write(out.join(MANIFEST), text)?;

    pool.install(|| {
        let intentions: IntentionSet = train_intentions(
            &cfg.generator,
            &cfg.experiment.training_seeds,
            cfg.base.predictor.k,
            cfg.experiment.intention_seed,
        )
        .map_err(runtime("intention training"))?;
        intentions.save(&out.join(INTENTIONS))?;

        let scenarios: Vec<Result<Scenario, String>> = (0..cfg.experiment.seeds.len())
            .into_par_iter()
            .map(|i| {
                let s = scenario_for(cfg, i).map_err(|e| e.to_string())?;
                s.save(&scenario_path(out, s.seed)).map_err(|e| format!("seed {}: {e}", s.seed))?;
                Ok(s)
            })
            .collect();

        let pairs: Vec<(usize, usize)> = (0..cfg.variants.len())
            .flat_map(|v| (0..scenarios.len()).map(move |s| (v, s)))
            .collect();
        let results: Vec<Result<(), String>> = pairs
            .par_iter()
            .map(|&(vi, si)| {
                let v = &cfg.variants[vi];
                let seed = cfg.experiment.seeds[si];
                let fail = |e: String| format!("{} seed {seed}: {e}", v.label);
                let scenario = scenarios[si].as_ref().map_err(|e| fail(e.clone()))?;
                let run_cfg = cfg.run_config(v);
                let log = run(scenario, &run_cfg, &intentions).map_err(|e| fail(e.to_string()))?;
                log.save(&run_path(out, &v.label, seed)).map_err(|e| fail(e.to_string()))
            })
            .collect();
        let failures: Vec<String> = results.into_iter().filter_map(Result::err).collect();
        let report = cmd_report(out)?;
        Ok(RunOutcome {
            logs_written: pairs.len() - failures.len(),
            failures,
            report,
        })
    })
}
