use coopsim_cli::cmd_report::{load_runs, run_path, summaries, METRICS_CSV, SUMMARY};
use coopsim_cli::cmd_run::cmd_run;
use coopsim_cli::config::ExperimentConfig;
use coopsim_core::pipeline::RunLog;
use std::path::Path;
use std::process::Command;

fn small(extra: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = vec![
        "generator.n_frames=70".into(),
        "generator.n_agents=12".into(),
        "experiment.training_seeds=[100, 101]".into(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::from_toml("", &o).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coopsim"))
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn default_matrix_writes_fifteen_logs_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[]);
    let outcome = cmd_run(&cfg, dir.path(), 2).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    assert_eq!(outcome.logs_written, 15);
    assert_eq!(outcome.report.runs, 15);
    let logs = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .flat_map(|d| std::fs::read_dir(d.unwrap().path()).unwrap())
        .count();
    assert_eq!(logs, 15);
    assert!(dir.path().join(SUMMARY).is_file());
    let csv = String::from_utf8(read(&dir.path().join(METRICS_CSV))).unwrap();
    assert!(csv.starts_with("variant,seed,metric,value\n"));
    assert!(csv.lines().any(|l| l.starts_with("coop_prediction,4,min_ade@5s,")));
    let summary = String::from_utf8(read(&dir.path().join(SUMMARY))).unwrap();
    for label in ["no_coop", "coop_perception", "coop_prediction", "runs/coop_prediction/seed_4.json"] {
        assert!(summary.contains(label), "summary lacks {label}");
    }
}

#[test]
fn rerun_and_job_count_leave_outputs_byte_identical() {
    let cfg = small(&["experiment.seeds=[3, 8]"]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    cmd_run(&cfg, a.path(), 1).unwrap();
    cmd_run(&cfg, b.path(), 1).unwrap();
    cmd_run(&cfg, c.path(), 4).unwrap();
    for other in [b.path(), c.path()] {
        assert_eq!(read(&a.path().join(SUMMARY)), read(&other.join(SUMMARY)));
        assert_eq!(read(&a.path().join(METRICS_CSV)), read(&other.join(METRICS_CSV)));
        for v in &cfg.variants {
            for &s in &cfg.experiment.seeds {
                assert_eq!(read(&run_path(a.path(), &v.label, s)), read(&run_path(other, &v.label, s)));
            }
        }
    }
}

#[test]
fn compression_override_reaches_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    std::fs::write(
        &cfg_path,
        "[experiment]\nseeds = [1]\ntraining_seeds = [100]\n[generator]\nn_frames = 62\n\
         [[variants]]\nlabel = \"cp\"\nmode = \"cooperative_perception_only\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--set", "base.compression=256", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let log = RunLog::load(&run_path(&out, "cp", 1)).unwrap();
    assert_eq!(log.config.compression, 256.0);
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("compression = 256.0"));
}

#[test]
fn out_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["gen-scenario", "--seed", "5", "--set", "generator.n_frames=62"])
        .env("COOPSIM_OUT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("scenarios/seed_5.json").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin().args(args).env("COOPSIM_OUT", dir.path()).output().unwrap().status.code();
    assert_eq!(code(&["validate-config"]), Some(0));
    assert_eq!(code(&["validate-config", "--set", "base.compression=0.5"]), Some(1));
    assert_eq!(code(&["validate-config", "--config", "/nonexistent.toml"]), Some(1));
    assert_eq!(code(&["run", "--set", "experiment.seeds=[]"]), Some(1));
    // No manifest: nothing to report.
    assert_eq!(code(&["report"]), Some(2));
}

#[test]
fn corrupt_and_missing_logs_are_reported_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&["experiment.seeds=[2, 3]", "generator.n_frames=62"]);
    cmd_run(&cfg, dir.path(), 1).unwrap();
    std::fs::write(run_path(dir.path(), "coop_perception", 2), "{not json").unwrap();
    std::fs::remove_file(run_path(dir.path(), "no_coop", 3)).unwrap();
    let (_, runs, problems) = load_runs(dir.path()).unwrap();
    assert_eq!(runs.len(), 4);
    assert_eq!(problems.len(), 2);
    assert!(problems.iter().any(|p| p.starts_with("runs/coop_perception/seed_2.json")));
    assert!(problems.iter().any(|p| p.starts_with("runs/no_coop/seed_3.json")));

    let out = bin().arg("report").arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let summary = String::from_utf8(read(&dir.path().join(SUMMARY))).unwrap();
    assert!(summary.contains("Problems"));
}

#[test]
fn perfect_sensing_leaves_nothing_for_cooperation_to_fix() {
    // Two CAVs and no other traffic, noise-free sensing: each CAV sees the
    // other directly, so sharing adds no information.
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&[
        "experiment.seeds=[0, 1]",
        "generator.n_agents=2",
        "generator.n_cavs=2",
        "generator.occlusion_density=0.0",
        "base.sensor.sigma_pos=0.0",
        "base.sensor.sigma_pos_slope=0.0",
        "base.sensor.sigma_yaw=0.0",
        "base.sensor.sigma_dim=0.0",
        "base.sensor.miss_rate_base=0.0",
        "base.sensor.miss_rate_slope=0.0",
        "base.sensor.fp_rate=0.0",
        "base.sensor.score_jitter=0.0",
        "base.sensor.compression_sigma0=0.0",
    ]);
    let outcome = cmd_run(&cfg, dir.path(), 1).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let (manifest, runs, _) = load_runs(dir.path()).unwrap();
    let s = summaries(&manifest, &runs);
    let base = s[0].min_ade[2];
    assert!(base.is_finite());
    for v in &s[1..] {
        let imp = (base - v.min_ade[2]) / base;
        assert!(imp.abs() < 0.02, "{}: improvement {imp}", v.label);
    }
}
