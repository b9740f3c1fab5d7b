//! Summary tables recomputed from the run logs of an output directory.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json              variant order and seeds
//! scenarios/seed_<s>.json    generated scenarios
//! runs/<label>/seed_<s>.json run logs
//! metrics.csv                variant,seed,metric,value
//! summary.txt                aligned tables plus provenance appendix
//! ```

use crate::error::CliError;
use coopsim_core::metrics::HORIZON_STEPS;
use coopsim_core::pipeline::{
    audit_causality, audit_feature_substitution, audit_prediction_timing, evaluate, hull_bin, CooperationMode, ForecastRecord, HullBin,
    RunConfig,
    RunLog, RunMetrics,
};
use coopsim_core::scenario::{load_scenario, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
}

pub fn scenario_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("scenarios").join(format!("seed_{seed}.json"))
}

pub fn run_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join("runs").join(label).join(format!("seed_{seed}.json"))
}

/// FNV-1a, used only to fingerprint log files in the provenance appendix.
fn fingerprint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub checked: usize,
    pub violations: usize,
}

/// Everything the report needs from one run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub label: String,
    pub seed: u64,
    pub config: RunConfig,
    pub n_cavs: usize,
    pub metrics: RunMetrics,
    /// Scored forecasts, for comparisons on identical agents.
    pub forecasts: Vec<ForecastRecord>,
    /// Prediction timing, feature substitution, causality.
    pub audits: [AuditCounts; 3],
    pub audit_messages: Vec<String>,
    pub file: String,
    pub bytes: usize,
    pub fingerprint: u64,
}

/// Loads and scores every log listed by the manifest. Missing or corrupt
/// files are reported individually and skipped.
pub fn load_runs(dir: &Path) -> Result<(Manifest, Vec<RunEntry>, Vec<String>), CliError> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?,
    )
    .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;

    let mut scenarios: BTreeMap<u64, Scenario> = BTreeMap::new();
    let mut problems = Vec::new();
    for &s in &manifest.seeds {
        match load_scenario(&scenario_path(dir, s)) {
            Ok(sc) => {
                scenarios.insert(s, sc);
            }
            Err(e) => problems.push(format!("scenarios/seed_{s}.json: {e}")),
        }
    }
    let jobs: Vec<(String, u64)> = manifest
        .variants
        .iter()
        .flat_map(|v| manifest.seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    let loaded: Vec<Result<RunEntry, String>> = jobs
        .par_iter()
        .map(|(label, seed)| {
            let rel = format!("runs/{label}/seed_{seed}.json");
            let scenario = scenarios
                .get(seed)
                .ok_or_else(|| format!("{rel}: scenario for seed {seed} unavailable"))?;
            let bytes = std::fs::read(run_path(dir, label, *seed)).map_err(|e| format!("{rel}: {e}"))?;
            let text = std::str::from_utf8(&bytes).map_err(|e| format!("{rel}: {e}"))?;
            let log = RunLog::from_json(text).map_err(|e| format!("{rel}: {e}"))?;
            let metrics = evaluate(&log, scenario).map_err(|e| format!("{rel}: {e}"))?;
            let reports = [
                audit_prediction_timing(&log),
                audit_feature_substitution(&log),
                audit_causality(&log),
            ];
            Ok(RunEntry {
                label: label.clone(),
                seed: *seed,
                n_cavs: log.cav_ids.len(),
                forecasts: log.forecasts,
                config: log.config,
                metrics,
                audits: reports.each_ref().map(|r| AuditCounts {
                    checked: r.checked,
                    violations: r.violations.len(),
                }),
                audit_messages: reports
                    .iter()
                    .flat_map(|r| r.violations.iter().map(|v| format!("{rel}: {v}")))
                    .collect(),
                file: rel,
                bytes: bytes.len(),
                fingerprint: fingerprint(&bytes),
            })
        })
        .collect();
    let mut runs = Vec::new();
    for r in loaded {
        match r {
            Ok(e) => runs.push(e),
            Err(p) => problems.push(p),
        }
    }
    Ok((manifest, runs, problems))
}

/// Suite means of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub label: String,
    pub mode: CooperationMode,
    pub delay_enabled: bool,
    pub compression: f64,
    pub seeds: usize,
    pub ap: [f64; 3],
    pub ar: [f64; 3],
    pub f1: [f64; 3],
    pub amota: f64,
    pub amotp: f64,
    pub samota: f64,
    pub mota: f64,
    pub motp: f64,
    pub mt: f64,
    pub ml: f64,
    pub id_switches: f64,
    pub min_ade: [f64; 3],
    pub min_fde: [f64; 3],
    pub feature_mbps: f64,
    pub prediction_mbps: f64,
    pub feature_drops: f64,
    /// minADE at the longest horizon pooled over all forecasts in each
    /// hull-area bin; `None` for empty bins.
    pub hull_min_ade: [Option<f64>; 3],
    pub hull_counts: [usize; 3],
    pub audit_violations: usize,
    pub audit_checked: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarize(label: &str, runs: &[&RunEntry]) -> Option<VariantSummary> {
    let first = runs.first()?;
    let m = |f: &dyn Fn(&RunMetrics) -> f64| mean(runs.iter().map(|r| f(&r.metrics)));
    let last = HORIZON_STEPS.len() - 1;
    let mut hull_sum = [0.0; 3];
    let mut hull_counts = [0usize; 3];
    for r in runs {
        for b in HullBin::ALL {
            let e = &r.metrics.prediction_by_hull[b.index()];
            hull_sum[b.index()] += e.min_ade[last] * e.evaluated as f64;
            hull_counts[b.index()] += e.evaluated;
        }
    }
    Some(VariantSummary {
        label: label.to_string(),
        mode: first.config.mode,
        delay_enabled: first.config.delay_enabled,
        compression: first.config.compression,
        seeds: runs.len(),
        ap: std::array::from_fn(|i| m(&|x| x.detection.at[i].ap)),
        ar: std::array::from_fn(|i| m(&|x| x.detection.at[i].ar)),
        f1: std::array::from_fn(|i| m(&|x| x.detection.at[i].f1)),
        amota: m(&|x| x.tracking.amota),
        amotp: m(&|x| x.tracking.amotp),
        samota: m(&|x| x.tracking.samota),
        mota: m(&|x| x.tracking.mota),
        motp: m(&|x| x.tracking.motp),
        mt: m(&|x| x.tracking.mt),
        ml: m(&|x| x.tracking.ml),
        id_switches: m(&|x| x.tracking.id_switches as f64),
        min_ade: std::array::from_fn(|i| m(&|x| x.prediction.min_ade[i])),
        min_fde: std::array::from_fn(|i| m(&|x| x.prediction.min_fde[i])),
        feature_mbps: m(&|x| x.bandwidth.feature_mbps),
        prediction_mbps: m(&|x| x.bandwidth.prediction_mbps),
        feature_drops: m(&|x| x.feature_drops as f64),
        hull_min_ade: std::array::from_fn(|i| (hull_counts[i] > 0).then(|| hull_sum[i] / hull_counts[i] as f64)),
        hull_counts,
        audit_violations: runs.iter().map(|r| r.audits.iter().map(|a| a.violations).sum::<usize>()).sum(),
        audit_checked: runs.iter().map(|r| r.audits.iter().map(|a| a.checked).sum::<usize>()).sum(),
    })
}

/// `(baseline - ours) / baseline`.
pub fn relative_improvement(baseline: f64, ours: f64) -> f64 {
    (baseline - ours) / baseline
}

/// minADE at the longest horizon of two variants over the forecasts both
/// produced for the same (seed, ego, frame, ground-truth agent).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedBin {
    pub baseline_ade: f64,
    pub ours_ade: f64,
    pub pairs: usize,
}

impl PairedBin {
    pub fn improvement(&self) -> Option<f64> {
        (self.pairs > 0).then(|| relative_improvement(self.baseline_ade, self.ours_ade))
    }
}

/// Paired comparison per hull-area bin. Cooperation lets a CAV forecast
/// agents it could not see on its own, and those are harder than average;
/// pairing removes that shift in the evaluated population.
pub fn paired_by_hull(baseline: &[&RunEntry], ours: &[&RunEntry]) -> [PairedBin; 3] {
    let last = HORIZON_STEPS.len() - 1;
    let key = |seed: u64, f: &ForecastRecord| (seed, f.ego, f.frame, f.gt_id);
    let base: BTreeMap<_, &ForecastRecord> = baseline
        .iter()
        .flat_map(|r| r.forecasts.iter().map(move |f| (key(r.seed, f), f)))
        .collect();
    let mut sums = [(0.0, 0.0, 0usize); 3];
    for r in ours {
        for f in &r.forecasts {
            if let Some(b) = base.get(&key(r.seed, f)) {
                let s = &mut sums[hull_bin(b.hull_area).index()];
                s.0 += b.ade[last];
                s.1 += f.ade[last];
                s.2 += 1;
            }
        }
    }
    sums.map(|(b, o, n)| {
        let d = n.max(1) as f64;
        PairedBin {
            baseline_ade: b / d,
            ours_ade: o / d,
            pairs: n,
        }
    })
}

pub fn format_percent(fraction: f64) -> String {
    if fraction.is_finite() {
        format!("{:.1}%", fraction * 100.0)
    } else {
        "n/a".into()
    }
}

/// Rows of `cells` padded to a common width per column.
fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
    out.push('\n');
}

fn f3(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "n/a".into()
    }
}

fn f4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "n/a".into()
    }
}

/// Per-variant summaries in manifest order.
pub fn summaries(manifest: &Manifest, runs: &[RunEntry]) -> Vec<VariantSummary> {
    manifest
        .variants
        .iter()
        .filter_map(|v| {
            let rs: Vec<&RunEntry> = runs.iter().filter(|r| &r.label == v).collect();
            summarize(v, &rs)
        })
        .collect()
}

/// The aligned-text report.
pub fn render_summary(manifest: &Manifest, runs: &[RunEntry], problems: &[String]) -> String {
    let sums = summaries(manifest, runs);
    let baseline = sums.iter().find(|s| s.mode == CooperationMode::NoCooperation);
    let mut out = String::new();
    let _ = writeln!(out, "Experiment: {}", manifest.name);
    let _ = writeln!(out, "Seeds: {:?}", manifest.seeds);
    let _ = writeln!(out);

    let setting = |s: &VariantSummary| {
        vec![
            s.label.clone(),
            s.mode.label().to_string(),
            if s.delay_enabled { "on".into() } else { "off".into() },
            format!("{}x", s.compression),
        ]
    };

    let _ = writeln!(out, "Detection (suite means)");
    let rows: Vec<Vec<String>> = sums
        .iter()
        .map(|s| {
            let mut r = setting(s);
            r.extend(s.ap.iter().map(|v| f3(*v)));
            r.extend(s.ar.iter().map(|v| f3(*v)));
            r.push(f3(s.feature_mbps));
            r.push(f3(s.prediction_mbps));
            r.push(format!("{:.1}", s.feature_drops));
            r
        })
        .collect();
    table(
        &mut out,
        &[
            "variant", "mode", "delay", "compr", "AP@0.3", "AP@0.5", "AP@0.7", "AR@0.3", "AR@0.5", "AR@0.7", "feat MB/s",
            "pred MB/s", "drops",
        ],
        &rows,
    );

    let _ = writeln!(out, "Tracking (suite means)");
    let rows: Vec<Vec<String>> = sums
        .iter()
        .map(|s| {
            let mut r = setting(s);
            r.extend([s.amota, s.amotp, s.samota, s.mota, s.motp, s.mt, s.ml].map(f3));
            r.push(format!("{:.1}", s.id_switches));
            r
        })
        .collect();
    table(
        &mut out,
        &["variant", "mode", "delay", "compr", "AMOTA", "AMOTP", "sAMOTA", "MOTA", "MOTP", "MT", "ML", "IDS"],
        &rows,
    );

    let _ = writeln!(out, "Prediction (suite means, K = 6)");
    let rows: Vec<Vec<String>> = sums
        .iter()
        .map(|s| {
            let mut r = setting(s);
            r.extend(s.min_ade.iter().map(|v| f4(*v)));
            r.extend(s.min_fde.iter().map(|v| f4(*v)));
            r.push(baseline.map_or("n/a".into(), |b| {
                format_percent(relative_improvement(b.min_ade[2], s.min_ade[2]))
            }));
            r
        })
        .collect();
    table(
        &mut out,
        &[
            "variant", "mode", "delay", "compr", "ADE@1s", "ADE@3s", "ADE@5s", "FDE@1s", "FDE@3s", "FDE@5s", "vs no-coop",
        ],
        &rows,
    );

    let _ = writeln!(out, "minADE@5s by CAV hull area (pooled forecasts; improvement vs no-coop)");
    let rows: Vec<Vec<String>> = sums
        .iter()
        .map(|s| {
            let mut r = vec![s.label.clone()];
            for b in HullBin::ALL {
                let i = b.index();
                r.push(s.hull_min_ade[i].map_or("n/a".into(), f4));
                r.push(s.hull_counts[i].to_string());
                let imp = match (baseline.and_then(|b| b.hull_min_ade[i]), s.hull_min_ade[i]) {
                    (Some(base), Some(ours)) => format_percent(relative_improvement(base, ours)),
                    _ => "n/a".into(),
                };
                r.push(imp);
            }
            r
        })
        .collect();
    let mut header = vec!["variant".to_string()];
    for b in HullBin::ALL {
        header.push(format!("{} m2", b.label()));
        header.push("n".into());
        header.push("impr".into());
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&mut out, &header_refs, &rows);

    if let Some(base) = baseline {
        let of = |label: &str| -> Vec<&RunEntry> { runs.iter().filter(|r| r.label == label).collect() };
        let base_runs = of(&base.label);
        let _ = writeln!(
            out,
            "minADE@5s by CAV hull area, paired with {} on the same agents (baseline / ours / improvement)",
            base.label
        );
        let rows: Vec<Vec<String>> = sums
            .iter()
            .filter(|s| s.label != base.label)
            .map(|s| {
                let mut r = vec![s.label.clone()];
                for p in paired_by_hull(&base_runs, &of(&s.label)) {
                    r.push(if p.pairs > 0 { f4(p.baseline_ade) } else { "n/a".into() });
                    r.push(if p.pairs > 0 { f4(p.ours_ade) } else { "n/a".into() });
                    r.push(p.pairs.to_string());
                    r.push(p.improvement().map_or("n/a".into(), format_percent));
                }
                r
            })
            .collect();
        let mut header = vec!["variant".to_string()];
        for b in HullBin::ALL {
            header.push(format!("{} base", b.label()));
            header.push("ours".into());
            header.push("n".into());
            header.push("impr".into());
        }
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        table(&mut out, &header_refs, &rows);
    }

    let _ = writeln!(out, "Log audits (prediction timing, feature substitution, causality)");
    let rows: Vec<Vec<String>> = sums
        .iter()
        .map(|s| vec![s.label.clone(), s.audit_checked.to_string(), s.audit_violations.to_string()])
        .collect();
    table(&mut out, &["variant", "checked", "violations"], &rows);
    let violations: Vec<&String> = runs.iter().flat_map(|r| &r.audit_messages).collect();
    for v in violations.iter().take(20) {
        let _ = writeln!(out, "  {v}");
    }

    if !problems.is_empty() {
        let _ = writeln!(out, "Problems");
        for p in problems {
            let _ = writeln!(out, "  {p}");
        }
        out.push('\n');
    }

    let _ = writeln!(out, "Provenance: every cell above averages these logs");
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.seed.to_string(),
                r.n_cavs.to_string(),
                r.file.clone(),
                r.bytes.to_string(),
                format!("{:016x}", r.fingerprint),
            ]
        })
        .collect();
    table(&mut out, &["variant", "seed", "CAVs", "file", "bytes", "fnv1a64"], &rows);
    out
}

/// One row per variant, seed and metric.
pub fn render_csv(runs: &[RunEntry]) -> String {
    let mut out = String::from("variant,seed,metric,value\n");
    for r in runs {
        let m = &r.metrics;
        let mut rows: Vec<(String, f64)> = Vec::new();
        for (i, t) in ["0.3", "0.5", "0.7"].iter().enumerate() {
            rows.push((format!("ap@{t}"), m.detection.at[i].ap));
            rows.push((format!("ar@{t}"), m.detection.at[i].ar));
            rows.push((format!("f1@{t}"), m.detection.at[i].f1));
        }
        let t = &m.tracking;
        rows.extend([
            ("amota".into(), t.amota),
            ("amotp".into(), t.amotp),
            ("samota".into(), t.samota),
            ("mota".into(), t.mota),
            ("motp".into(), t.motp),
            ("mt".into(), t.mt),
            ("ml".into(), t.ml),
            ("id_switches".into(), t.id_switches as f64),
        ]);
        for (i, s) in ["1s", "3s", "5s"].iter().enumerate() {
            rows.push((format!("min_ade@{s}"), m.prediction.min_ade[i]));
            rows.push((format!("min_fde@{s}"), m.prediction.min_fde[i]));
        }
        rows.push(("forecasts_evaluated".into(), m.prediction.evaluated as f64));
        rows.push(("forecasts_missed".into(), m.prediction.missed as f64));
        for b in HullBin::ALL {
            let e = &m.prediction_by_hull[b.index()];
            if e.evaluated > 0 {
                rows.push((format!("hull_{}_min_ade@5s", b.label()), e.min_ade[2]));
            }
            rows.push((format!("hull_{}_forecasts", b.label()), e.evaluated as f64));
        }
        rows.push(("feature_mbps".into(), m.bandwidth.feature_mbps));
        rows.push(("prediction_mbps".into(), m.bandwidth.prediction_mbps));
        rows.push(("feature_drops".into(), m.feature_drops as f64));
        rows.push(("audit_violations".into(), r.audits.iter().map(|a| a.violations).sum::<usize>() as f64));
        for (name, v) in rows {
            let _ = writeln!(out, "{},{},{},{}", r.label, r.seed, name, v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub runs: usize,
    pub problems: Vec<String>,
}

/// Rewrites `metrics.csv` and `summary.txt` from the logs in `dir`.
pub fn cmd_report(dir: &Path) -> Result<ReportOutcome, CliError> {
    let (manifest, runs, problems) = load_runs(dir)?;
    std::fs::write(dir.join(METRICS_CSV), render_csv(&runs))?;
    std::fs::write(dir.join(SUMMARY), render_summary(&manifest, &runs, &problems))?;
    Ok(ReportOutcome {
        runs: runs.len(),
        problems,
    })
}
