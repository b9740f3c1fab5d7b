//! Experiment configuration: one TOML document with a section per module,
//! overridable from the command line by dotted path.

use crate::error::CliError;
use coopsim_core::pipeline::{CooperationMode, RunConfig};
use coopsim_core::scenario::{CavPlacement, GeneratorConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Scenario seeds; every variant runs on every seed.
    pub seeds: Vec<u64>,
    /// Seeds of the scenarios whose trajectory endpoints train the
    /// intention points. Keep them disjoint from `seeds`.
    pub training_seeds: Vec<u64>,
    pub intention_seed: u64,
    /// If non-empty, seed number `i` uses `cav_counts[i % len]` CAVs.
    pub cav_counts: Vec<usize>,
    /// If non-empty, seed number `i` uses `placements[i % len]`.
    pub placements: Vec<CavPlacement>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seeds: (0..5).collect(),
            training_seeds: (1000..1010).collect(),
            intention_seed: 7,
            cav_counts: Vec::new(),
            placements: Vec::new(),
        }
    }
}

/// One row of the study matrix. Unset fields take the base run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub label: String,
    pub mode: CooperationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub generator: GeneratorConfig,
    /// Shared run settings (sensor, channel, tracker, predictor, ...).
    pub base: RunConfig,
    pub variants: Vec<VariantSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let v = |label: &str, mode, delay, compression| VariantSpec {
            label: label.into(),
            mode,
            delay_enabled: Some(delay),
            compression: Some(compression),
        };
        Self {
            experiment: ExperimentSection::default(),
            generator: GeneratorConfig::default(),
            base: RunConfig::default(),
            variants: vec![
                v("no_coop", CooperationMode::NoCooperation, false, 1.0),
                v("coop_perception", CooperationMode::CooperativePerceptionOnly, true, 256.0),
                v("coop_prediction", CooperationMode::CooperativePrediction, true, 256.0),
            ],
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `key=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(format!("parse: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.variants.is_empty() {
            return bad("at least one variant is required".into());
        }
        if self.experiment.seeds.is_empty() {
            return bad("experiment.seeds is empty".into());
        }
        if self.experiment.training_seeds.is_empty() {
            return bad("experiment.training_seeds is empty".into());
        }
        self.base
            .validate()
            .map_err(|e| CliError::Config(format!("base: {e}")))?;
        let mut labels = BTreeSet::new();
        for v in &self.variants {
            if v.label.is_empty() || !v.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("variant label {:?} must be non-empty [A-Za-z0-9_-]", v.label));
            }
            if !labels.insert(v.label.as_str()) {
                return bad(format!("duplicate variant label {:?}", v.label));
            }
            self.run_config(v)
                .validate()
                .map_err(|e| CliError::Config(format!("variant {}: {e}", v.label)))?;
        }
        let seeds: BTreeSet<u64> = self.experiment.seeds.iter().copied().collect();
        if seeds.len() != self.experiment.seeds.len() {
            return bad("experiment.seeds has duplicates".into());
        }
        if let Some(s) = self.experiment.training_seeds.iter().find(|s| seeds.contains(s)) {
            return bad(format!("training seed {s} is also an evaluation seed"));
        }
        for i in 0..self.experiment.seeds.len() {
            self.generator_for(i)
                .validate()
                .map_err(|e| CliError::Config(format!("generator for seed #{i}: {e}")))?;
        }
        Ok(())
    }

    pub fn run_config(&self, v: &VariantSpec) -> RunConfig {
        let mut c = self.base.clone();
        c.mode = v.mode;
        if let Some(d) = v.delay_enabled {
            c.delay_enabled = d;
        }
        if let Some(r) = v.compression {
            c.compression = r;
        }
        c
    }

    /// Generator settings for the `index`-th seed of the list.
    pub fn generator_for(&self, index: usize) -> GeneratorConfig {
        let mut g = self.generator.clone();
        let e = &self.experiment;
        if !e.cav_counts.is_empty() {
            g.n_cavs = e.cav_counts[index % e.cav_counts.len()];
        }
        if !e.placements.is_empty() {
            g.cav_placement = e.placements[index % e.placements.len()];
        }
        g
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Anything TOML accepts as a value (numbers, booleans, arrays, quoted
    // strings) is taken as such; everything else is a bare string.
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c=value` inside a TOML document, creating tables as needed.
/// Numeric segments index arrays.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override path {path:?} has an empty segment")));
    }
    let mut cur = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert((*key).into(), parse_scalar(raw.trim()));
                    return Ok(());
                }
                t.entry(*key).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| CliError::Config(format!("override {path:?}: {key:?} is not an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("override {path:?}: index {idx} out of {len}")))?;
                if last {
                    *slot = parse_scalar(raw.trim());
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(CliError::Config(format!(
                    "override {path:?}: {:?} is not a table",
                    keys[..i].join(".")
                )))
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), c);
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::from_toml("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn dotted_override() {
        let c = ExperimentConfig::from_toml(
            "",
            &["base.compression=256".into(), "generator.n_agents=12".into(), "experiment.seeds=[3, 4]".into()],
        )
        .unwrap();
        assert_eq!(c.base.compression, 256.0);
        assert_eq!(c.generator.n_agents, 12);
        assert_eq!(c.experiment.seeds, vec![3, 4]);
    }

    #[test]
    fn variant_fields_fall_back_to_base() {
        let text = r#"
            [base]
            compression = 64.0
            [[variants]]
            label = "a"
            mode = "cooperative_perception_only"
        "#;
        let c = ExperimentConfig::from_toml(text, &[]).unwrap();
        assert_eq!(c.run_config(&c.variants[0]).compression, 64.0);
        let c = ExperimentConfig::from_toml(text, &["variants.0.compression=256".into()]).unwrap();
        assert_eq!(c.run_config(&c.variants[0]).compression, 256.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("[experiment]\nseeds = []", &[]).is_err());
        assert!(ExperimentConfig::from_toml("[base]\ncompression = 0.5", &[]).is_err());
        assert!(ExperimentConfig::from_toml("[generator]\nn_cavs = 9", &[]).is_err());
        assert!(ExperimentConfig::from_toml("unknown = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml("", &["noequals".into()]).is_err());
        let dup = r#"
            [[variants]]
            label = "a"
            mode = "no_cooperation"
            [[variants]]
            label = "a"
            mode = "no_cooperation"
        "#;
        assert!(ExperimentConfig::from_toml(dup, &[]).is_err());
    }

    #[test]
    fn cycles_cav_counts() {
        let c = ExperimentConfig::from_toml("[experiment]\ncav_counts = [2, 5]\nseeds = [0, 1, 2]", &[]).unwrap();
        assert_eq!(c.generator_for(0).n_cavs, 2);
        assert_eq!(c.generator_for(1).n_cavs, 5);
        assert_eq!(c.generator_for(2).n_cavs, 2);
    }
}
