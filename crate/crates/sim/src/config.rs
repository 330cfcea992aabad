//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use multisense_core::evaluation::ScenarioConfig;
use multisense_core::{AlignmentMode, DeviceId, SelectionPolicy, Strategy, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fsutil;

/// The shipped configuration, used when no `--config` is given.
pub const DEFAULT_CONFIG: &str = include_str!("../default.config");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One scenario is drawn per seed.
    pub seeds: Vec<u64>,
    /// Availability probabilities of the evaluation grid.
    pub availability: Vec<f64>,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub policy: SelectionPolicy,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub fit: FitCommand,
    #[serde(default)]
    pub translation: TranslationCommand,
    #[serde(default)]
    pub simulate: SimulateCommand,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Settings of `fit`; unset fields fall back to the scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCommand {
    pub device: Option<DeviceId>,
    pub variant: Option<Variant>,
}

/// Settings of `fit-translation`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationCommand {
    /// Defaults to the lowest-numbered device other than the target.
    pub source: Option<DeviceId>,
    /// Defaults to the scenario's training device.
    pub target: Option<DeviceId>,
    pub mode: Option<AlignmentMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateCommand {
    pub strategy: Strategy,
    pub availability: f64,
    pub seed: u64,
    /// Use this model file instead of training one from the scenario.
    pub model: Option<PathBuf>,
    /// Operator files installed before any fitting.
    pub operators: Vec<PathBuf>,
}

impl Default for SimulateCommand {
    fn default() -> Self {
        Self { strategy: Strategy::Full, availability: 1.0, seed: 0, model: None, operators: Vec::new() }
    }
}

/// Where each command writes (and the next one reads) its artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub operator: PathBuf,
    pub trace: PathBuf,
    pub report: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dataset: "out/dataset.msds".into(),
            model: "out/model.json".into(),
            operator: "out/operator.json".into(),
            trace: "out/trace.jsonl".into(),
            report: "out/report.csv".into(),
        }
    }
}

impl ExperimentConfig {
    /// The reference three-device scenario over ten seeds and the
    /// availability grid {0.7, 0.8, 0.9, 1.0}.
    pub fn reference() -> Self {
        Self {
            seeds: (0..10).collect(),
            availability: vec![0.7, 0.8, 0.9, 1.0],
            strategies: Strategy::COMPARISON.to_vec(),
            policy: SelectionPolicy::default(),
            scenario: ScenarioConfig::reference(),
            fit: FitCommand::default(),
            translation: TranslationCommand::default(),
            simulate: SimulateCommand::default(),
            output: OutputPaths::default(),
        }
    }

    /// Parses and validates the bundled `default.config`.
    pub fn bundled() -> Result<Self> {
        Self::from_toml(DEFAULT_CONFIG)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::config(toml_field(&e, text), e.message().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fsutil::read_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SimError::config("", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(SimError::config("seeds", "must list at least one seed"));
        }
        if self.availability.is_empty() {
            return Err(SimError::config("availability", "must list at least one probability"));
        }
        for (i, &p) in self.availability.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(SimError::config(format!("availability[{i}]"), format!("{p} is not in (0, 1]")));
            }
        }
        if self.strategies.is_empty() {
            return Err(SimError::config("strategies", "must list at least one strategy"));
        }
        self.scenario.validate().map_err(|e| SimError::config("scenario", e.to_string()))?;
        self.policy.validate().map_err(|e| SimError::config("policy", e.to_string()))?;
        if self.policy.assessment_window_secs != self.scenario.world.window_secs {
            return Err(SimError::config(
                "policy.assessment_window_secs",
                format!(
                    "{} must equal scenario.world.window_secs ({})",
                    self.policy.assessment_window_secs, self.scenario.world.window_secs
                ),
            ));
        }
        let devices = self.scenario.devices();
        let check = |field: &str, d: Option<DeviceId>| match d {
            Some(d) if !devices.contains(&d) => Err(SimError::config(field, format!("device {d} has no profile"))),
            _ => Ok(()),
        };
        for (i, s) in self.strategies.iter().enumerate() {
            if let Strategy::FixedSingle(d) = s {
                check(&format!("strategies[{i}]"), Some(*d))?;
            }
        }
        if let Strategy::FixedSingle(d) = self.simulate.strategy {
            check("simulate.strategy", Some(d))?;
        }
        check("fit.device", self.fit.device)?;
        check("translation.source", self.translation.source)?;
        check("translation.target", self.translation.target)?;
        let p = self.simulate.availability;
        if !(p > 0.0 && p <= 1.0) {
            return Err(SimError::config("simulate.availability", format!("{p} is not in (0, 1]")));
        }
        Ok(())
    }

    /// Source and target of `fit-translation` after defaults.
    pub fn translation_pair(&self) -> Result<(DeviceId, DeviceId)> {
        let target = self.translation.target.unwrap_or(self.scenario.training_device);
        let source = match self.translation.source {
            Some(s) => s,
            None => self
                .scenario
                .devices()
                .into_iter()
                .find(|&d| d != target)
                .ok_or_else(|| SimError::config("translation.source", "no device other than the target"))?,
        };
        Ok((source, target))
    }
}

/// Best-effort dotted key path of a TOML error, from the line it points at.
fn toml_field(e: &toml::de::Error, text: &str) -> String {
    let msg = e.message();
    if let Some(rest) = msg.split("unknown field `").nth(1) {
        if let Some(name) = rest.split('`').next() {
            return name.to_string();
        }
    }
    if let Some(rest) = msg.split("missing field `").nth(1) {
        if let Some(name) = rest.split('`').next() {
            return name.to_string();
        }
    }
    let Some(span) = e.span() else { return String::new() };
    let upto = &text[..span.start.min(text.len())];
    let table = upto
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.starts_with('[').then(|| l.trim_matches(|c| c == '[' || c == ']').to_string())
        })
        .unwrap_or_default();
    let line = upto.rsplit('\n').next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim();
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key.to_string(),
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_reference() {
        assert_eq!(ExperimentConfig::bundled().unwrap(), ExperimentConfig::reference());
    }

    #[test]
    fn dump_round_trips() {
        let cfg = ExperimentConfig::reference();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let base = ExperimentConfig::reference().to_toml().unwrap();

        let bad_p = base.replace("availability = [0.7, 0.8, 0.9, 1.0]", "availability = [0.7, 1.5]");
        match ExperimentConfig::from_toml(&bad_p) {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "availability[1]"),
            other => panic!("{other:?}"),
        }

        let typo = base.replace("stay_prob", "stay_prb");
        match ExperimentConfig::from_toml(&typo) {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "stay_prb"),
            other => panic!("{other:?}"),
        }

        let no_seeds = base.replace("seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]", "seeds = []");
        match ExperimentConfig::from_toml(&no_seeds) {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "seeds"),
            other => panic!("{other:?}"),
        }

        let unknown_device = base.replace("strategies = [", "strategies = [\"fixed-single:9\", ");
        match ExperimentConfig::from_toml(&unknown_device) {
            Err(SimError::Config { field, .. }) => assert_eq!(field, "strategies[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn translation_pair_defaults() {
        let cfg = ExperimentConfig::reference();
        assert_eq!(cfg.translation_pair().unwrap(), (DeviceId(1), DeviceId(0)));
    }
}
