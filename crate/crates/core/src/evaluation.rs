//! Strategy comparison on synthetic scenarios.
//!
//! A [`Scenario`] bundles one world draw: a classifier trained on the
//! training device, unlabeled calibration windows for every device, an
//! evaluation recording and an availability schedule. [`run_strategy`] runs
//! one selection strategy over it and scores the trace with micro-averaged
//! F1, where a window with no selected pipeline counts as a missed
//! prediction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{fit_classifier, Classifier, Hyper, TrainingSet, Variant};
use crate::orchestrator::{InferenceTrace, Orchestrator, OrchestratorConfig, RunSpec, SelectionPolicy, Selector};
use crate::seed;
use crate::synth::{sample_availability, AvailabilitySchedule, DeviceProfile, LiveWorld, SensorSource, WorkloadConfig, World, WorldConfig};
use crate::translation::{AlignmentMode, FitOptions, TranslationOperator};
use crate::types::{DeviceId, ModelId, SensorWindow};

/// A way of choosing the device that feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// One fixed device, raw data.
    FixedSingle(DeviceId),
    /// Mean F1 of `FixedSingle` over every device.
    SingleAvg,
    /// Round-robin over available devices, raw data.
    Native,
    /// Round-robin with translation.
    Trans,
    /// Margin selection on raw data.
    Qs,
    /// Margin selection with translation.
    Full,
}

impl Strategy {
    /// The five strategies of the comparison grid.
    pub const COMPARISON: [Strategy; 5] = [Strategy::SingleAvg, Strategy::Native, Strategy::Trans, Strategy::Qs, Strategy::Full];

    pub fn translates(self) -> bool {
        matches!(self, Strategy::Trans | Strategy::Full)
    }

    fn selector(self) -> Option<Selector> {
        match self {
            Strategy::FixedSingle(d) => Some(Selector::Fixed(d)),
            Strategy::SingleAvg => None,
            Strategy::Native | Strategy::Trans => Some(Selector::RoundRobin),
            Strategy::Qs | Strategy::Full => Some(Selector::Margin),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::FixedSingle(d) => write!(f, "fixed-single:{}", d.0),
            Strategy::SingleAvg => f.write_str("single-avg"),
            Strategy::Native => f.write_str("native"),
            Strategy::Trans => f.write_str("trans"),
            Strategy::Qs => f.write_str("qs"),
            Strategy::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-avg" => Ok(Strategy::SingleAvg),
            "native" => Ok(Strategy::Native),
            "trans" => Ok(Strategy::Trans),
            "qs" => Ok(Strategy::Qs),
            "full" => Ok(Strategy::Full),
            other => other
                .strip_prefix("fixed-single:")
                .and_then(|d| d.parse::<u16>().ok())
                .map(|d| Strategy::FixedSingle(DeviceId(d)))
                .ok_or_else(|| Error::UnknownStrategy(other.to_string())),
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Pooled confusion cells over a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Tallies one window: a correct prediction is a TP; a wrong one is an FP
    /// for the predicted class and an FN for the true class; no prediction is
    /// an FN.
    pub fn add(&mut self, predicted: Option<usize>, truth: usize) {
        match predicted {
            Some(p) if p == truth => self.tp += 1,
            Some(_) => {
                self.fp += 1;
                self.fn_ += 1;
            }
            None => self.fn_ += 1,
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Micro-averaged F1 of `trace` against `labels`.
pub fn micro_f1(trace: &InferenceTrace, labels: &[usize]) -> Result<f64> {
    if trace.len() != labels.len() {
        return Err(Error::LengthMismatch { trace: trace.len(), labels: labels.len() });
    }
    let mut c = Confusion::default();
    for (r, &y) in trace.records.iter().zip(labels) {
        c.add(r.predicted_class, y);
    }
    Ok(c.f1())
}

/// Micro-F1 using the ground truth recorded in the trace itself.
pub fn trace_f1(trace: &InferenceTrace) -> Result<f64> {
    let labels = trace
        .records
        .iter()
        .map(|r| r.true_class.ok_or_else(|| Error::InvalidConfig(format!("window {} has no label", r.window))))
        .collect::<Result<Vec<_>>>()?;
    micro_f1(trace, &labels)
}

/// Micro-F1 of consecutive `segment_secs` segments. A segment with no
/// covered window scores 0.
pub fn segment_f1(trace: &InferenceTrace, segment_secs: f64) -> Result<Vec<f64>> {
    if !(segment_secs > 0.0) {
        return Err(Error::InvalidConfig(format!("segment length {segment_secs} must be positive")));
    }
    let per = libm::round(segment_secs / trace.window_secs).max(1.0) as usize;
    let mut out = Vec::new();
    for chunk in trace.records.chunks(per) {
        let mut c = Confusion::default();
        for r in chunk {
            let y = r.true_class.ok_or_else(|| Error::InvalidConfig(format!("window {} has no label", r.window)))?;
            c.add(r.predicted_class, y);
        }
        out.push(c.f1());
    }
    Ok(out)
}

/// Fraction of selected windows attributed to each of `devices`.
pub fn selection_ratio(trace: &InferenceTrace, devices: &[DeviceId]) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; devices.len()];
    let mut total = 0usize;
    for d in trace.records.iter().filter_map(|r| r.selected_device) {
        if let Some(i) = devices.iter().position(|&x| x == d) {
            counts[i] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoSelections);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

/// Assessment and execution counts reconstructed from a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentCost {
    pub assessments: usize,
    pub executions: usize,
    /// Executions beyond one per assessed window.
    pub extra_executions: usize,
}

pub fn assessment_cost(trace: &InferenceTrace) -> AssessmentCost {
    let mut cost = AssessmentCost::default();
    for r in &trace.records {
        let n = r.executions();
        cost.executions += n;
        if r.assessed {
            cost.assessments += 1;
            cost.extra_executions += n.saturating_sub(1);
        }
    }
    cost
}

/// Everything needed to build a scenario except the seed and workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: WorldConfig,
    pub profiles: Vec<DeviceProfile>,
    pub training_device: DeviceId,
    pub variant: Variant,
    #[serde(default)]
    pub hyper: Hyper,
    /// Labeled recording used to train the classifier.
    pub train_secs: f64,
    /// Unlabeled windows collected per device for translation fitting.
    pub calibration_windows: usize,
    pub eval_secs: f64,
    pub alignment: AlignmentMode,
    #[serde(default)]
    pub fit: FitOptions,
    /// Availability epoch; defaults to the selection interval.
    #[serde(default)]
    pub epoch_secs: Option<f64>,
}

impl ScenarioConfig {
    pub fn devices(&self) -> Vec<DeviceId> {
        let mut d: Vec<DeviceId> = self.profiles.iter().map(|p| p.id).collect();
        d.sort();
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::NoDevices);
        }
        let mut ids = self.devices();
        ids.dedup();
        if ids.len() != self.profiles.len() {
            return Err(Error::InvalidConfig(String::from("profiles: duplicate device id")));
        }
        if let Some(d) = ids.iter().find(|d| d.0 >= 64) {
            return Err(Error::InvalidConfig(format!("profiles: device id {} exceeds 63", d.0)));
        }
        for p in &self.profiles {
            p.validate()?;
            if p.channels() != self.world.channels {
                return Err(Error::InvalidConfig(format!(
                    "profiles: device {} has {} channels, world has {}",
                    p.id,
                    p.channels(),
                    self.world.channels
                )));
            }
        }
        if !ids.contains(&self.training_device) {
            return Err(Error::InvalidConfig(format!("training_device {} has no profile", self.training_device)));
        }
        if !(self.train_secs > 0.0) || !(self.eval_secs > 0.0) {
            return Err(Error::InvalidConfig(String::from("train_secs and eval_secs must be positive")));
        }
        if self.calibration_windows < self.fit.min_samples {
            return Err(Error::InvalidConfig(format!(
                "calibration_windows {} below fit.min_samples {}",
                self.calibration_windows, self.fit.min_samples
            )));
        }
        if let Some(e) = self.epoch_secs {
            if !(e > 0.0) {
                return Err(Error::InvalidConfig(format!("epoch_secs {e} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-channel gains of the two foreign devices in [`ScenarioConfig::reference`].
pub const REFERENCE_GAINS: [[f64; 6]; 2] = [[1.5, 0.7, 1.3, 0.8, 1.4, 0.6], [0.6, 1.4, 0.75, 1.5, 0.7, 1.3]];
/// Per-channel biases matching [`REFERENCE_GAINS`].
pub const REFERENCE_BIASES: [[f64; 6]; 2] = [[0.5, -0.4, 0.3, -0.6, 0.2, 0.4], [-0.5, 0.3, -0.4, 0.5, -0.3, -0.2]];
/// Sensor noise standard deviation of the reference devices, before gain.
pub const REFERENCE_NOISE: f64 = 1.6;

impl ScenarioConfig {
    /// Three six-channel devices observing an eight-class world.
    ///
    /// Device 0 is the training device with an identity channel. Devices 1
    /// and 2 apply a per-channel gain and bias, and their noise scales with
    /// the gain, so each foreign stream is an exact affine image of what
    /// device 0 would record. Noise on every device swells and fades over a
    /// 250 s cycle, with the three cycles a third of a period apart.
    pub fn reference() -> Self {
        let period = 250.0;
        let third = core::f64::consts::TAU / 3.0;
        let channels = 6;
        let quality = |k: f64| crate::synth::QualityProcess { period_secs: period, amplitude: 0.9, phase: k * third };
        let mut profiles = vec![DeviceProfile {
            id: DeviceId(0),
            gain: vec![1.0; channels],
            bias: vec![0.0; channels],
            noise_std: vec![REFERENCE_NOISE; channels],
            quality: quality(0.0),
        }];
        for (i, (g, b)) in REFERENCE_GAINS.iter().zip(&REFERENCE_BIASES).enumerate() {
            profiles.push(DeviceProfile {
                id: DeviceId(i as u16 + 1),
                gain: g.to_vec(),
                bias: b.to_vec(),
                // rounded so configs print as short decimals
                noise_std: g.iter().map(|g| libm::round(g * REFERENCE_NOISE * 1e9) / 1e9).collect(),
                quality: quality(i as f64 + 1.0),
            });
        }
        Self {
            world: WorldConfig { classes: 8, channels, ..WorldConfig::default() },
            profiles,
            training_device: DeviceId(0),
            variant: Variant::Logistic,
            hyper: Hyper::default(),
            train_secs: 1200.0,
            calibration_windows: 200,
            eval_secs: 1800.0,
            alignment: AlignmentMode::Diagonal,
            fit: FitOptions::default(),
            epoch_secs: None,
        }
    }
}

const SEED_TRAIN: u64 = 0x10;
const SEED_CAL_TARGET: u64 = 0x11;
const SEED_CAL_DEVICES: u64 = 0x12;
const SEED_EVAL: u64 = 0x13;
const SEED_SCHEDULE: u64 = 0x14;

/// One seeded draw of the whole experimental setting.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub availability_p: f64,
    pub world: World,
    pub classifier: Classifier,
    /// Unlabeled windows of the training device shipped with the model.
    pub training_samples: Vec<SensorWindow>,
    /// Unlabeled windows collected from each device when it joins.
    pub device_samples: BTreeMap<DeviceId, Vec<SensorWindow>>,
    pub source: LiveWorld,
    pub schedule: AvailabilitySchedule,
    /// Operators installed before any fitting when translation is on.
    /// Empty after [`Scenario::build`].
    pub operators: Vec<TranslationOperator>,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig, policy: &SelectionPolicy, availability_p: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        policy.validate()?;
        let world = World::new(config.world.clone(), seed)?;

        let train = world.generate_latent(config.train_secs, seed::derive(seed, &[SEED_TRAIN]))?;
        let train_world = LiveWorld::new(train, config.profiles.clone())?;
        let n_train = train_world.n_windows();
        let windows = train_world.windows(config.training_device, 0..n_train)?;
        let labels = train_world.trace.labels.clone();
        let set = TrainingSet::new(config.world.classes, windows, labels)?;
        let classifier = fit_classifier(ModelId(0), &set, config.variant, &config.hyper)?;

        // the model's shipped samples and the devices' own samples come from
        // different recordings: unpaired and not time-aligned
        let cal_secs = config.calibration_windows as f64 * config.world.window_secs;
        let cal_target = LiveWorld::new(world.generate_latent(cal_secs, seed::derive(seed, &[SEED_CAL_TARGET]))?, config.profiles.clone())?;
        let training_samples = cal_target.windows(config.training_device, 0..cal_target.n_windows())?;
        let cal_devices =
            LiveWorld::new(world.generate_latent(cal_secs, seed::derive(seed, &[SEED_CAL_DEVICES]))?, config.profiles.clone())?;
        let mut device_samples = BTreeMap::new();
        for d in config.devices() {
            device_samples.insert(d, cal_devices.windows(d, 0..cal_devices.n_windows())?);
        }

        let eval = world.generate_latent(config.eval_secs, seed::derive(seed, &[SEED_EVAL]))?;
        let source = LiveWorld::new(eval, config.profiles.clone())?;
        let workload = WorkloadConfig::with_probability(availability_p, seed::derive(seed, &[SEED_SCHEDULE]), source.trace.horizon_secs());
        let epoch = config.epoch_secs.unwrap_or(policy.interval_secs);
        let schedule = sample_availability(&workload, &config.devices(), epoch)?;

        Ok(Self {
            config: config.clone(),
            seed,
            availability_p,
            world,
            classifier,
            training_samples,
            device_samples,
            source,
            schedule,
            operators: Vec::new(),
        })
    }

    pub fn devices(&self) -> Vec<DeviceId> {
        self.config.devices()
    }

    pub fn labels(&self) -> &[usize] {
        &self.source.trace.labels
    }

    /// Orchestrator with every device joined and the model registered.
    pub fn orchestrator(&self, translate: bool, policy: &SelectionPolicy) -> Result<Orchestrator> {
        let mut o =
            Orchestrator::new(OrchestratorConfig { translate, mode: self.config.alignment, fit: self.config.fit, policy: *policy })?;
        if translate {
            for op in &self.operators {
                o.preload_translation(op.clone())?;
            }
        }
        for (&d, samples) in &self.device_samples {
            o.device_join(d, samples.clone())?;
        }
        o.register_model(self.classifier.clone(), self.training_samples.clone())?;
        Ok(o)
    }
}

/// Scores of one strategy on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub availability_p: f64,
    pub seed: u64,
    pub micro_f1: f64,
    pub devices: Vec<DeviceId>,
    /// Aligned with `devices`; all zero when nothing was ever selected.
    pub selection_ratio: Vec<f64>,
    pub assessment_count: usize,
    pub model_execution_count: usize,
}

/// A report plus the traces behind it (several for `SingleAvg`).
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub report: EvalReport,
    pub traces: Vec<InferenceTrace>,
}

/// Runs one strategy without extra events.
pub fn run_strategy(strategy: Strategy, scenario: &Scenario, policy: &SelectionPolicy) -> Result<StrategyOutcome> {
    let devices = scenario.devices();
    let model = scenario.classifier.id();
    let single = |s: Strategy| -> Result<(InferenceTrace, EvalReport)> {
        let selector = s.selector().ok_or_else(|| Error::UnknownStrategy(s.to_string()))?;
        if let Selector::Fixed(d) = selector {
            if !devices.contains(&d) {
                return Err(Error::UnknownDevice(d));
            }
        }
        let mut o = scenario.orchestrator(s.translates(), policy)?;
        let spec = RunSpec { model, selector, strategy: s.to_string(), events: Vec::new() };
        let trace = o.run(&scenario.source, &scenario.schedule, &spec)?;
        let cost = assessment_cost(&trace);
        let report = EvalReport {
            strategy: s,
            availability_p: scenario.availability_p,
            seed: scenario.seed,
            micro_f1: micro_f1(&trace, scenario.labels())?,
            devices: devices.clone(),
            selection_ratio: selection_ratio(&trace, &devices).unwrap_or_else(|_| vec![0.0; devices.len()]),
            assessment_count: cost.assessments,
            model_execution_count: cost.executions,
        };
        Ok((trace, report))
    };

    if strategy != Strategy::SingleAvg {
        let (trace, report) = single(strategy)?;
        return Ok(StrategyOutcome { report, traces: vec![trace] });
    }
    let mut traces = Vec::with_capacity(devices.len());
    let mut parts = Vec::with_capacity(devices.len());
    for &d in &devices {
        let (t, r) = single(Strategy::FixedSingle(d))?;
        traces.push(t);
        parts.push(r);
    }
    let n = parts.len() as f64;
    let mut ratio = vec![0.0; devices.len()];
    for r in &parts {
        for (acc, x) in ratio.iter_mut().zip(&r.selection_ratio) {
            *acc += x / n;
        }
    }
    let executions: usize = parts.iter().map(|r| r.model_execution_count).sum();
    let report = EvalReport {
        strategy,
        availability_p: scenario.availability_p,
        seed: scenario.seed,
        micro_f1: parts.iter().map(|r| r.micro_f1).sum::<f64>() / n,
        devices,
        selection_ratio: ratio,
        assessment_count: 0,
        model_execution_count: libm::round(executions as f64 / n) as usize,
    };
    Ok(StrategyOutcome { report, traces })
}

/// Micro-F1 of a selector that sees the labels: a window counts as correct
/// when any available pipeline gets it right. Upper bound for margin
/// selection with the same pipelines.
pub fn oracle_f1(scenario: &Scenario, translate: bool, policy: &SelectionPolicy) -> Result<f64> {
    let o = scenario.orchestrator(translate, policy)?;
    let model = scenario.classifier.id();
    let mut c = crate::evaluation::Confusion::default();
    for (i, &y) in scenario.labels().iter().enumerate() {
        let report = o.assess(model, i, &scenario.source, &scenario.schedule)?;
        let preds: Vec<usize> = report.entries.iter().filter_map(|e| e.posterior.as_ref().map(|p| p.argmax())).collect();
        let pick = if preds.contains(&y) { Some(y) } else { preds.first().copied() };
        c.add(pick, y);
    }
    Ok(c.f1())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}
