//! The selection runtime.
//!
//! An [`Orchestrator`] owns the registry of devices, models, translation
//! operators and pipelines. Registering a model or letting a device join
//! builds one pipeline per (model, device) pair and fits any missing
//! translation onto the model's training device, once per pair. A run
//! assesses every available pipeline at each selection-interval boundary and
//! whenever a system event fires, keeps the pipeline with the largest margin,
//! and executes only that pipeline until the next assessment.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::synth::{AvailabilitySchedule, SensorSource};
use crate::translation::{fit_alignment, AlignmentMode, FitOptions, TranslationOperator};
use crate::types::{margin, ClassPosterior, DeviceId, Margin, ModelId, Pipeline, PipelineId, SensorWindow, TranslationKey};

pub const DEFAULT_INTERVAL_SECS: f64 = 10.0;
pub const DEFAULT_ASSESSMENT_WINDOW_SECS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Keep the current pipeline if it ties for the maximum, else lowest id.
    StickyLowestId,
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionPolicy {
    pub interval_secs: f64,
    pub assessment_window_secs: f64,
    pub tie_break: TieBreak,
    /// Delay between a translation fit starting and its operator being
    /// published. Pipelines waiting on a fit are left out of assessments.
    pub fit_delay_secs: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            interval_secs: DEFAULT_INTERVAL_SECS,
            assessment_window_secs: DEFAULT_ASSESSMENT_WINDOW_SECS,
            tie_break: TieBreak::StickyLowestId,
            fit_delay_secs: 0.0,
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.assessment_window_secs > 0.0) || !(self.interval_secs >= self.assessment_window_secs) {
            return Err(Error::InvalidConfig(format!(
                "policy needs interval ({}) >= assessment window ({}) > 0",
                self.interval_secs, self.assessment_window_secs
            )));
        }
        if !(self.fit_delay_secs >= 0.0) || !self.fit_delay_secs.is_finite() {
            return Err(Error::InvalidConfig(format!("fit_delay_secs {} must be finite and >= 0", self.fit_delay_secs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemEventKind {
    ModelRegistered,
    ModelReregistered,
    DeviceJoined,
    DeviceLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Device(DeviceId),
    Model(ModelId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemEvent {
    pub kind: SystemEventKind,
    pub subject: Subject,
    pub time: f64,
}

/// One pipeline's outcome in an assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEntry {
    pub pipeline: PipelineId,
    pub device: DeviceId,
    pub available: bool,
    pub posterior: Option<ClassPosterior>,
    pub margin: Option<Margin>,
}

/// All pipelines of one model assessed on the same window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub time: f64,
    pub window: usize,
    pub entries: Vec<QualityEntry>,
}

impl QualityReport {
    pub fn entry(&self, id: PipelineId) -> Option<&QualityEntry> {
        self.entries.iter().find(|e| e.pipeline == id)
    }
}

/// Largest-margin pipeline in `report`, or `None` when nothing is available.
pub fn select(report: &QualityReport, current: Option<PipelineId>, tie_break: TieBreak) -> Option<PipelineId> {
    let best = report
        .entries
        .iter()
        .filter_map(|e| e.margin.map(Margin::value))
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))?;
    if tie_break == TieBreak::StickyLowestId {
        if let Some(c) = current {
            if report.entry(c).and_then(|e| e.margin).map(Margin::value) == Some(best) {
                return Some(c);
            }
        }
    }
    report.entries.iter().filter(|e| e.margin.map(Margin::value) == Some(best)).map(|e| e.pipeline).min()
}

#[derive(Debug, Clone, PartialEq)]
struct DeviceEntry {
    present: bool,
    samples: Vec<SensorWindow>,
}

#[derive(Debug, Clone, PartialEq)]
struct ModelEntry {
    classifier: Classifier,
    training_samples: Vec<SensorWindow>,
}

#[derive(Debug, Clone, PartialEq)]
struct Published {
    operator: TranslationOperator,
    ready_at: f64,
}

/// Devices, models, translations and pipelines known to the runtime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    devices: BTreeMap<DeviceId, DeviceEntry>,
    models: BTreeMap<ModelId, ModelEntry>,
    translations: BTreeMap<TranslationKey, Published>,
    pipelines: BTreeMap<ModelId, Vec<Pipeline>>,
    next_pipeline: u32,
}

impl Registry {
    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices.keys().copied()
    }

    pub fn is_present(&self, device: DeviceId) -> bool {
        self.devices.get(&device).is_some_and(|d| d.present)
    }

    pub fn models(&self) -> impl Iterator<Item = ModelId> + '_ {
        self.models.keys().copied()
    }

    pub fn classifier(&self, model: ModelId) -> Option<&Classifier> {
        self.models.get(&model).map(|m| &m.classifier)
    }

    pub fn pipelines(&self, model: ModelId) -> &[Pipeline] {
        self.pipelines.get(&model).map_or(&[], Vec::as_slice)
    }

    pub fn translation(&self, key: TranslationKey) -> Option<&TranslationOperator> {
        self.translations.get(&key).map(|p| &p.operator)
    }

    pub fn translation_count(&self) -> usize {
        self.translations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    /// Insert translation operators for foreign devices. Off for the
    /// no-translation baselines.
    pub translate: bool,
    pub mode: AlignmentMode,
    pub fit: FitOptions,
    pub policy: SelectionPolicy,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { translate: true, mode: AlignmentMode::Diagonal, fit: FitOptions::default(), policy: SelectionPolicy::default() }
    }
}

/// How a run picks its pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    /// Always the pipeline of one device; no assessments.
    Fixed(DeviceId),
    /// Next available device in id order at every interval boundary.
    RoundRobin,
    /// Largest assessed margin.
    Margin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEventKind {
    DeviceLeave(DeviceId),
    DeviceJoin { device: DeviceId, samples: Vec<SensorWindow> },
    ModelReregister,
}

/// A system event injected into a run at `time_secs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEvent {
    pub time_secs: f64,
    pub kind: RunEventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelId,
    pub selector: Selector,
    /// Free-form label copied into every trace record.
    pub strategy: String,
    pub events: Vec<RunEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMargin {
    pub pipeline: PipelineId,
    pub margin: Option<f64>,
}

/// One window of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub window: usize,
    pub time: f64,
    pub selected_pipeline: Option<PipelineId>,
    pub selected_device: Option<DeviceId>,
    pub predicted_class: Option<usize>,
    pub true_class: Option<usize>,
    /// Bit `d` set when device `d` is available.
    pub availability: u64,
    pub assessed: bool,
    /// Every pipeline taking part in the assessment; `None` for unavailable
    /// devices. Empty when the window was not assessed.
    pub margins: Vec<PipelineMargin>,
    pub events: Vec<SystemEventKind>,
}

impl TraceRecord {
    /// Model executions spent on this window.
    pub fn executions(&self) -> usize {
        if self.assessed {
            self.margins.iter().filter(|m| m.margin.is_some()).count()
        } else {
            usize::from(self.selected_pipeline.is_some())
        }
    }

    pub fn is_available(&self, device: DeviceId) -> bool {
        self.availability & (1u64 << device.0) != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub strategy: String,
    pub model: ModelId,
    pub window_secs: f64,
    pub interval_secs: f64,
    /// Device of every pipeline that appeared during the run.
    pub pipeline_devices: BTreeMap<PipelineId, DeviceId>,
    pub records: Vec<TraceRecord>,
}

impl InferenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn assessments(&self) -> usize {
        self.records.iter().filter(|r| r.assessed).count()
    }

    pub fn executions(&self) -> usize {
        self.records.iter().map(TraceRecord::executions).sum()
    }
}

/// The runtime control loop and its registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Orchestrator {
    config: OrchestratorConfig,
    registry: Registry,
    clock: f64,
    pending: Vec<SystemEvent>,
    log: Vec<SystemEvent>,
    fits: usize,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Result<Self> {
        config.policy.validate()?;
        Ok(Self { config, registry: Registry::default(), clock: 0.0, pending: Vec::new(), log: Vec::new(), fits: 0 })
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Every event emitted so far, in order.
    pub fn events(&self) -> &[SystemEvent] {
        &self.log
    }

    /// Translation fits performed since construction.
    pub fn fits_performed(&self) -> usize {
        self.fits
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Advances the event clock; it never moves backwards.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.clock {
            self.clock = t;
        }
    }

    fn emit(&mut self, kind: SystemEventKind, subject: Subject) {
        let e = SystemEvent { kind, subject, time: self.clock };
        self.pending.push(e);
        self.log.push(e);
    }

    /// Installs an operator fitted elsewhere. At most one per pair.
    pub fn preload_translation(&mut self, op: TranslationOperator) -> Result<()> {
        op.validate()?;
        let key = op.key();
        if self.registry.translations.contains_key(&key) {
            return Err(Error::InvalidConfig(format!("translation {} -> {} already present", key.source, key.target)));
        }
        self.registry.translations.insert(key, Published { operator: op, ready_at: self.clock });
        Ok(())
    }

    /// Ensures an operator for `device -> target` exists, fitting it if
    /// missing. Returns when it becomes usable.
    fn ensure_translation(&mut self, device: DeviceId, target: DeviceId, target_samples: &[SensorWindow]) -> Result<f64> {
        let key = TranslationKey { source: device, target };
        if let Some(p) = self.registry.translations.get(&key) {
            return Ok(p.ready_at);
        }
        let src = &self.registry.devices.get(&device).ok_or(Error::UnknownDevice(device))?.samples;
        let operator = fit_alignment(src, target_samples, self.config.mode, &self.config.fit)?;
        self.fits += 1;
        let ready_at = self.clock + self.config.policy.fit_delay_secs;
        self.registry.translations.insert(key, Published { operator, ready_at });
        Ok(ready_at)
    }

    fn build_pipeline(&mut self, model: ModelId, device: DeviceId) -> Result<Pipeline> {
        let entry = self.registry.models.get(&model).ok_or(Error::UnknownModel(model))?;
        let target = entry.classifier.training_device();
        let (translation, ready_at) = if self.config.translate && device != target {
            let samples = entry.training_samples.clone();
            let ready = self.ensure_translation(device, target, &samples)?;
            (Some(TranslationKey { source: device, target }), ready)
        } else {
            (None, self.clock)
        };
        let id = PipelineId(self.registry.next_pipeline);
        self.registry.next_pipeline += 1;
        Ok(Pipeline { id, device, translation, model, active: self.registry.is_present(device), ready_at })
    }

    fn check_training_samples(&self, c: &Classifier, samples: &[SensorWindow]) -> Result<()> {
        if let Some(w) = samples.iter().find(|w| w.device != c.training_device()) {
            return Err(Error::DeviceMismatch { expected: c.training_device(), got: w.device });
        }
        let needs_fit = self.config.translate
            && self.registry.devices.keys().any(|&d| {
                d != c.training_device()
                    && !self.registry.translations.contains_key(&TranslationKey { source: d, target: c.training_device() })
            });
        if needs_fit && samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: self.config.fit.min_samples.max(1), got: 0 });
        }
        Ok(())
    }

    fn install_model(&mut self, c: Classifier, samples: Vec<SensorWindow>) -> Result<ModelId> {
        self.check_training_samples(&c, &samples)?;
        let id = c.id();
        self.registry.models.insert(id, ModelEntry { classifier: c, training_samples: samples });
        let devices: Vec<DeviceId> = self.registry.devices.keys().copied().collect();
        let mut pipelines = Vec::with_capacity(devices.len());
        for d in devices {
            match self.build_pipeline(id, d) {
                Ok(p) => pipelines.push(p),
                Err(e) => {
                    self.registry.models.remove(&id);
                    return Err(e);
                }
            }
        }
        self.registry.pipelines.insert(id, pipelines);
        Ok(id)
    }

    /// Registers a model with unlabeled samples of its training device and
    /// builds a pipeline for every registered device.
    pub fn register_model(&mut self, c: Classifier, training_samples: Vec<SensorWindow>) -> Result<ModelId> {
        if self.registry.models.contains_key(&c.id()) {
            return Err(Error::DuplicateModel(c.id()));
        }
        let id = self.install_model(c, training_samples)?;
        self.emit(SystemEventKind::ModelRegistered, Subject::Model(id));
        Ok(id)
    }

    /// Deregisters and registers again; pipelines get fresh ids, fitted
    /// translations are kept.
    pub fn reregister_model(&mut self, c: Classifier, training_samples: Vec<SensorWindow>) -> Result<ModelId> {
        let id = c.id();
        let old_model = self.registry.models.remove(&id).ok_or(Error::UnknownModel(id))?;
        let old_pipelines = self.registry.pipelines.remove(&id);
        match self.install_model(c, training_samples) {
            Ok(id) => {
                self.emit(SystemEventKind::ModelReregistered, Subject::Model(id));
                Ok(id)
            }
            Err(e) => {
                self.registry.models.insert(id, old_model);
                if let Some(p) = old_pipelines {
                    self.registry.pipelines.insert(id, p);
                }
                Err(e)
            }
        }
    }

    /// Adds a device (or brings back one that left). New devices get a
    /// pipeline per model, fitting missing translations from `samples`.
    pub fn device_join(&mut self, device: DeviceId, samples: Vec<SensorWindow>) -> Result<()> {
        if device.0 >= 64 {
            return Err(Error::InvalidConfig(format!("device id {} exceeds the 64-device bitmask", device.0)));
        }
        if let Some(w) = samples.iter().find(|w| w.device != device) {
            return Err(Error::DeviceMismatch { expected: device, got: w.device });
        }
        match self.registry.devices.get_mut(&device) {
            Some(d) if d.present => return Err(Error::DevicePresent(device)),
            Some(d) => {
                d.present = true;
                if d.samples.is_empty() {
                    d.samples = samples;
                }
                for p in self.registry.pipelines.values_mut().flatten().filter(|p| p.device == device) {
                    p.active = true;
                }
            }
            None => {
                self.registry.devices.insert(device, DeviceEntry { present: true, samples });
                let models: Vec<ModelId> = self.registry.models.keys().copied().collect();
                let mut built = Vec::with_capacity(models.len());
                for m in models {
                    match self.build_pipeline(m, device) {
                        Ok(p) => built.push((m, p)),
                        Err(e) => {
                            self.registry.devices.remove(&device);
                            return Err(e);
                        }
                    }
                }
                for (m, p) in built {
                    self.registry.pipelines.entry(m).or_default().push(p);
                }
            }
        }
        self.emit(SystemEventKind::DeviceJoined, Subject::Device(device));
        Ok(())
    }

    /// Marks a device's pipelines unavailable.
    pub fn device_leave(&mut self, device: DeviceId) -> Result<()> {
        match self.registry.devices.get_mut(&device) {
            Some(d) if d.present => d.present = false,
            _ => return Err(Error::UnknownDevice(device)),
        }
        for p in self.registry.pipelines.values_mut().flatten().filter(|p| p.device == device) {
            p.active = false;
        }
        self.emit(SystemEventKind::DeviceLeft, Subject::Device(device));
        Ok(())
    }

    fn device_available(&self, device: DeviceId, t: f64, schedule: &AvailabilitySchedule) -> bool {
        self.registry.is_present(device) && schedule.is_available(device, t)
    }

    /// Runs one pipeline on window `index`.
    fn execute(&self, p: &Pipeline, source: &dyn SensorSource, index: usize) -> Result<ClassPosterior> {
        let raw = source.window(p.device, index)?;
        let input = match p.translation {
            Some(key) => self.registry.translation(key).ok_or(Error::UnknownDevice(key.source))?.apply(&raw)?,
            None => raw,
        };
        self.registry.models[&p.model].classifier.infer(&input)
    }

    /// Executes every available pipeline of `model` on window `index` and
    /// reports its margin. Pipelines still waiting on a translation fit are
    /// left out.
    pub fn assess(
        &self,
        model: ModelId,
        index: usize,
        source: &dyn SensorSource,
        schedule: &AvailabilitySchedule,
    ) -> Result<QualityReport> {
        if !self.registry.models.contains_key(&model) {
            return Err(Error::UnknownModel(model));
        }
        if self.registry.devices.is_empty() {
            return Err(Error::NoDevices);
        }
        if index >= source.n_windows() {
            return Err(Error::OutOfRange { index, len: source.n_windows() });
        }
        let t = index as f64 * source.window_secs();
        let mut entries = Vec::new();
        for p in self.registry.pipelines(model) {
            if t < p.ready_at {
                continue;
            }
            let available = self.device_available(p.device, t, schedule);
            let (posterior, m) = if available {
                let post = self.execute(p, source, index)?;
                let m = margin(&post);
                (Some(post), Some(m))
            } else {
                (None, None)
            };
            entries.push(QualityEntry { pipeline: p.id, device: p.device, available, posterior, margin: m });
        }
        Ok(QualityReport { time: t, window: index, entries })
    }

    fn set_active(&mut self, model: ModelId, selected: Option<PipelineId>, t: f64, schedule: &AvailabilitySchedule) {
        let present: BTreeMap<DeviceId, bool> =
            self.registry.devices.iter().map(|(&d, e)| (d, e.present && schedule.is_available(d, t))).collect();
        if let Some(ps) = self.registry.pipelines.get_mut(&model) {
            for p in ps {
                p.active = Some(p.id) == selected && present.get(&p.device).copied().unwrap_or(false);
            }
        }
    }

    fn apply_run_event(&mut self, model: ModelId, kind: &RunEventKind) -> Result<()> {
        match kind {
            RunEventKind::DeviceLeave(d) => self.device_leave(*d),
            RunEventKind::DeviceJoin { device, samples } => self.device_join(*device, samples.clone()),
            RunEventKind::ModelReregister => {
                let entry = self.registry.models.get(&model).ok_or(Error::UnknownModel(model))?;
                let (c, s) = (entry.classifier.clone(), entry.training_samples.clone());
                self.reregister_model(c, s).map(|_| ())
            }
        }
    }

    /// Drives one model over every window of `source`.
    pub fn run(&mut self, source: &dyn SensorSource, schedule: &AvailabilitySchedule, spec: &RunSpec) -> Result<InferenceTrace> {
        let n = source.n_windows();
        if n == 0 {
            return Err(Error::EmptyHorizon);
        }
        if !self.registry.models.contains_key(&spec.model) {
            return Err(Error::UnknownModel(spec.model));
        }
        let ws = source.window_secs();
        let policy = self.config.policy;
        if libm::fabs(policy.assessment_window_secs - ws) > 1e-9 * ws {
            return Err(Error::InvalidConfig(format!(
                "assessment window {} s must equal the model window {ws} s",
                policy.assessment_window_secs
            )));
        }
        let ratio = policy.interval_secs / ws;
        let interval_windows = libm::round(ratio) as usize;
        if interval_windows == 0 || libm::fabs(ratio - interval_windows as f64) > 1e-9 * ratio {
            return Err(Error::InvalidConfig(format!(
                "selection interval {} s is not a whole number of {ws} s windows",
                policy.interval_secs
            )));
        }

        let mut injected: Vec<(usize, &RunEventKind)> =
            spec.events.iter().map(|e| (libm::floor(e.time_secs / ws + 1e-9).max(0.0) as usize, &e.kind)).collect();
        injected.sort_by_key(|(w, _)| *w);
        let mut next_event = 0;

        let mut trace = InferenceTrace {
            strategy: spec.strategy.clone(),
            model: spec.model,
            window_secs: ws,
            interval_secs: policy.interval_secs,
            pipeline_devices: BTreeMap::new(),
            records: Vec::with_capacity(n),
        };
        let mut current: Option<PipelineId> = None;
        let mut last_avail: Option<BTreeMap<DeviceId, bool>> = None;

        for i in 0..n {
            let t = i as f64 * ws;
            self.advance_to(t);
            while next_event < injected.len() && injected[next_event].0 <= i {
                self.apply_run_event(spec.model, injected[next_event].1)?;
                next_event += 1;
            }
            for p in self.registry.pipelines(spec.model) {
                trace.pipeline_devices.insert(p.id, p.device);
            }
            if current.is_some_and(|c| !self.registry.pipelines(spec.model).iter().any(|p| p.id == c)) {
                current = None;
            }

            // schedule-driven availability flips count as join/leave events
            let avail: BTreeMap<DeviceId, bool> =
                self.registry.devices.keys().map(|&d| (d, self.device_available(d, t, schedule))).collect();
            let explicit: Vec<Subject> = self.pending.iter().map(|e| e.subject).collect();
            if let Some(prev) = &last_avail {
                for (&d, &up) in &avail {
                    let was = prev.get(&d).copied().unwrap_or(false);
                    if was != up && !explicit.contains(&Subject::Device(d)) {
                        let kind = if up { SystemEventKind::DeviceJoined } else { SystemEventKind::DeviceLeft };
                        self.emit(kind, Subject::Device(d));
                    }
                }
            }
            last_avail = Some(avail);

            let events: Vec<SystemEventKind> = self.pending.drain(..).map(|e| e.kind).collect();
            let triggered = !events.is_empty();
            let boundary = i % interval_windows == 0;
            let usable = |o: &Self, p: &Pipeline| t >= p.ready_at && o.device_available(p.device, t, schedule);

            let mut assessed = false;
            let mut margins = Vec::new();
            let mut prediction: Option<usize> = None;
            match spec.selector {
                Selector::Margin => {
                    if boundary || triggered {
                        let report = self.assess(spec.model, i, source, schedule)?;
                        current = select(&report, current, policy.tie_break);
                        prediction = current.and_then(|c| report.entry(c)).and_then(|e| e.posterior.as_ref()).map(ClassPosterior::argmax);
                        margins = report
                            .entries
                            .iter()
                            .map(|e| PipelineMargin { pipeline: e.pipeline, margin: e.margin.map(Margin::value) })
                            .collect();
                        assessed = true;
                    } else if let Some(c) = current {
                        let p = self.registry.pipelines(spec.model).iter().find(|p| p.id == c).cloned();
                        match p {
                            Some(p) if usable(self, &p) => {
                                prediction = Some(self.execute(&p, source, i)?.argmax());
                            }
                            _ => current = None,
                        }
                    }
                }
                Selector::RoundRobin => {
                    let candidates: Vec<Pipeline> =
                        self.registry.pipelines(spec.model).iter().filter(|p| usable(self, p)).cloned().collect();
                    let current_device = current.and_then(|c| trace.pipeline_devices.get(&c).copied());
                    let current_ok = current.is_some_and(|c| candidates.iter().any(|p| p.id == c));
                    if boundary || !current_ok {
                        current = next_round_robin(&candidates, current_device);
                    }
                    if let Some(p) = current.and_then(|c| candidates.iter().find(|p| p.id == c)) {
                        prediction = Some(self.execute(p, source, i)?.argmax());
                    }
                }
                Selector::Fixed(device) => {
                    current = self.registry.pipelines(spec.model).iter().find(|p| p.device == device && usable(self, p)).map(|p| p.id);
                    if let Some(c) = current {
                        let p = self.registry.pipelines(spec.model).iter().find(|p| p.id == c).cloned();
                        if let Some(p) = p {
                            prediction = Some(self.execute(&p, source, i)?.argmax());
                        }
                    }
                }
            }
            self.set_active(spec.model, current, t, schedule);

            let availability =
                self.registry.devices.keys().filter(|&&d| self.device_available(d, t, schedule)).fold(0u64, |acc, d| acc | (1u64 << d.0));
            trace.records.push(TraceRecord {
                window: i,
                time: t,
                selected_pipeline: current,
                selected_device: current.and_then(|c| trace.pipeline_devices.get(&c).copied()),
                predicted_class: prediction,
                true_class: source.label(i),
                availability,
                assessed,
                margins,
                events,
            });
        }
        Ok(trace)
    }
}

/// Next candidate after `last` in device order, wrapping around.
fn next_round_robin(candidates: &[Pipeline], last: Option<DeviceId>) -> Option<PipelineId> {
    let mut sorted: Vec<&Pipeline> = candidates.iter().collect();
    sorted.sort_by_key(|p| (p.device, p.id));
    let first = sorted.first()?;
    let pick = match last {
        None => first,
        Some(d) => sorted.iter().find(|p| p.device > d).copied().unwrap_or(first),
    };
    Some(pick.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn report(margins: &[(u32, Option<f64>)]) -> QualityReport {
        QualityReport {
            time: 0.0,
            window: 0,
            entries: margins
                .iter()
                .map(|&(id, m)| QualityEntry {
                    pipeline: PipelineId(id),
                    device: DeviceId(id as u16),
                    available: m.is_some(),
                    posterior: None,
                    margin: m.map(|v| {
                        let p = ClassPosterior::new(vec![(1.0 + v) / 2.0, (1.0 - v) / 2.0], ModelId(0)).unwrap();
                        margin(&p)
                    }),
                })
                .collect(),
        }
    }

    #[test]
    fn select_argmax() {
        let r = report(&[(1, Some(0.2)), (2, Some(0.5)), (3, Some(0.4))]);
        assert_eq!(select(&r, None, TieBreak::StickyLowestId), Some(PipelineId(2)));
    }

    #[test]
    fn select_tie_branches() {
        let r = report(&[(1, Some(0.4)), (2, Some(0.4))]);
        assert_eq!(select(&r, Some(PipelineId(2)), TieBreak::StickyLowestId), Some(PipelineId(2)));
        assert_eq!(select(&r, None, TieBreak::StickyLowestId), Some(PipelineId(1)));
        assert_eq!(select(&r, Some(PipelineId(2)), TieBreak::LowestId), Some(PipelineId(1)));
        // a current pipeline that does not tie is dropped
        let r = report(&[(1, Some(0.4)), (2, Some(0.4)), (3, Some(0.1))]);
        assert_eq!(select(&r, Some(PipelineId(3)), TieBreak::StickyLowestId), Some(PipelineId(1)));
    }

    #[test]
    fn select_empty_or_unavailable() {
        assert_eq!(select(&report(&[]), None, TieBreak::StickyLowestId), None);
        assert_eq!(select(&report(&[(1, None), (2, None)]), Some(PipelineId(1)), TieBreak::StickyLowestId), None);
    }

    #[test]
    fn policy_validation() {
        assert!(SelectionPolicy::default().validate().is_ok());
        let bad = SelectionPolicy { interval_secs: 0.5, ..SelectionPolicy::default() };
        assert!(bad.validate().is_err());
        let bad = SelectionPolicy { assessment_window_secs: 0.0, ..SelectionPolicy::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn round_robin_wraps() {
        let p = |id: u32, d: u16| Pipeline {
            id: PipelineId(id),
            device: DeviceId(d),
            translation: None,
            model: ModelId(0),
            active: true,
            ready_at: 0.0,
        };
        let c = [p(10, 0), p(11, 2), p(12, 5)];
        assert_eq!(next_round_robin(&c, None), Some(PipelineId(10)));
        assert_eq!(next_round_robin(&c, Some(DeviceId(0))), Some(PipelineId(11)));
        assert_eq!(next_round_robin(&c, Some(DeviceId(3))), Some(PipelineId(12)));
        assert_eq!(next_round_robin(&c, Some(DeviceId(5))), Some(PipelineId(10)));
        assert_eq!(next_round_robin(&[], Some(DeviceId(5))), None);
    }
}
