//! Synthetic multi-device world.
//!
//! A [`World`] fixes the class-conditional emission model and the label
//! Markov chain. [`World::generate_latent`] draws a clean [`LatentTrace`];
//! [`observe`] renders one window of it through a [`DeviceProfile`]
//! (per-channel gain, bias, and noise whose level drifts slowly over time).
//! [`sample_availability`] draws the per-device on/off schedule of a workload.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{samples_per_window, DeviceId, SensorWindow, DEFAULT_WINDOW_SECS};

/// Parameters of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub classes: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub window_secs: f64,
    /// Self-transition probability of the label chain; the remaining mass is
    /// spread evenly over the other classes. Ignored when `transition` is set.
    pub stay_prob: f64,
    /// Explicit row-stochastic K x K transition matrix.
    pub transition: Option<Vec<Vec<f64>>>,
    /// Class means are drawn from `[-mean_spread, mean_spread]` per channel.
    pub mean_spread: f64,
    /// Range of per-class per-channel oscillation amplitude.
    pub amplitude: [f64; 2],
    /// Range of per-class oscillation frequency in Hz.
    pub frequency: [f64; 2],
    /// Device-independent noise inside the clean signal.
    pub intrinsic_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            channels: 6,
            sample_rate: 50.0,
            window_secs: DEFAULT_WINDOW_SECS,
            stay_prob: 0.9,
            transition: None,
            mean_spread: 1.0,
            amplitude: [0.2, 1.0],
            frequency: [0.5, 4.0],
            intrinsic_noise: 0.1,
        }
    }
}

/// Emission parameters for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEmission {
    pub mean: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub frequency: f64,
}

/// A fully specified world: emission model plus label chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    config: WorldConfig,
    transition: Vec<Vec<f64>>,
    emissions: Vec<ClassEmission>,
    samples_per_window: usize,
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self> {
        let k = config.classes;
        if k < 2 {
            return Err(Error::InvalidConfig(format!("classes = {k}, need at least 2")));
        }
        if config.channels == 0 {
            return Err(Error::ZeroChannels);
        }
        let spw = samples_per_window(config.window_secs, config.sample_rate).filter(|&n| n >= 2 && config.window_secs > 0.0).ok_or_else(
            || {
                Error::InvalidConfig(format!(
                    "window_secs {} x sample_rate {} must give a whole number (>= 2) of samples",
                    config.window_secs, config.sample_rate
                ))
            },
        )?;
        let transition = match &config.transition {
            Some(t) => t.clone(),
            None => {
                if !(0.0..=1.0).contains(&config.stay_prob) {
                    return Err(Error::InvalidConfig(format!("stay_prob {} outside [0, 1]", config.stay_prob)));
                }
                let off = (1.0 - config.stay_prob) / (k - 1) as f64;
                (0..k).map(|i| (0..k).map(|j| if i == j { config.stay_prob } else { off }).collect()).collect()
            }
        };
        check_stochastic(&transition, k)?;
        for (name, [lo, hi]) in [("amplitude", config.amplitude), ("frequency", config.frequency)] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if !(config.mean_spread > 0.0) || !(config.intrinsic_noise >= 0.0) {
            return Err(Error::InvalidConfig(String::from("mean_spread must be > 0, intrinsic_noise >= 0")));
        }

        let mut rng = seed::rng(seed, &[seed::TAG_WORLD]);
        let c = config.channels;
        let mut emissions: Vec<ClassEmission> = Vec::with_capacity(k);
        while emissions.len() < k {
            let e = ClassEmission {
                mean: (0..c).map(|_| rng.random_range(-config.mean_spread..=config.mean_spread)).collect(),
                amplitude: (0..c).map(|_| uniform(&mut rng, config.amplitude)).collect(),
                frequency: uniform(&mut rng, config.frequency),
            };
            // class means must be pairwise distinct
            let distinct = emissions.iter().all(|o| o.mean.iter().zip(&e.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() > 1e-12);
            if distinct {
                emissions.push(e);
            }
        }
        Ok(Self { config, transition, emissions, samples_per_window: spw })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emissions(&self) -> &[ClassEmission] {
        &self.emissions
    }

    pub fn samples_per_window(&self) -> usize {
        self.samples_per_window
    }

    /// Number of whole windows in `horizon_secs`.
    pub fn windows_in(&self, horizon_secs: f64) -> usize {
        if !(horizon_secs > 0.0) {
            return 0;
        }
        libm::floor(horizon_secs / self.config.window_secs + 1e-9) as usize
    }

    /// Draws a label sequence from the chain and renders the clean signal of
    /// every window.
    pub fn generate_latent(&self, horizon_secs: f64, seed: u64) -> Result<LatentTrace> {
        let n = self.windows_in(horizon_secs);
        if n == 0 {
            return Err(Error::EmptyHorizon);
        }
        let k = self.config.classes;
        let c = self.config.channels;
        let len = self.samples_per_window;
        let mut rng = seed::rng(seed, &[seed::TAG_LATENT]);

        let mut labels = Vec::with_capacity(n);
        let mut state = rng.random_range(0..k);
        for i in 0..n {
            if i > 0 {
                state = sample_row(&self.transition[state], rng.random::<f64>());
            }
            labels.push(state);
        }

        let mut base = Vec::with_capacity(n * c * len);
        let dt = 1.0 / self.config.sample_rate;
        let sigma = self.config.intrinsic_noise;
        for &label in &labels {
            let e = &self.emissions[label];
            for ch in 0..c {
                let phase = rng.random_range(0.0..2.0 * PI);
                for l in 0..len {
                    let t = l as f64 * dt;
                    let noise: f64 = if sigma > 0.0 { StandardNormal.sample(&mut rng) } else { 0.0 };
                    base.push(e.mean[ch] + e.amplitude[ch] * libm::sin(2.0 * PI * e.frequency * t + phase) + sigma * noise);
                }
            }
        }
        Ok(LatentTrace {
            seed,
            classes: k,
            channels: c,
            sample_rate: self.config.sample_rate,
            window_secs: self.config.window_secs,
            samples_per_window: len,
            labels,
            base,
        })
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left a sliver of mass; take the last positive entry
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

fn check_stochastic(t: &[Vec<f64>], k: usize) -> Result<()> {
    if t.len() != k || t.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidConfig(format!("transition matrix must be {k}x{k}")));
    }
    for (i, row) in t.iter().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(format!("transition row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if libm::fabs(s - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig(format!("transition row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Ground-truth labels and clean per-window signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrace {
    pub seed: u64,
    pub classes: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub window_secs: f64,
    pub samples_per_window: usize,
    pub labels: Vec<usize>,
    /// `n_windows x channels x samples_per_window`, channel-major per window.
    pub base: Vec<f64>,
}

impl LatentTrace {
    pub fn n_windows(&self) -> usize {
        self.labels.len()
    }

    pub fn horizon_secs(&self) -> f64 {
        self.labels.len() as f64 * self.window_secs
    }

    pub fn base_window(&self, index: usize) -> &[f64] {
        let stride = self.channels * self.samples_per_window;
        &self.base[index * stride..(index + 1) * stride]
    }
}

/// Slow sinusoidal modulation of a device's noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityProcess {
    pub period_secs: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl QualityProcess {
    pub const CONSTANT: Self = Self { period_secs: 1.0, amplitude: 0.0, phase: 0.0 };

    /// Multiplier applied to the nominal noise level at time `t`.
    pub fn factor(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 1.0;
        }
        (1.0 + self.amplitude * libm::sin(2.0 * PI * t / self.period_secs + self.phase)).max(0.0)
    }
}

impl Default for QualityProcess {
    fn default() -> Self {
        Self::CONSTANT
    }
}

/// How one device distorts the clean signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: DeviceId,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub quality: QualityProcess,
}

impl DeviceProfile {
    /// Noiseless pass-through profile.
    pub fn identity(id: DeviceId, channels: usize) -> Self {
        Self { id, gain: vec![1.0; channels], bias: vec![0.0; channels], noise_std: vec![0.0; channels], quality: QualityProcess::CONSTANT }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gain.len();
        if c == 0 {
            return Err(Error::ZeroChannels);
        }
        if self.bias.len() != c || self.noise_std.len() != c {
            return Err(Error::InvalidConfig(format!("profile {}: gain/bias/noise_std lengths differ", self.id)));
        }
        if let Some(ch) = self.gain.iter().position(|g| *g == 0.0 || !g.is_finite()) {
            return Err(Error::InvalidConfig(format!("profile {}: gain on channel {ch} must be finite and nonzero", self.id)));
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite(format!("profile {} bias", self.id)));
        }
        if let Some(ch) = self.noise_std.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidConfig(format!("profile {}: noise_std on channel {ch} must be finite and >= 0", self.id)));
        }
        let q = &self.quality;
        if !(q.period_secs > 0.0) || !(q.amplitude >= 0.0) || !q.phase.is_finite() {
            return Err(Error::InvalidConfig(format!("profile {}: quality process needs period > 0, amplitude >= 0", self.id)));
        }
        Ok(())
    }

    /// Noise standard deviation of channel `c` at time `t`.
    pub fn noise_at(&self, c: usize, t: f64) -> f64 {
        self.noise_std[c] * self.quality.factor(t)
    }
}

/// Renders window `index` of `trace` as seen by the device in `profile`:
/// `gain * base + bias + N(0, sigma(t)^2)` per channel. The noise stream is
/// keyed by (trace seed, device, window), so any window can be regenerated
/// on its own.
pub fn observe(trace: &LatentTrace, profile: &DeviceProfile, index: usize) -> Result<SensorWindow> {
    if index >= trace.n_windows() {
        return Err(Error::OutOfRange { index, len: trace.n_windows() });
    }
    if profile.channels() != trace.channels {
        return Err(Error::ChannelMismatch { expected: trace.channels, got: profile.channels() });
    }
    let len = trace.samples_per_window;
    let t0 = index as f64 * trace.window_secs;
    let base = trace.base_window(index);
    let mut rng = seed::rng(trace.seed, &[seed::TAG_NOISE, u64::from(profile.id.0), index as u64]);
    let mut samples = Vec::with_capacity(base.len());
    for c in 0..trace.channels {
        let sigma = profile.noise_at(c, t0);
        let (g, b) = (profile.gain[c], profile.bias[c]);
        for &x in &base[c * len..(c + 1) * len] {
            let eps = if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            } else {
                0.0
            };
            samples.push(g * x + b + eps);
        }
    }
    Ok(SensorWindow {
        device: profile.id,
        start_time: t0,
        duration: trace.window_secs,
        channels: trace.channels,
        sample_rate: trace.sample_rate,
        samples,
    })
}

/// Anything that can hand out device windows and ground-truth labels by
/// window index.
pub trait SensorSource {
    fn window_secs(&self) -> f64;
    fn n_windows(&self) -> usize;
    fn devices(&self) -> Vec<DeviceId>;
    fn label(&self, index: usize) -> Option<usize>;
    fn window(&self, device: DeviceId, index: usize) -> Result<SensorWindow>;
}

/// A latent trace rendered on demand through a set of device profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveWorld {
    pub trace: LatentTrace,
    pub profiles: Vec<DeviceProfile>,
}

impl LiveWorld {
    pub fn new(trace: LatentTrace, profiles: Vec<DeviceProfile>) -> Result<Self> {
        for p in &profiles {
            p.validate()?;
            if p.channels() != trace.channels {
                return Err(Error::ChannelMismatch { expected: trace.channels, got: p.channels() });
            }
        }
        Ok(Self { trace, profiles })
    }

    pub fn profile(&self, device: DeviceId) -> Result<&DeviceProfile> {
        self.profiles.iter().find(|p| p.id == device).ok_or(Error::UnknownDevice(device))
    }

    /// Windows `range` of one device, unlabeled.
    pub fn windows(&self, device: DeviceId, range: core::ops::Range<usize>) -> Result<Vec<SensorWindow>> {
        let p = self.profile(device)?;
        range.map(|i| observe(&self.trace, p, i)).collect()
    }
}

impl SensorSource for LiveWorld {
    fn window_secs(&self) -> f64 {
        self.trace.window_secs
    }

    fn n_windows(&self) -> usize {
        self.trace.n_windows()
    }

    fn devices(&self) -> Vec<DeviceId> {
        self.profiles.iter().map(|p| p.id).collect()
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.trace.labels.get(index).copied()
    }

    fn window(&self, device: DeviceId, index: usize) -> Result<SensorWindow> {
        observe(&self.trace, self.profile(device)?, index)
    }
}

/// Rendered samples of one device as 32-bit floats, laid out channel-major
/// over the whole horizon: channel `c` is one contiguous stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceBlock {
    pub device: DeviceId,
    pub samples: Vec<f32>,
}

/// A materialized multi-device recording: labels, profiles and per-device
/// sample blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub classes: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub window_secs: f64,
    pub labels: Vec<usize>,
    pub profiles: Vec<DeviceProfile>,
    pub blocks: Vec<DeviceBlock>,
}

impl Dataset {
    /// Renders every window of `trace` through every profile.
    pub fn render(trace: &LatentTrace, profiles: &[DeviceProfile]) -> Result<Self> {
        let n = trace.n_windows();
        let len = trace.samples_per_window;
        let c = trace.channels;
        let mut blocks = Vec::with_capacity(profiles.len());
        for p in profiles {
            p.validate()?;
            let mut samples = vec![0f32; c * n * len];
            for i in 0..n {
                let w = observe(trace, p, i)?;
                for ch in 0..c {
                    let dst = &mut samples[ch * n * len + i * len..ch * n * len + (i + 1) * len];
                    for (d, s) in dst.iter_mut().zip(w.channel(ch)) {
                        *d = *s as f32;
                    }
                }
            }
            blocks.push(DeviceBlock { device: p.id, samples });
        }
        Ok(Self {
            seed: trace.seed,
            classes: trace.classes,
            channels: c,
            sample_rate: trace.sample_rate,
            window_secs: trace.window_secs,
            labels: trace.labels.clone(),
            profiles: profiles.to_vec(),
            blocks,
        })
    }

    pub fn samples_per_window(&self) -> usize {
        samples_per_window(self.window_secs, self.sample_rate).unwrap_or(0)
    }

    /// Checks shapes and label range.
    pub fn validate(&self) -> Result<()> {
        let len = self.samples_per_window();
        if len == 0 {
            return Err(Error::InvalidConfig(String::from("dataset window has no samples")));
        }
        if self.channels == 0 {
            return Err(Error::ZeroChannels);
        }
        if self.blocks.len() != self.profiles.len() {
            return Err(Error::DimensionMismatch(format!("{} profiles but {} sample blocks", self.profiles.len(), self.blocks.len())));
        }
        let expected = self.channels * self.labels.len() * len;
        for (b, p) in self.blocks.iter().zip(&self.profiles) {
            if b.device != p.id {
                return Err(Error::DeviceMismatch { expected: p.id, got: b.device });
            }
            if b.samples.len() != expected {
                return Err(Error::DimensionMismatch(format!("block {} has {} samples, expected {expected}", b.device, b.samples.len())));
            }
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange { label, classes: self.classes });
        }
        Ok(())
    }

    /// All windows of one device paired with their labels.
    pub fn labeled_windows(&self, device: DeviceId) -> Result<Vec<(SensorWindow, usize)>> {
        (0..self.labels.len()).map(|i| Ok((self.window(device, i)?, self.labels[i]))).collect()
    }
}

impl SensorSource for Dataset {
    fn window_secs(&self) -> f64 {
        self.window_secs
    }

    fn n_windows(&self) -> usize {
        self.labels.len()
    }

    fn devices(&self) -> Vec<DeviceId> {
        self.blocks.iter().map(|b| b.device).collect()
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied()
    }

    fn window(&self, device: DeviceId, index: usize) -> Result<SensorWindow> {
        let n = self.labels.len();
        if index >= n {
            return Err(Error::OutOfRange { index, len: n });
        }
        let block = self.blocks.iter().find(|b| b.device == device).ok_or(Error::UnknownDevice(device))?;
        let len = self.samples_per_window();
        let mut samples = Vec::with_capacity(self.channels * len);
        for ch in 0..self.channels {
            let start = ch * n * len + index * len;
            samples.extend(block.samples[start..start + len].iter().map(|&x| f64::from(x)));
        }
        SensorWindow::new(device, index as f64 * self.window_secs, self.window_secs, self.sample_rate, self.channels, samples)
    }
}

/// Static workloads keep every device up; dynamic ones flip a coin per
/// device per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    pub availability_p: f64,
    pub seed: u64,
    pub horizon_secs: f64,
}

impl WorkloadConfig {
    pub fn static_workload(seed: u64, horizon_secs: f64) -> Self {
        Self { kind: WorkloadKind::Static, availability_p: 1.0, seed, horizon_secs }
    }

    /// Static when `p == 1`, dynamic otherwise.
    pub fn with_probability(p: f64, seed: u64, horizon_secs: f64) -> Self {
        let kind = if p == 1.0 { WorkloadKind::Static } else { WorkloadKind::Dynamic };
        Self { kind, availability_p: p, seed, horizon_secs }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.availability_p;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidConfig(format!("availability_p {p} outside (0, 1]")));
        }
        if self.kind == WorkloadKind::Static && p != 1.0 {
            return Err(Error::InvalidConfig(format!("static workload requires availability_p = 1, got {p}")));
        }
        if !(self.horizon_secs > 0.0) {
            return Err(Error::EmptyHorizon);
        }
        Ok(())
    }
}

/// Per-device availability over fixed-length epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilitySchedule {
    pub epoch_secs: f64,
    pub devices: Vec<DeviceId>,
    /// `available[d][e]` for device `devices[d]` in epoch `e`.
    pub available: Vec<Vec<bool>>,
}

impl AvailabilitySchedule {
    /// Every device up for `epochs` epochs.
    pub fn always(devices: &[DeviceId], epoch_secs: f64, epochs: usize) -> Self {
        Self { epoch_secs, devices: devices.to_vec(), available: vec![vec![true; epochs]; devices.len()] }
    }

    pub fn epochs(&self) -> usize {
        self.available.first().map_or(0, Vec::len)
    }

    pub fn epoch_of(&self, t: f64) -> usize {
        libm::floor(t / self.epoch_secs + 1e-9) as usize
    }

    /// Devices the schedule does not cover, and times past its end, count as
    /// available.
    pub fn is_available(&self, device: DeviceId, t: f64) -> bool {
        let Some(d) = self.devices.iter().position(|&x| x == device) else {
            return true;
        };
        let e = self.epoch_of(t);
        self.available[d].get(e).copied().unwrap_or(true)
    }

    /// Number of devices up in epoch `e`.
    pub fn up_count(&self, e: usize) -> usize {
        self.available.iter().filter(|row| row.get(e).copied().unwrap_or(true)).count()
    }
}

/// Draws an independent Bernoulli(p) availability flag per device per epoch.
pub fn sample_availability(cfg: &WorkloadConfig, devices: &[DeviceId], epoch_secs: f64) -> Result<AvailabilitySchedule> {
    cfg.validate()?;
    if devices.is_empty() {
        return Err(Error::NoDevices);
    }
    if !(epoch_secs > 0.0) {
        return Err(Error::InvalidConfig(format!("epoch_secs {epoch_secs} must be positive")));
    }
    let epochs = libm::ceil(cfg.horizon_secs / epoch_secs - 1e-9) as usize;
    if cfg.availability_p == 1.0 {
        return Ok(AvailabilitySchedule::always(devices, epoch_secs, epochs));
    }
    let mut rng = seed::rng(cfg.seed, &[seed::TAG_AVAILABILITY]);
    let mut available = vec![Vec::with_capacity(epochs); devices.len()];
    for _ in 0..epochs {
        for row in available.iter_mut() {
            row.push(rng.random::<f64>() < cfg.availability_p);
        }
    }
    Ok(AvailabilitySchedule { epoch_secs, devices: devices.to_vec(), available })
}
