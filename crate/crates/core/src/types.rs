//! Shared domain types: identifiers, sensor windows, class posteriors,
//! margins and pipelines.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A sensing device attached to the host.
    DeviceId(u16),
    "D"
);
id_type!(
    /// A registered sensing model.
    ModelId(u16),
    "M"
);
id_type!(
    /// An execution pipeline (device, optional translation, model).
    PipelineId(u32),
    "P"
);

/// Window duration used by every model unless configured otherwise.
pub const DEFAULT_WINDOW_SECS: f64 = 1.0;

/// One fixed-duration multichannel window from one device. Samples are
/// stored channel-major: channel `c` occupies `samples[c * len .. (c + 1) * len]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub device: DeviceId,
    pub start_time: f64,
    pub duration: f64,
    pub channels: usize,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl SensorWindow {
    /// Builds and validates a window.
    pub fn new(device: DeviceId, start_time: f64, duration: f64, sample_rate: f64, channels: usize, samples: Vec<f64>) -> Result<Self> {
        let w = Self { device, start_time, duration, channels, sample_rate, samples };
        validate_window(&w)?;
        Ok(w)
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.len();
        &self.samples[c * len..(c + 1) * len]
    }

    /// Same window with different sample values. The caller guarantees
    /// `samples` has the same shape.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self { samples, ..self.clone() }
    }
}

/// Number of samples per channel implied by `duration` and `sample_rate`,
/// or `None` when the product is not an integer.
pub fn samples_per_window(duration: f64, sample_rate: f64) -> Option<usize> {
    let n = duration * sample_rate;
    if !n.is_finite() || n < 0.0 {
        return None;
    }
    let r = libm::round(n);
    if libm::fabs(n - r) > 1e-9 * r.max(1.0) {
        return None;
    }
    Some(r as usize)
}

/// Checks every [`SensorWindow`] invariant.
pub fn validate_window(w: &SensorWindow) -> Result<()> {
    if w.channels == 0 {
        return Err(Error::ZeroChannels);
    }
    if !(w.duration > 0.0) || !w.duration.is_finite() {
        return Err(Error::InvalidConfig(format!("window duration {} must be positive", w.duration)));
    }
    if !(w.sample_rate > 0.0) || !w.sample_rate.is_finite() {
        return Err(Error::InvalidConfig(format!("sample rate {} must be positive", w.sample_rate)));
    }
    let expected = samples_per_window(w.duration, w.sample_rate).ok_or_else(|| {
        Error::DimensionMismatch(format!("duration {} x rate {} is not a whole number of samples", w.duration, w.sample_rate))
    })?;
    if w.samples.len() != expected * w.channels {
        return Err(Error::DimensionMismatch(format!(
            "expected {} channels x {} samples = {}, got {}",
            w.channels,
            expected,
            expected * w.channels,
            w.samples.len()
        )));
    }
    if let Some(i) = w.samples.iter().position(|x| !x.is_finite()) {
        let len = expected.max(1);
        return Err(Error::NonFinite(format!("channel {} sample {}", i / len, i % len)));
    }
    Ok(())
}

/// Deviation from unit mass that is silently renormalized.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Probability vector over classes emitted by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    probs: Vec<f64>,
    model: ModelId,
}

impl ClassPosterior {
    /// Validates `probs`; a total mass within [`RENORMALIZE_TOLERANCE`] of one
    /// is renormalized, anything further off is rejected.
    pub fn new(probs: Vec<f64>, model: ModelId) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidPosterior(format!("need at least 2 classes, got {}", probs.len())));
        }
        for (k, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidPosterior(format!("entry {k} = {p} outside [0, 1]")));
            }
        }
        let total: f64 = probs.iter().sum();
        if libm::fabs(total - 1.0) > RENORMALIZE_TOLERANCE {
            return Err(Error::InvalidPosterior(format!("mass {total} differs from 1")));
        }
        let probs = if total == 1.0 { probs } else { probs.into_iter().map(|p| p / total).collect() };
        Ok(Self { probs, model })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn model(&self) -> ModelId {
        self.model
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn margin(&self) -> Margin {
        margin(self)
    }
}

/// Gap between the two largest posterior entries.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Margin(f64);

impl Margin {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Margin-sampling certainty: `p(1) - p(2)` for the two largest entries.
pub fn margin(p: &ClassPosterior) -> Margin {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in p.probs() {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    Margin((first - second).clamp(0.0, 1.0))
}

/// Key of a translation operator: source device onto target device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TranslationKey {
    pub source: DeviceId,
    pub target: DeviceId,
}

/// One selectable inference path: device stream, optional translation onto
/// the model's training device, and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub id: PipelineId,
    pub device: DeviceId,
    pub translation: Option<TranslationKey>,
    pub model: ModelId,
    pub active: bool,
    /// Time from which the translation operator is published; the pipeline
    /// is excluded from assessment before then.
    pub ready_at: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn window(len: usize, fill: f64) -> SensorWindow {
        SensorWindow { device: DeviceId(0), start_time: 0.0, duration: 1.0, channels: 6, sample_rate: 50.0, samples: vec![fill; 6 * len] }
    }

    #[test]
    fn valid_window_passes() {
        assert_eq!(validate_window(&window(50, 0.25)), Ok(()));
    }

    #[test]
    fn short_window_is_dimension_mismatch() {
        assert!(matches!(validate_window(&window(49, 0.0)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn nan_sample_is_non_finite() {
        let mut w = window(50, 0.0);
        w.samples[75] = f64::NAN;
        match validate_window(&w) {
            Err(Error::NonFinite(at)) => assert_eq!(at, "channel 1 sample 25"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_channels_rejected() {
        let mut w = window(50, 0.0);
        w.channels = 0;
        w.samples.clear();
        assert_eq!(validate_window(&w), Err(Error::ZeroChannels));
    }

    #[test]
    fn margin_examples() {
        let m = |p: Vec<f64>| margin(&ClassPosterior::new(p, ModelId(0)).unwrap()).value();
        assert!((m(vec![0.6, 0.3, 0.1]) - 0.3).abs() < 1e-15);
        assert_eq!(m(vec![0.25; 4]), 0.0);
        assert_eq!(m(vec![1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn posterior_renormalizes_small_drift_only() {
        let p = ClassPosterior::new(vec![0.5 + 5e-7, 0.5], ModelId(1)).unwrap();
        let s: f64 = p.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(ClassPosterior::new(vec![0.5 + 1e-4, 0.5], ModelId(1)).is_err());
        assert!(ClassPosterior::new(vec![1.0], ModelId(1)).is_err());
        assert!(ClassPosterior::new(vec![1.2, -0.2], ModelId(1)).is_err());
    }

    #[test]
    fn id_ordering_is_total() {
        let mut ids = vec![DeviceId(3), DeviceId(0), DeviceId(2), DeviceId(1)];
        ids.sort();
        assert_eq!(ids, vec![DeviceId(0), DeviceId(1), DeviceId(2), DeviceId(3)]);
    }
}
