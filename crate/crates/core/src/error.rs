use alloc::string::String;

use crate::types::{DeviceId, ModelId};

/// Errors raised by the runtime library. Every variant names the violated
/// invariant or the offending entity.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("window has zero channels")]
    ZeroChannels,
    #[error("invalid posterior: {0}")]
    InvalidPosterior(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("device mismatch: expected {expected}, got {got}")]
    DeviceMismatch { expected: DeviceId, got: DeviceId },
    #[error("insufficient samples: need {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("singular covariance on {0}")]
    SingularCovariance(String),
    #[error("class {0} has no training examples")]
    MissingClass(usize),
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model {0} already registered")]
    DuplicateModel(ModelId),
    #[error("unknown model {0}")]
    UnknownModel(ModelId),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("device {0} already present")]
    DevicePresent(DeviceId),
    #[error("no registered devices")]
    NoDevices,
    #[error("empty horizon")]
    EmptyHorizon,
    #[error("length mismatch: trace has {trace} windows, labels {labels}")]
    LengthMismatch { trace: usize, labels: usize },
    #[error("trace has no selected windows")]
    NoSelections,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
