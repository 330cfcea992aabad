//! Best-effort inference over multiple heterogeneous sensing devices.
//!
//! The crate composes execution pipelines (device stream, optional
//! device-to-device translation, black-box classifier), picks one per
//! decision point by margin-sampling quality assessment, and evaluates
//! selection strategies on synthetic multi-device recordings.
//!
//! It is `no_std` and needs only `alloc`; file formats, configuration and
//! the command line live in the companion `multisense` crate.
//!
//! Module map:
//! - [`types`]: identifiers, windows, posteriors, margins, pipelines
//! - [`synth`]: synthetic world, device rendering, availability workloads
//! - [`translation`]: second-order alignment operators and Fréchet distance
//! - [`models`]: reference classifiers
//! - [`orchestrator`]: registry, assessment, selection, duty-cycled runs
//! - [`evaluation`]: strategies, micro-F1, selection ratios, cost accounting
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod evaluation;
pub mod models;
pub mod orchestrator;
pub mod seed;
pub mod synth;
pub mod translation;
pub mod types;

pub use error::{Error, Result};
pub use evaluation::{EvalReport, Scenario, ScenarioConfig, Strategy};
pub use models::{fit_classifier, Classifier, Variant};
pub use orchestrator::{InferenceTrace, Orchestrator, OrchestratorConfig, SelectionPolicy};
pub use synth::{DeviceProfile, LatentTrace, SensorSource, World, WorldConfig};
pub use translation::{fit_alignment, AlignmentMode, TranslationOperator};
pub use types::{margin, ClassPosterior, DeviceId, Margin, ModelId, Pipeline, PipelineId, SensorWindow};
