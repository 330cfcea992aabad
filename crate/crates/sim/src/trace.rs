//! Line-delimited JSON export of inference traces, one object per window.

use std::path::Path;

use multisense_core::orchestrator::{InferenceTrace, TraceRecord};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result, SimError};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginLine {
    pub pipeline: u32,
    pub device: u16,
    /// Absent when the pipeline's device was down or its translation was
    /// not ready yet.
    pub margin: Option<f64>,
}

/// One window of a trace as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub time: f64,
    pub window: usize,
    pub strategy: String,
    pub selected_pipeline: Option<u32>,
    pub selected_device: Option<u16>,
    pub predicted_class: Option<usize>,
    pub true_class: Option<usize>,
    /// Bit `d` set when device `d` was up.
    pub availability: u64,
    pub assessed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<MarginLine>>,
}

impl TraceLine {
    pub fn from_record(trace: &InferenceTrace, r: &TraceRecord) -> Self {
        let margins = r.assessed.then(|| {
            r.margins
                .iter()
                .map(|m| MarginLine {
                    pipeline: m.pipeline.0,
                    device: trace.pipeline_devices.get(&m.pipeline).map_or(u16::MAX, |d| d.0),
                    margin: m.margin,
                })
                .collect()
        });
        Self {
            time: r.time,
            window: r.window,
            strategy: trace.strategy.clone(),
            selected_pipeline: r.selected_pipeline.map(|p| p.0),
            selected_device: r.selected_device.map(|d| d.0),
            predicted_class: r.predicted_class,
            true_class: r.true_class,
            availability: r.availability,
            assessed: r.assessed,
            margins,
        }
    }
}

/// Serializes traces back to back.
pub fn encode(traces: &[InferenceTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        for r in &t.records {
            // TraceLine holds only plain numbers and strings, which always
            // serialize
            out.push_str(&serde_json::to_string(&TraceLine::from_record(t, r)).expect("trace line serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn decode(text: &str) -> Result<Vec<TraceLine>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| FormatError::Parse { what: "trace", message: format!("line {}: {e}", i + 1) }))
        .collect()
}

pub fn save(traces: &[InferenceTrace], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, encode(traces).as_bytes())
}

pub fn load(path: &Path) -> Result<Vec<TraceLine>> {
    decode(&fsutil::read_string(path)?).map_err(|e| SimError::format(path, e))
}
