//! Runs scenarios described by an [`ExperimentConfig`].

use multisense_core::evaluation::{run_strategy, segment_f1, Scenario};
use multisense_core::{InferenceTrace, TranslationOperator};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Result, SimError};
use crate::report::ReportRow;

/// Segment length of the per-minute F1 column.
pub const MINUTE_SECS: f64 = 60.0;

fn minute_f1(traces: &[InferenceTrace]) -> Result<f64> {
    let mut total = 0.0;
    for t in traces {
        let seg = segment_f1(t, MINUTE_SECS)?;
        total += seg.iter().sum::<f64>() / seg.len().max(1) as f64;
    }
    Ok(total / traces.len().max(1) as f64)
}

/// Every configured strategy on the scenario drawn from `(p, seed)`.
pub fn run_cell(cfg: &ExperimentConfig, p: f64, seed: u64) -> Result<Vec<ReportRow>> {
    let scenario = Scenario::build(&cfg.scenario, &cfg.policy, p, seed)?;
    cfg.strategies
        .iter()
        .map(|&s| {
            let out = run_strategy(s, &scenario, &cfg.policy)?;
            let r = out.report;
            Ok(ReportRow {
                strategy: r.strategy,
                p,
                seed,
                micro_f1: r.micro_f1,
                devices: r.devices,
                selection_ratio: r.selection_ratio,
                assessment_count: r.assessment_count,
                execution_count: r.model_execution_count,
                minute_f1: minute_f1(&out.traces)?,
            })
        })
        .collect()
}

/// The full availability × seed × strategy grid. Cells run in parallel;
/// rows come back ordered by p, then seed, then strategy as configured.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let cells: Vec<(f64, u64)> = cfg.availability.iter().flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
    let rows: Vec<Vec<ReportRow>> = cells.par_iter().map(|&(p, seed)| run_cell(cfg, p, seed)).collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Traces of the configured `simulate` run. A model file replaces the
/// scenario's own classifier; operator files are installed ahead of fitting.
pub fn simulate(
    cfg: &ExperimentConfig,
    model: Option<multisense_core::Classifier>,
    operators: Vec<TranslationOperator>,
) -> Result<Vec<InferenceTrace>> {
    cfg.validate()?;
    let sim = &cfg.simulate;
    let mut scenario = Scenario::build(&cfg.scenario, &cfg.policy, sim.availability, sim.seed)?;
    if let Some(c) = model {
        if c.training_device() != cfg.scenario.training_device {
            return Err(SimError::config(
                "scenario.training_device",
                format!("model was trained on {} but the scenario trains on {}", c.training_device(), cfg.scenario.training_device),
            ));
        }
        if c.classes() != cfg.scenario.world.classes || c.feature_spec().channels != cfg.scenario.world.channels {
            return Err(SimError::config("simulate.model", "model class or channel count differs from scenario.world"));
        }
        scenario.classifier = c;
    }
    scenario.operators = operators;
    Ok(run_strategy(sim.strategy, &scenario, &cfg.policy)?.traces)
}
