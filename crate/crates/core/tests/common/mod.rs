//! Small, fast scenarios shared by the integration tests.

#![allow(dead_code)]

use multisense_core::evaluation::{Scenario, ScenarioConfig};
use multisense_core::synth::SensorSource;
use multisense_core::{DeviceId, Result, SelectionPolicy, SensorWindow, Variant};

/// The reference devices over a short horizon, with the closed-form
/// Gaussian classifier so setup stays cheap.
pub fn small_config(eval_secs: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference();
    cfg.variant = Variant::Gaussian;
    cfg.train_secs = 600.0;
    cfg.calibration_windows = 120;
    cfg.eval_secs = eval_secs;
    cfg
}

pub fn small_scenario(eval_secs: f64, p: f64, seed: u64) -> Scenario {
    Scenario::build(&small_config(eval_secs), &SelectionPolicy::default(), p, seed).expect("scenario builds")
}

/// Exposes only the first `n` windows of another source.
pub struct Prefix<'a> {
    pub inner: &'a dyn SensorSource,
    pub n: usize,
}

impl SensorSource for Prefix<'_> {
    fn window_secs(&self) -> f64 {
        self.inner.window_secs()
    }
    fn n_windows(&self) -> usize {
        self.n.min(self.inner.n_windows())
    }
    fn devices(&self) -> Vec<DeviceId> {
        self.inner.devices()
    }
    fn label(&self, index: usize) -> Option<usize> {
        (index < self.n).then(|| self.inner.label(index)).flatten()
    }
    fn window(&self, device: DeviceId, index: usize) -> Result<SensorWindow> {
        self.inner.window(device, index)
    }
}
