mod common;

use multisense_core::models::{Hyper, TrainingSet};
use multisense_core::synth::SensorSource;
use multisense_core::{fit_classifier, Classifier, DeviceId, ModelId, SensorWindow, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two classes whose window level is N(-3, 1) or N(+3, 1): six standard
/// deviations apart in the mean feature, identical in the others.
fn separated(n_per_class: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let class = i % 2;
        let level = if class == 0 { -3.0 } else { 3.0 } + rng.sample::<f64, _>(StandardNormal);
        let samples: Vec<f64> = (0..50).map(|_| level + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
        windows.push(SensorWindow::new(DeviceId(0), i as f64, 1.0, 50.0, 1, samples).unwrap());
        labels.push(class);
    }
    TrainingSet::new(2, windows, labels).unwrap()
}

fn accuracy(c: &Classifier, windows: &[SensorWindow], labels: &[usize]) -> f64 {
    let hits = windows.iter().zip(labels).filter(|(w, &y)| c.infer(w).unwrap().argmax() == y).count();
    hits as f64 / labels.len() as f64
}

#[test]
fn well_separated_classes_are_learned() {
    let set = separated(1_000, 1);
    for variant in [Variant::Gaussian, Variant::Logistic] {
        let c = fit_classifier(ModelId(0), &set, variant, &Hyper::default()).unwrap();
        let acc = accuracy(&c, set.windows(), set.labels());
        assert!(acc >= 0.99, "{variant:?} training accuracy {acc}");
    }
}

#[test]
fn fitting_is_deterministic() {
    let set = separated(200, 2);
    for variant in [Variant::Gaussian, Variant::Logistic] {
        let a = fit_classifier(ModelId(3), &set, variant, &Hyper::default()).unwrap();
        let b = fit_classifier(ModelId(3), &set, variant, &Hyper::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn beats_uniform_guessing_on_training_set() {
    let s = common::small_scenario(60.0, 1.0, 5);
    let n = s.source.n_windows();
    let windows = s.source.windows(DeviceId(0), 0..n).unwrap();
    let acc = accuracy(&s.classifier, &windows, s.labels());
    assert!(acc > 1.0 / 8.0, "accuracy {acc}");
}

#[test]
fn foreign_device_is_worse_than_training_device() {
    // whole quality periods, so every device sees the same quality mix
    let (mut native, mut foreign) = (0.0, [0.0; 2]);
    for seed in 0..3 {
        let s = common::small_scenario(1_000.0, 1.0, seed);
        let n = s.source.n_windows();
        native += accuracy(&s.classifier, &s.source.windows(DeviceId(0), 0..n).unwrap(), s.labels());
        for d in [1u16, 2] {
            foreign[d as usize - 1] += accuracy(&s.classifier, &s.source.windows(DeviceId(d), 0..n).unwrap(), s.labels());
        }
    }
    for (d, f) in foreign.iter().enumerate() {
        assert!(*f < native, "D{}: {f} vs {native}", d + 1);
    }
}

#[test]
fn posteriors_are_normalized_on_world_windows() {
    let s = common::small_scenario(400.0, 1.0, 8);
    let mut count = 0;
    for d in s.devices() {
        for i in 0..s.source.n_windows() {
            if count == 1_000 {
                return;
            }
            let p = s.classifier.infer(&s.source.window(d, i).unwrap()).unwrap();
            let sum: f64 = p.probs().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
            count += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posteriors_are_normalized_on_arbitrary_windows(
        samples in prop::collection::vec(-1.0e3f64..1.0e3, 50),
        logistic in any::<bool>(),
    ) {
        let set = separated(50, 3);
        let variant = if logistic { Variant::Logistic } else { Variant::Gaussian };
        let c = fit_classifier(ModelId(0), &set, variant, &Hyper::default()).unwrap();
        let w = SensorWindow::new(DeviceId(0), 0.0, 1.0, 50.0, 1, samples).unwrap();
        let p = c.infer(&w).unwrap();
        let sum: f64 = p.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(p.probs().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
