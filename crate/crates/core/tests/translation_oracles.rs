use multisense_core::synth::{LiveWorld, QualityProcess};
use multisense_core::translation::{alignment_distance, apply, diagnose, pooled_moments, FitOptions};
use multisense_core::{fit_alignment, AlignmentMode, DeviceId, DeviceProfile, SensorWindow, World, WorldConfig};
use proptest::prelude::*;

fn profile(id: u16, gain: f64, bias: f64, noise: f64) -> DeviceProfile {
    DeviceProfile {
        id: DeviceId(id),
        gain: vec![gain; 6],
        bias: vec![bias; 6],
        noise_std: vec![noise; 6],
        quality: QualityProcess::CONSTANT,
    }
}

/// Target device 0 and a source device 1 that records `gain * x + bias` of
/// the same activity.
fn pair(windows: usize, gain: f64, bias: f64, noise: f64, seed: u64) -> (Vec<SensorWindow>, Vec<SensorWindow>) {
    let world = World::new(WorldConfig::default(), seed).unwrap();
    let trace = world.generate_latent(windows as f64, seed + 100).unwrap();
    let live = LiveWorld::new(trace, vec![profile(0, 1.0, 0.0, noise), profile(1, gain, bias, noise * gain)]).unwrap();
    (live.windows(DeviceId(1), 0..windows).unwrap(), live.windows(DeviceId(0), 0..windows).unwrap())
}

#[test]
fn diagonal_fit_recovers_inverse_channel() {
    let (src, tgt) = pair(10_000, 2.0, 1.0, 0.3, 1);
    let op = fit_alignment(&src, &tgt, AlignmentMode::Diagonal, &FitOptions::default()).unwrap();
    for (s, h) in op.scale().iter().zip(op.shift()) {
        assert!((s - 0.5).abs() <= 1e-2, "scale {s}");
        assert!((h + 0.5).abs() <= 1e-2, "shift {h}");
    }
}

#[test]
fn diagonal_fit_matches_target_moments_on_fitting_set() {
    let (src, tgt) = pair(300, 1.7, -0.4, 0.5, 2);
    let op = fit_alignment(&src, &tgt, AlignmentMode::Diagonal, &FitOptions::default()).unwrap();
    let moved: Vec<SensorWindow> = src.iter().map(|w| apply(&op, w).unwrap()).collect();
    let a = pooled_moments(&moved).unwrap();
    let b = pooled_moments(&tgt).unwrap();
    for c in 0..6 {
        assert!((a.mean[c] - b.mean[c]).abs() <= 1e-9, "channel {c} mean {} vs {}", a.mean[c], b.mean[c]);
        assert!((a.variance(c) - b.variance(c)).abs() <= 1e-9 * b.variance(c).max(1.0));
    }
}

#[test]
fn full_fit_matches_target_covariance() {
    let (src, tgt) = pair(400, 1.3, 0.2, 0.4, 3);
    let op = fit_alignment(&src, &tgt, AlignmentMode::Full, &FitOptions::default()).unwrap();
    let moved: Vec<SensorWindow> = src.iter().map(|w| apply(&op, w).unwrap()).collect();
    let a = pooled_moments(&moved).unwrap();
    let b = pooled_moments(&tgt).unwrap();
    let scale = b.cov.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for (x, y) in a.cov.iter().zip(&b.cov) {
        assert!((x - y).abs() <= 1e-4 * scale, "{x} vs {y}");
    }
}

#[test]
fn self_fit_is_identity() {
    let (_, tgt) = pair(200, 1.0, 0.0, 0.2, 4);
    for mode in [AlignmentMode::Diagonal, AlignmentMode::Full] {
        // relabel a copy as a different device so the fit actually runs
        let src: Vec<SensorWindow> = tgt.iter().map(|w| SensorWindow { device: DeviceId(7), ..w.clone() }).collect();
        let op = fit_alignment(&src, &tgt, mode, &FitOptions::default()).unwrap();
        let c = op.channels;
        for i in 0..c {
            for j in 0..c {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((op.linear[i * c + j] - expect).abs() < 1e-6, "{mode:?} A[{i},{j}] = {}", op.linear[i * c + j]);
            }
            assert!(op.offset[i].abs() < 1e-6, "{mode:?} offset {}", op.offset[i]);
        }
    }
}

#[test]
fn translation_shrinks_held_out_distance() {
    let world = World::new(WorldConfig::default(), 9).unwrap();
    let profiles = vec![profile(0, 1.0, 0.0, 0.3), {
        let mut p = profile(1, 1.0, 0.0, 0.3);
        p.gain = vec![1.6, 0.6, 1.2, 0.8, 1.4, 0.7];
        p.bias = vec![0.6, -0.3, 0.2, -0.5, 0.1, 0.3];
        p
    }];
    let fit_world = LiveWorld::new(world.generate_latent(500.0, 1).unwrap(), profiles.clone()).unwrap();
    let held = LiveWorld::new(world.generate_latent(1_000.0, 2).unwrap(), profiles).unwrap();
    let op = fit_alignment(
        &fit_world.windows(DeviceId(1), 0..500).unwrap(),
        &fit_world.windows(DeviceId(0), 0..500).unwrap(),
        AlignmentMode::Diagonal,
        &FitOptions::default(),
    )
    .unwrap();
    let src = held.windows(DeviceId(1), 0..1_000).unwrap();
    let tgt = held.windows(DeviceId(0), 0..1_000).unwrap();
    let d = diagnose(&op, &src, &tgt).unwrap();
    assert!(d.post_distance < d.pre_distance, "{d:?}");
    assert!(d.post_distance < 0.1 * d.pre_distance, "{d:?}");
}

fn windows_from(values: &[Vec<f64>], device: u16) -> Vec<SensorWindow> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| SensorWindow::new(DeviceId(device), i as f64, 1.0, v.len() as f64, 1, v.clone()).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric(
        a in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..12),
        b in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..12),
    ) {
        let wa = windows_from(&a, 0);
        let wb = windows_from(&b, 1);
        let ab = alignment_distance(&wa, &wb).unwrap();
        let ba = alignment_distance(&wb, &wa).unwrap();
        prop_assert!(ab.is_finite() && ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(alignment_distance(&wa, &wa).unwrap().abs() < 1e-9);
    }
}
