use multisense_core::synth::{observe, sample_availability, QualityProcess, WorkloadConfig};
use multisense_core::{DeviceId, DeviceProfile, World, WorldConfig};

/// A non-uniform, weakly sticky 8-state chain.
fn chain() -> Vec<Vec<f64>> {
    let k = 8;
    (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| 1.0 + ((i * 3 + j * 5) % 7) as f64).collect();
            row[i] += 4.0;
            let s: f64 = row.iter().sum();
            row.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Stationary distribution by power iteration.
fn stationary(t: &[Vec<f64>]) -> Vec<f64> {
    let k = t.len();
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..10_000 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += pi[i] * t[i][j];
            }
        }
        pi = next;
    }
    pi
}

#[test]
fn label_histogram_tracks_stationary_distribution() {
    let t = chain();
    let pi = stationary(&t);
    let spread = pi.iter().cloned().fold(0.0, f64::max) - pi.iter().cloned().fold(1.0, f64::min);
    assert!(spread > 0.02, "chain should be visibly non-uniform, spread {spread}");
    let world = World::new(WorldConfig { classes: 8, transition: Some(t), ..WorldConfig::default() }, 11).unwrap();
    for seed in 0..5 {
        let trace = world.generate_latent(600.0, seed).unwrap();
        assert_eq!(trace.n_windows(), 600);
        let mut hist = [0.0; 8];
        for &y in &trace.labels {
            hist[y] += 1.0 / 600.0;
        }
        for (k, (h, p)) in hist.iter().zip(&pi).enumerate() {
            assert!((h - p).abs() <= 0.10, "seed {seed} class {k}: {h} vs {p}");
        }
    }
}

#[test]
fn observation_noise_has_configured_std() {
    let world = World::new(WorldConfig { classes: 3, channels: 1, ..WorldConfig::default() }, 5).unwrap();
    let trace = world.generate_latent(200.0, 6).unwrap();
    let profile =
        DeviceProfile { id: DeviceId(0), gain: vec![1.0], bias: vec![0.0], noise_std: vec![0.1], quality: QualityProcess::CONSTANT };
    let mut residuals = Vec::new();
    for i in 0..trace.n_windows() {
        let w = observe(&trace, &profile, i).unwrap();
        residuals.extend(w.samples.iter().zip(trace.base_window(i)).map(|(s, b)| s - b));
    }
    assert_eq!(residuals.len(), 10_000);
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.097..=0.103).contains(&std), "residual std {std}");
}

#[test]
fn affine_profile_maps_base_exactly() {
    let world = World::new(WorldConfig::default(), 1).unwrap();
    let trace = world.generate_latent(3.0, 2).unwrap();
    let g = vec![2.0, -1.0, 0.5, 1.0, 3.0, 1.5];
    let b = vec![1.0, 0.0, -2.0, 0.25, 0.0, -1.0];
    let profile =
        DeviceProfile { id: DeviceId(4), gain: g.clone(), bias: b.clone(), noise_std: vec![0.0; 6], quality: QualityProcess::CONSTANT };
    let w = observe(&trace, &profile, 2).unwrap();
    let len = trace.samples_per_window;
    for (i, (s, x)) in w.samples.iter().zip(trace.base_window(2)).enumerate() {
        let c = i / len;
        assert_eq!(*s, g[c] * x + b[c]);
    }
}

fn schedule_stats(p: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let devices = [DeviceId(0), DeviceId(1), DeviceId(2)];
    let epochs = 10_000;
    let cfg = WorkloadConfig::with_probability(p, seed, epochs as f64 * 10.0);
    let s = sample_availability(&cfg, &devices, 10.0).unwrap();
    assert_eq!(s.epochs(), epochs);
    let marginals = s.available.iter().map(|row| row.iter().filter(|&&a| a).count() as f64 / epochs as f64).collect();
    let mut by_count = vec![0usize; 4];
    for e in 0..epochs {
        by_count[s.up_count(e)] += 1;
    }
    (marginals, by_count)
}

#[test]
fn availability_matches_binomial() {
    let (marginals, by_count) = schedule_stats(0.7, 42);
    let n = 10_000.0;
    for m in &marginals {
        assert!((m - 0.7).abs() <= 0.01, "marginal {m}");
    }
    let two_or_more = (by_count[2] + by_count[3]) as f64 / n;
    assert!((two_or_more - 0.784).abs() <= 0.01, "P(>=2 up) {two_or_more}");
    let none = by_count[0] as f64 / n;
    assert!((none - 0.027).abs() <= 0.005, "P(0 up) {none}");
}

#[test]
fn availability_is_seeded() {
    let a = schedule_stats(0.8, 3);
    assert_eq!(a, schedule_stats(0.8, 3));
    assert_ne!(a, schedule_stats(0.8, 4));
}
