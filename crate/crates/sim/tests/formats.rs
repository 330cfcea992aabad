use multisense::error::FormatError;
use multisense::{archive, artifacts, cli, trace, ExperimentConfig, SimError};
use multisense_core::evaluation::{run_strategy, Scenario};
use multisense_core::synth::SensorSource;
use multisense_core::{fit_alignment, AlignmentMode, DeviceId, SensorWindow, Strategy, Variant};
use proptest::prelude::*;
use tempfile::TempDir;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.seeds = vec![3];
    cfg.scenario.variant = Variant::Gaussian;
    cfg.scenario.train_secs = 600.0;
    cfg.scenario.calibration_windows = 120;
    cfg.scenario.eval_secs = 100.0;
    cfg
}

fn scenario(cfg: &ExperimentConfig) -> Scenario {
    Scenario::build(&cfg.scenario, &cfg.policy, 1.0, 3).unwrap()
}

#[test]
fn dataset_survives_disk() {
    let dir = TempDir::new().unwrap();
    let ds = cli::generate(&small()).unwrap();
    let path = dir.path().join("d.msds");
    archive::save(&ds, &path).unwrap();
    assert_eq!(archive::load(&path).unwrap(), ds);
}

#[test]
fn dataset_truncation_and_version_errors() {
    let ds = cli::generate(&small()).unwrap();
    let bytes = archive::encode(&ds).unwrap();
    for cut in [2, 7, 11, 40, bytes.len() - 1] {
        match archive::decode(&bytes[..cut]) {
            Err(FormatError::Truncated { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut v2 = bytes.clone();
    v2[4] = 2;
    let err = archive::decode(&v2).unwrap_err();
    assert!(matches!(err, FormatError::UnsupportedVersion { found: 2, supported: 1, .. }), "{err}");
    assert!(err.to_string().contains("version 2"));
}

#[test]
fn saved_model_infers_bit_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = small();
    let s = scenario(&cfg);
    let path = dir.path().join("m.json");
    artifacts::save_model(&s.classifier, &path).unwrap();
    let loaded = artifacts::load_model(&path).unwrap();
    assert_eq!(loaded, s.classifier);
    for i in 0..100 {
        let w = s.source.window(DeviceId((i % 3) as u16), i).unwrap();
        let a = s.classifier.infer(&w).unwrap();
        let b = loaded.infer(&w).unwrap();
        let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.probs()), bits(b.probs()), "probe {i}");
    }
}

#[test]
fn saved_operator_round_trips() {
    let dir = TempDir::new().unwrap();
    let ds = cli::generate(&small()).unwrap();
    let src: Vec<SensorWindow> = (0..ds.n_windows()).map(|i| ds.window(DeviceId(1), i).unwrap()).collect();
    let tgt: Vec<SensorWindow> = (0..ds.n_windows()).map(|i| ds.window(DeviceId(0), i).unwrap()).collect();
    for mode in [AlignmentMode::Diagonal, AlignmentMode::Full] {
        let op = fit_alignment(&src, &tgt, mode, &Default::default()).unwrap();
        let path = dir.path().join("op.json");
        artifacts::save_operator(&op, &path).unwrap();
        assert_eq!(artifacts::load_operator(&path).unwrap(), op);
    }
}

#[test]
fn corrupted_model_is_a_parse_error() {
    let s = scenario(&small());
    let text = artifacts::encode_model(&s.classifier).unwrap();
    let cut = &text[..text.len() / 2];
    assert!(matches!(artifacts::decode_model(cut), Err(FormatError::Parse { .. })));
    let wrong = text.replace("multisense-model", "multisense-operator");
    assert!(matches!(artifacts::decode_model(&wrong), Err(FormatError::WrongKind { .. })));
}

#[test]
fn wrong_channel_count_is_rejected_on_infer() {
    let s = scenario(&small());
    let w = SensorWindow::new(DeviceId(0), 0.0, 1.0, 50.0, 4, vec![0.0; 200]).unwrap();
    let err = s.classifier.infer(&w).unwrap_err();
    assert!(matches!(err, multisense_core::Error::ChannelMismatch { expected: 6, got: 4 }), "{err}");
}

#[test]
fn model_from_wrong_device_is_refused() {
    let mut cfg = small();
    let s = scenario(&cfg);
    cfg.scenario.training_device = DeviceId(1);
    let err = multisense::experiment::simulate(&cfg, Some(s.classifier), Vec::new()).unwrap_err();
    assert!(matches!(err, SimError::Config { .. }), "{err}");
}

#[test]
fn trace_lines_mirror_records() {
    let cfg = small();
    let s = scenario(&cfg);
    let out = run_strategy(Strategy::Full, &s, &cfg.policy).unwrap();
    let text = trace::encode(&out.traces);
    let lines = trace::decode(&text).unwrap();
    assert_eq!(lines.len(), out.traces[0].records.len());
    for (l, r) in lines.iter().zip(&out.traces[0].records) {
        assert_eq!(l.predicted_class, r.predicted_class);
        assert_eq!(l.selected_device, r.selected_device.map(|d| d.0));
        assert_eq!(l.margins.is_some(), r.assessed);
    }
    assert!(trace::decode("{\"time\": 1.0}\n").is_err());
}

#[test]
fn missing_files_name_the_path() {
    let err = archive::load("does/not/exist.msds".as_ref()).unwrap_err();
    assert_eq!(err.kind(), "not-found");
    assert!(err.to_string().contains("does/not/exist.msds"));
    let line: serde_json::Value = serde_json::from_str(&err.to_json_line()).unwrap();
    assert_eq!(line["path"], "does/not/exist.msds");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Arbitrary bytes never panic the decoder.
    #[test]
    fn decoder_rejects_garbage_gracefully(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = archive::decode(&bytes);
        let mut framed = b"MSDS\x01\x00\x00\x00".to_vec();
        framed.extend_from_slice(&bytes);
        prop_assert!(archive::decode(&framed).is_err());
    }
}
