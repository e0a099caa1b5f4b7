use std::collections::BTreeMap;

use rffsb_core::attack::ScenarioConfig;
use rffsb_core::eval::*;
use rffsb_core::models::{Classifier, ClassifierConfig};
use rffsb_core::CoreError;
use rffsb_nn::Tensor;

/// Predicts class 0 when the mean of `relu(x)` exceeds 0.5, class 1 otherwise.
fn threshold_classifier() -> Classifier {
    let mut c = Classifier::<f32>::new(
        ClassifierConfig {
            in_channels: 1,
            input_len: 8,
            n_classes: 2,
            widths: vec![1],
            stem_kernel: 1,
            stem_stride: 1,
            batch_norm: false,
        },
        0,
    )
    .unwrap();
    let set = |c: &mut Classifier, name: &str, v: &[f32]| {
        let id = c.store.find(name).unwrap_or_else(|| panic!("{name}"));
        let shape = c.store.value(id).shape().to_vec();
        *c.store.value_mut(id) = Tensor::new(&shape, v.to_vec()).unwrap();
    };
    set(&mut c, "stem.weight", &[1.0]);
    set(&mut c, "stem.bias", &[0.0]);
    for p in ["block0.conv1", "block0.conv2"] {
        set(&mut c, &format!("{p}.weight"), &[0.0; 9][..3]);
        set(&mut c, &format!("{p}.bias"), &[0.0]);
    }
    set(&mut c, "head.weight", &[1.0, 0.0]);
    set(&mut c, "head.bias", &[0.0, 0.5]);
    c
}

#[test]
fn asr_counts_target_hits() {
    let c = threshold_classifier();
    let ones = vec![1.0f32; 8];
    let zeros = [0.0f32; 8];
    let all: Vec<&[f32]> = vec![&ones; 10].into_iter().map(|v| v.as_slice()).collect();
    assert_eq!(asr(&c, &all, 0).unwrap().asr, 1.0);
    assert_eq!(asr(&c, &all, 1).unwrap().asr, 0.0);
    let mut mixed: Vec<&[f32]> = vec![&ones[..]; 7];
    mixed.extend(vec![&zeros[..]; 3]);
    let cell = asr(&c, &mixed, 0).unwrap();
    assert_eq!((cell.hits, cell.n), (7, 10));
    assert!((cell.asr - 0.7).abs() < 1e-15);
    assert!(cell.ci_low < 0.7 && 0.7 < cell.ci_high);
    assert!(matches!(asr(&c, &[], 0), Err(CoreError::UndefinedMetric(_))));
    assert!(matches!(AsrCell::from_counts(0, 0), Err(CoreError::UndefinedMetric(_))));
}

#[test]
fn wilson_matches_reference_values() {
    // closed form at z = 1.96 for 7/10 and 0/10
    let (lo, hi) = wilson(7, 10);
    assert!((lo - 0.396_774).abs() < 1e-5, "{lo}");
    assert!((hi - 0.892_208).abs() < 1e-5, "{hi}");
    let (lo, hi) = wilson(0, 10);
    assert_eq!(lo, 0.0);
    assert!((hi - 0.277_533).abs() < 1e-5, "{hi}");
    let (lo, hi) = wilson(100, 100);
    assert!(hi > 0.999_999 && lo > 0.96);
}

#[test]
fn spearman_reference_cases() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert!((spearman(&x, &[0.1, 0.2, 0.5, 0.6, 0.9]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    // ties use average ranks: y ranks (1.5, 1.5, 3, 4, 5)
    let rho = spearman(&x, &[0.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
    let want = 9.5 / (10.0f64 * 9.5).sqrt();
    assert!((rho - want).abs() < 1e-12, "{rho} vs {want}");
    assert_eq!(spearman(&x, &[1.0; 5]), None);
    assert_eq!(spearman(&[1.0], &[2.0]), None);
}

#[test]
fn confusion_uses_the_classify_path() {
    let c = threshold_classifier();
    let samples = rffsb_core::dataset::Samples {
        frames: vec![],
        features: [vec![1.0f32; 8], vec![0.0; 8], vec![0.0; 8], vec![1.0; 8]].concat(),
        labels: vec![0, 0, 1, 1],
        frame_len: 0,
        feature_dim: 8,
    };
    let m = confusion(&c, &samples, 2).unwrap();
    assert_eq!(m.counts, vec![vec![1, 1], vec![1, 1]]);
    assert_eq!(m.accuracy(), 0.5);
    for (row, want) in m.counts.iter().zip(samples.counts(2)) {
        assert_eq!(row.iter().sum::<usize>(), want);
    }
    assert_eq!(m.to_csv(), "true\\pred,0,1\n0,1,1\n1,1,1\n");
}

#[test]
fn empty_report_is_valid_and_reemits_identically() {
    let cfg = ScenarioConfig::default();
    let names: Vec<String> = ["awgn", "indoor_a", "vehicular_a"].iter().map(|s| s.to_string()).collect();
    let mut report = EvalReport::new(&cfg);
    // no artifacts at all: every cell is listed as absent
    report.cross_channel = cross_channel_matrix(&BTreeMap::new(), &names[..2], &names, &cfg).unwrap();
    assert_eq!(report.cross_channel.len(), 6);
    assert!(report.cross_channel.iter().all(|c| c.result.is_none()));

    let a = tempfile::tempdir().unwrap();
    emit_report(&report, a.path()).unwrap();
    let csv = std::fs::read_to_string(a.path().join("asr_cross.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "train_profile,test_profile,mean_asr");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert_eq!(lines[1], "awgn,awgn,NA");
    assert_eq!(
        std::fs::read_to_string(a.path().join("sweep_ebn0.csv")).unwrap(),
        "profile,ebn0_db,mean_asr,target,asr,ci_low,ci_high\n"
    );
    let parsed: EvalReport = serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(parsed, report);

    let b = tempfile::tempdir().unwrap();
    emit_report(&parsed, b.path()).unwrap();
    for f in [
        "report.json",
        "asr_cross.csv",
        "sweep_ebn0.csv",
        "sweep_k.csv",
        "confusion.csv",
        "sweep_ebn0.dat",
        "sweep_k.dat",
        "confusion.dat",
    ] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unwritable_report_path_is_an_io_error() {
    let f = tempfile::NamedTempFile::new().unwrap();
    let r = emit_report(&EvalReport::new(&ScenarioConfig::default()), &f.path().join("sub"));
    assert!(matches!(r, Err(CoreError::Io { .. })));
}

#[test]
fn report_records_the_channel_convention() {
    let r = EvalReport::new(&ScenarioConfig::default());
    assert!(r.channel_convention.contains_key("colluder_path"));
    assert!(r.channel_convention.contains_key("receiver_path"));
    assert_eq!(r.scenario["master_seed"], 20240501);
}
