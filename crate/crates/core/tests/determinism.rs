use std::path::PathBuf;

use protoalign::datasets::idx::{decode_images, encode_idx, load_digits, load_idx, parse_idx, write_idx};
use protoalign::datasets::gen_gaussian_shift;
use protoalign::trainer::Trainer;
use protoalign::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn task(seed: u64) -> (DomainDataset, UnlabeledDataset, LabelOracle) {
    let spec = SyntheticShiftSpec {
        per_class: 25,
        seed,
        ..Default::default()
    };
    let (s, t) = gen_gaussian_shift(&spec).unwrap();
    let (t, o) = t.into_unlabeled();
    (s, t, o.unwrap())
}

fn cfg() -> TrainConfig {
    TrainConfig {
        steps: 3,
        iters_per_step: 10,
        pretrain_epochs: 4,
        batch_size: 32,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn same_inputs_same_report_bytes() {
    let (s, t, o) = task(4);
    let a = trainer::run(&cfg(), &s, &t, Some(&o)).unwrap();
    let b = trainer::run(&cfg(), &s, &t, Some(&o)).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.write_all(dir_a.path()).unwrap();
    b.write_all(dir_b.path()).unwrap();
    for name in [
        "run_report.csv",
        "iterations.csv",
        "pretrain.csv",
        "selection_audit.csv",
        "prototype_trace.csv",
        "summary.json",
        "model_0.snap",
        "model_final.snap",
    ] {
        let x = std::fs::read(dir_a.path().join(name)).unwrap();
        let y = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let other = trainer::run(&cfg().with_seed(22), &s, &t, Some(&o)).unwrap();
    assert_ne!(a.iterations_csv(), other.iterations_csv());
}

#[test]
fn generators_are_seeded() {
    let spec = SyntheticShiftSpec::default();
    assert_eq!(gen_gaussian_shift(&spec).unwrap(), gen_gaussian_shift(&spec).unwrap());
}

#[test]
fn resume_from_snapshot_matches_unbroken_run() {
    let (s, t, o) = task(6);
    let c = cfg();
    let tr = Trainer::new(&c, &s, &t, Some(&o)).unwrap();
    let (snap0, _) = tr.pretrain_source().unwrap();
    let step1 = tr.adaptation_step(1, &snap0).unwrap();
    let unbroken = tr.adaptation_step(2, &step1.snapshot).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model_1.snap");
    step1.snapshot.save(&path).unwrap();
    let restored = ModelSnapshot::load(&path).unwrap();
    assert_eq!(restored.step, 1);

    // A fresh trainer, as after a process restart.
    let tr2 = Trainer::new(&c, &s, &t, Some(&o)).unwrap();
    let resumed = tr2.adaptation_step(2, &restored).unwrap();
    assert_eq!(resumed.iterations.len(), 10);
    for (a, b) in unbroken.iterations.iter().zip(&resumed.iterations) {
        assert!((a.total - b.total).abs() < 1e-12, "{a:?} vs {b:?}");
        assert!((a.l_c - b.l_c).abs() < 1e-12);
        assert!((a.l_d - b.l_d).abs() < 1e-12);
        assert!((a.l_apa - b.l_apa).abs() < 1e-12);
    }
    assert_eq!(unbroken.snapshot.to_bytes(), resumed.snapshot.to_bytes());
}

#[test]
fn idx_fixture_round_trips() {
    let bytes = std::fs::read(fixture("digits-3x3x4-images.idx3")).unwrap();
    let t = parse_idx(&bytes).unwrap();
    assert_eq!(t.dims, vec![3, 3, 4]);
    assert_eq!(encode_idx(&t), bytes);

    let x = decode_images(&t).unwrap();
    assert_eq!(x.shape(), (3, 12));
    assert_eq!(x.get(0, 1), 128.0 / 255.0);
    assert_eq!(x.get(0, 2), 1.0);
    assert_eq!(x.get(1, 9), 0.0);

    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.idx3");
    write_idx(&copy, &t).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), bytes);
    assert_eq!(load_idx(&copy).unwrap(), t);
}

#[test]
fn idx_pair_loads_as_labelled_domain() {
    let d = load_digits(
        fixture("digits-3x3x4-images.idx3"),
        fixture("digits-3-labels.idx1"),
        DomainTag::Source,
        None,
    )
    .unwrap();
    assert_eq!(d.labels().unwrap(), &[7, 0, 9]);
    assert_eq!(d.class_count, 10);
    assert_eq!(d.input_dim(), 12);
    let small = load_digits(
        fixture("digits-3x3x4-images.idx3"),
        fixture("digits-3-labels.idx1"),
        DomainTag::Target,
        Some((2, 2)),
    )
    .unwrap();
    assert_eq!(small.input_dim(), 4);
    // A constant image stays constant under resampling.
    for v in small.features.row(2) {
        assert!((v - 17.0 / 255.0).abs() < 1e-12);
    }
}

#[test]
fn truncated_idx_is_rejected() {
    let bytes = std::fs::read(fixture("digits-3x3x4-images.idx3")).unwrap();
    assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    assert!(parse_idx(&bytes[..10]).is_err());
}
