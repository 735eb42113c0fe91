use protoalign::apa::{init_global, RhoMode};
use protoalign::datasets::gen_gaussian_shift;
use protoalign::ehts::threshold;
use protoalign::model::ModelConfig;
use protoalign::numerics::{grad_check_with, GradCheckOptions};
use protoalign::trainer::{
    lr_schedule, total_loss, Alignment, CompositeBatch, DomainGrad, DomainLossTarget, LossWeights,
    SelectionPolicy,
};
use protoalign::*;

fn points(n: usize, seed: u64, shift: f64) -> Matrix {
    let mut r = Rng::new(seed);
    Matrix::from_vec(n, 3, (0..3 * n).map(|_| r.normal() + shift).collect()).unwrap()
}

fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        input_dim: 3,
        hidden_dims: vec![6],
        feature_dim: 5,
        class_count: 3,
        disc_hidden: 4,
        temperature: 1.8,
    };
    Model::new(&cfg, &mut Rng::new(seed)).unwrap()
}

fn check_composite(domain_x: Option<&Matrix>) {
    let model = small_model(11);
    let xs = points(4, 1, 0.0);
    let xt = points(4, 2, 0.8);
    let ys = [0, 1, 2, 1];
    let yt = [0, 2, 1, 1];
    let feats_s = model.forward_features(&xs).unwrap();
    let feats_t = model.forward_features(&xt).unwrap();
    // Globals from a wider pool so the blend has something to move toward.
    let pool_s = Matrix::vstack(&[&feats_s, &model.forward_features(&points(6, 3, 0.0)).unwrap()]).unwrap();
    let pool_t = Matrix::vstack(&[&feats_t, &model.forward_features(&points(6, 4, 0.8)).unwrap()]).unwrap();
    let state = init_global(
        &pool_s,
        &[0, 1, 2, 1, 0, 1, 2, 0, 1, 2],
        &pool_t,
        &[0, 2, 1, 1, 2, 1, 0, 0, 2, 1],
        3,
        RhoMode::PerClass,
    )
    .unwrap();
    let w = LossWeights {
        temperature: 1.8,
        lambda: 0.6,
        gamma: 0.8,
    };
    let batch = CompositeBatch {
        source_x: &xs,
        source_y: &ys,
        target_x: &xt,
        target_pseudo: &yt,
        domain_x,
    };
    let eval = |m: &mut Model| {
        let mut st = state.clone();
        total_loss(m, &batch, Alignment::Global(&mut st), w, DomainGrad::Descent)
            .unwrap()
            .total
    };
    let mut m = model.clone();
    m.zero_grad();
    eval(&mut m);
    let report = grad_check_with(
        |theta: &[f64]| {
            let mut mm = model.clone();
            mm.set_flat_params(theta).unwrap();
            eval(&mut mm)
        },
        &model.flat_params(),
        &m.flat_grads(),
        GradCheckOptions::default(),
    );
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.excluded.len() < report.checked / 10, "{report:?}");
}

#[test]
fn composite_gradient_with_global_alignment() {
    check_composite(None);
}

#[test]
fn composite_gradient_with_separate_domain_rows() {
    check_composite(Some(&points(4, 9, 1.5)));
}

#[test]
fn threshold_matches_logistic_form() {
    for m in 0..=10u64 {
        let e = (0.8 * (m as f64 + 1.0)).exp();
        assert!((threshold(m, 0.8) - (e / (1.0 + e) - 0.01)).abs() < 1e-12);
    }
    assert!((threshold(0, 0.8) - 0.679974).abs() < 1e-6);
    assert!((threshold(10_000, 0.8) - 0.99).abs() < 1e-12);
}

#[test]
fn lr_hand_values() {
    let cfg = TrainConfig::default();
    // 0.01 / 11^0.75 = 0.01 / e^(0.75·ln 11)
    let by_hand = 0.01 / (0.75 * 11f64.ln()).exp();
    assert!((lr_schedule(1.0, &cfg) - by_hand).abs() < 1e-15);
    assert!((by_hand - 0.0016556).abs() < 1e-7);
}

fn task() -> (DomainDataset, UnlabeledDataset, LabelOracle) {
    let spec = SyntheticShiftSpec {
        per_class: 15,
        seed: 5,
        ..Default::default()
    };
    let (s, t) = gen_gaussian_shift(&spec).unwrap();
    let (t, o) = t.into_unlabeled();
    (s, t, o.unwrap())
}

fn cfg() -> TrainConfig {
    TrainConfig {
        steps: 2,
        iters_per_step: 4,
        pretrain_epochs: 2,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    }
}

fn run_csvs(cfg: &TrainConfig) -> (String, String, String) {
    let (s, t, o) = task();
    let r = trainer::run(cfg, &s, &t, Some(&o)).unwrap();
    (r.steps_csv(), r.iterations_csv(), r.audit_csv())
}

#[test]
fn variants_are_pure_toggles() {
    let base = cfg();
    assert_eq!(
        run_csvs(&base.clone().with_variant(Variant::WoApa)),
        run_csvs(&TrainConfig { gamma_max: 0.0, ..base.clone() })
    );
    assert_eq!(
        run_csvs(&base.clone().with_variant(Variant::WoT)),
        run_csvs(&TrainConfig { temperature: 1.0, ..base.clone() })
    );
    assert_eq!(
        run_csvs(&base.clone().with_variant(Variant::Random)),
        run_csvs(&TrainConfig { selection: SelectionPolicy::Random, ..base.clone() })
    );
    assert_ne!(run_csvs(&base), run_csvs(&base.clone().with_variant(Variant::WoApa)));
}

#[test]
fn full_domain_target_changes_only_the_discriminator_rows() {
    let base = cfg();
    let full = TrainConfig { domain_loss_target: DomainLossTarget::Full, ..base.clone() };
    let a = run_csvs(&base);
    let b = run_csvs(&full);
    // Selection at step 1 comes from the same pretrained model.
    assert_eq!(a.2.lines().nth(1), b.2.lines().nth(1));
    assert_ne!(a.1, b.1);
}

#[test]
fn logged_schedules_match_closed_forms() {
    let (s, t, o) = task();
    let c = cfg();
    let r = trainer::run(&c, &s, &t, Some(&o)).unwrap();
    let total = (c.steps * c.iters_per_step as u64) as f64;
    for it in &r.iterations {
        let p = it.iter as f64 / total;
        assert_eq!(it.p, p);
        assert!((it.lr - 0.01 / (1.0 + 10.0 * p).powf(0.75)).abs() < 1e-12);
        let ramp = 2.0 / (1.0 + (-10.0 * p).exp()) - 1.0;
        assert!((it.lambda - ramp).abs() < 1e-12);
        assert!((it.gamma - ramp).abs() < 1e-12);
    }
}
