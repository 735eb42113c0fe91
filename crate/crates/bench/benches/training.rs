use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use protoalign::apa::{init_global, RhoMode};
use protoalign::ehts::{assign_pseudo_labels, compute_prototypes, select_easy, similarity_scores, threshold, Provenance};
use protoalign::trainer::{total_loss, Alignment, CompositeBatch, DomainGrad, LossWeights, Trainer};
use protoalign_bench::{config, gaussian_task, model, normal_matrix};
use std::hint::black_box;

fn selection(c: &mut Criterion) {
    let feats_s = normal_matrix(1000, 64, 1);
    let feats_t = normal_matrix(1000, 64, 2);
    let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    let protos = compute_prototypes(&feats_s, &labels, 10, Provenance::Source).unwrap();
    c.bench_function("similarity_scores 1000x64 vs 10", |b| {
        b.iter(|| similarity_scores(black_box(&feats_t), &protos).unwrap())
    });
    let scores = similarity_scores(&feats_t, &protos).unwrap();
    c.bench_function("assign and select 1000", |b| {
        b.iter(|| {
            let (y, s) = assign_pseudo_labels(black_box(&scores)).unwrap();
            select_easy(&y, &s, threshold(3, 0.75), 3)
        })
    });
}

fn composite(c: &mut Criterion) {
    let task = gaussian_task(100, 0);
    let m = model(2, 4, 0);
    let labels = task.source.labels().unwrap();
    let xs = task.source.features.select_rows(&(0..32).collect::<Vec<_>>());
    let xt = task.target.features.select_rows(&(0..32).collect::<Vec<_>>());
    let ys = &labels[..32];
    let yt: Vec<usize> = (0..32).map(|i| i % 4).collect();
    let fs = m.forward_features(&task.source.features).unwrap();
    let ft = m.forward_features(&task.target.features).unwrap();
    let yt_all: Vec<usize> = (0..ft.rows()).map(|i| i % 4).collect();
    let state = init_global(&fs, labels, &ft, &yt_all, 4, RhoMode::PerClass).unwrap();
    let batch = CompositeBatch {
        source_x: &xs,
        source_y: ys,
        target_x: &xt,
        target_pseudo: &yt,
        domain_x: None,
    };
    let w = LossWeights {
        temperature: 1.8,
        lambda: 0.5,
        gamma: 0.5,
    };
    c.bench_function("total_loss forward+backward, batch 32", |b| {
        b.iter_batched(
            || (m.clone(), state.clone()),
            |(mut m, mut st)| total_loss(&mut m, &batch, Alignment::Global(&mut st), w, DomainGrad::Reversed).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn stages(c: &mut Criterion) {
    let task = gaussian_task(100, 0);
    let mut cfg = config(0);
    cfg.pretrain_epochs = 10;
    let trainer = Trainer::new(&cfg, &task.source, &task.target, Some(&task.oracle)).unwrap();
    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    group.bench_function("pretrain 10 epochs, 400 points", |b| b.iter(|| trainer.pretrain_source().unwrap()));
    let (snap, _) = trainer.pretrain_source().unwrap();
    group.bench_function("one adaptation step, 400+400 points", |b| {
        b.iter(|| trainer.adaptation_step(1, black_box(&snap)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, selection, composite, stages);
criterion_main!(benches);
