use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use log::info;
use protoalign::ehts::{select_easy, threshold};
use protoalign::eval::{
    ablation_table, embedding_labels, export_embedding_2d, proxy_a_distance_multi, pseudo_label_accuracy,
    MetricsLog, MetricsRecord,
};
use protoalign::trainer::{EpochRecord, Trainer};
use protoalign::datasets::{gen_gaussian_shift, gen_two_moons_shift};
use protoalign::{DomainDataset, DomainTag, Matrix, ModelSnapshot, RunReport, Variant};
use serde::Serialize;

use crate::data::{evaluation_data, training_data};
use crate::exit::DataError;
use crate::manifest::{DataSpec, Manifest};
use crate::output::{dataset_csv, labels_csv, source_csv, StagedDir};

pub fn gen_data(m: &Manifest, out: &Path) -> anyhow::Result<PathBuf> {
    let dir = StagedDir::begin(out.join("data"), m)?;
    // Synthetic targets are generated here, so their labels can be stored
    // for evaluation. IDX target labels stay where they are.
    let (source, target) = match &m.data {
        DataSpec::Gaussian(spec) => gen_gaussian_shift(spec)?,
        DataSpec::Moons(spec) => gen_two_moons_shift(spec)?,
        DataSpec::Idx(_) => {
            let d = training_data(m)?;
            let t = DomainDataset::new(d.target.features, None, DomainTag::Target, d.target.class_count)?;
            (d.source, t)
        }
    };
    dir.write("source.csv", source_csv(&source))?;
    dir.write("target.csv", dataset_csv(&target.features, None))?;
    if let Some(labels) = target.labels() {
        dir.write("target_labels.csv", labels_csv(labels))?;
    }
    #[derive(Serialize)]
    struct Provenance<'a> {
        generator: &'static str,
        version: &'static str,
        seed: u64,
        data: &'a DataSpec,
        source_rows: usize,
        target_rows: usize,
        input_dim: usize,
        class_count: usize,
    }
    let p = Provenance {
        generator: "protoalign gen-data",
        version: env!("CARGO_PKG_VERSION"),
        seed: m.seed,
        data: &m.data,
        source_rows: source.len(),
        target_rows: target.len(),
        input_dim: source.input_dim(),
        class_count: source.class_count,
    };
    dir.write("provenance.json", serde_json::to_string_pretty(&p)?)?;
    dir.commit()
}

pub fn pretrain(m: &Manifest, out: &Path) -> anyhow::Result<PathBuf> {
    let dir = StagedDir::begin(out.join("pretrain"), m)?;
    let data = training_data(m)?;
    let trainer = Trainer::new(&m.train, &data.source, &data.target, None)?.with_dataset_tag(&m.name);
    let (snap, curve) = trainer.pretrain_source()?;
    let acc = trainer.accuracies(&snap.model)?;
    snap.save(dir.path().join("model_0.snap"))?;
    dir.write("pretrain.csv", curve_csv(&curve))?;
    dir.write(
        "summary.json",
        serde_json::to_string_pretty(&serde_json::json!({
            "dataset": m.name,
            "seed": m.seed,
            "epochs": curve.len(),
            "source_acc": acc.source,
        }))?,
    )?;
    info!("stage 1 done: source accuracy {:.4}", acc.source);
    dir.commit()
}

fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,end_loss\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.end_loss));
    }
    out
}

fn parse_curve(text: &str) -> anyhow::Result<Vec<EpochRecord>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || DataError(format!("malformed pretrain.csv row '{line}'"));
            if f.len() != 3 {
                return Err(bad().into());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                end_loss: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn adapt(m: &Manifest, out: &Path) -> anyhow::Result<PathBuf> {
    let stage1 = out.join("pretrain");
    let snap_path = stage1.join("model_0.snap");
    if !snap_path.exists() {
        return Err(DataError(format!("{} not found; run `pretrain` first", snap_path.display())).into());
    }
    let dir = StagedDir::begin(out.join("adapt"), m)?;
    let data = training_data(m)?;
    let trainer = Trainer::new(&m.train, &data.source, &data.target, None)?.with_dataset_tag(&m.name);
    let initial = ModelSnapshot::load(&snap_path)?;
    let curve = match std::fs::read_to_string(stage1.join("pretrain.csv")) {
        Ok(text) => parse_curve(&text)?,
        Err(_) => Vec::new(),
    };
    let report = trainer.run_from(initial, curve)?;
    report.write_all(dir.path())?;
    info!(
        "stage 2 done: {} steps, final source accuracy {:.4}",
        report.steps.len(),
        report.final_accuracy.source
    );
    dir.commit()
}

#[derive(Serialize)]
struct SnapshotMetrics {
    snapshot: String,
    step: u64,
    source_acc: f64,
    target_acc: f64,
    tau: f64,
    n_selected: usize,
    pseudo_label_acc: Option<f64>,
    a_distance: Option<f64>,
    a_distance_values: Vec<f64>,
}

/// Evaluates `snapshots`, or by default `pretrain/model_0.snap` and
/// `adapt/model_final.snap` where they exist.
pub fn eval(m: &Manifest, out: &Path, snapshots: &[PathBuf]) -> anyhow::Result<PathBuf> {
    let paths: Vec<PathBuf> = if snapshots.is_empty() {
        [out.join("pretrain/model_0.snap"), out.join("adapt/model_final.snap")]
            .into_iter()
            .filter(|p| p.exists())
            .collect()
    } else {
        snapshots.to_vec()
    };
    if paths.is_empty() {
        return Err(DataError(format!("no snapshot to evaluate under {}", out.display())).into());
    }
    let dir = StagedDir::begin(out.join("eval"), m)?;
    let (source, target, oracle) = evaluation_data(m)?;
    let trainer = Trainer::new(&m.train, &source, &target, Some(&oracle))?;
    let mut log = MetricsLog::default();
    let mut all = Vec::new();
    for path in &paths {
        let snap = ModelSnapshot::load(path).with_context(|| format!("loading {}", path.display()))?;
        let model = &snap.model;
        let acc = trainer.accuracies(model)?;
        let target_acc = acc.target.ok_or_else(|| DataError("target accuracy unavailable".into()))?;
        let (labels, best) = trainer.pseudo_label(model)?;
        let tau = threshold(snap.step, m.train.mu);
        let selection = select_easy(&labels, &best, tau, snap.step + 1);
        let pseudo = pseudo_label_accuracy(&selection, &oracle)?;
        let fs = model.forward_features(&source.features)?;
        let ft = model.forward_features(&target.features)?;
        let dist = if m.eval.a_distance {
            Some(proxy_a_distance_multi(&fs, &ft, &m.eval.probe(), &m.eval.probe_seeds)?)
        } else {
            None
        };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot").to_string();
        if m.eval.embedding {
            let feats = Matrix::vstack(&[&fs, &ft])?;
            let classes = embedding_labels(source.require_labels()?, target.len(), Some(&oracle))?;
            let mut domains = vec![DomainTag::Source; source.len()];
            domains.extend(std::iter::repeat(DomainTag::Target).take(target.len()));
            export_embedding_2d(&feats, &classes, &domains, dir.path().join(format!("embedding_{stem}.csv")))?;
        }
        let mut rec = MetricsRecord::new(
            m.seed,
            m.train.variant.name(),
            snap.step,
            snap.step * m.train.iters_per_step as u64,
        );
        rec.insert("source_acc", acc.source)?;
        rec.insert("target_acc", target_acc)?;
        rec.insert("tau", tau)?;
        rec.insert("n_selected", selection.len() as f64)?;
        if let Some(p) = pseudo {
            rec.insert("pseudo_label_acc", p)?;
        }
        if let Some(d) = &dist {
            rec.insert("a_distance", d.median)?;
        }
        log.push(rec);
        all.push(SnapshotMetrics {
            snapshot: stem,
            step: snap.step,
            source_acc: acc.source,
            target_acc,
            tau,
            n_selected: selection.len(),
            pseudo_label_acc: pseudo,
            a_distance: dist.as_ref().map(|d| d.median),
            a_distance_values: dist.map(|d| d.values).unwrap_or_default(),
        });
    }
    dir.write("metrics.csv", log.to_csv())?;
    dir.write("eval.json", serde_json::to_string_pretty(&all)?)?;
    for s in &all {
        println!(
            "{}: source {:.4}, target {:.4}{}",
            s.snapshot,
            s.source_acc,
            s.target_acc,
            s.a_distance.map(|d| format!(", d_A {d:.3}")).unwrap_or_default()
        );
    }
    dir.commit()
}

pub fn ablate(m: &Manifest, out: &Path) -> anyhow::Result<PathBuf> {
    let dir = StagedDir::begin(out.join("ablate"), m)?;
    let jobs: Vec<(Variant, u64)> = m
        .ablate
        .seeds
        .iter()
        .flat_map(|&s| m.ablate.variants.iter().map(move |&v| (v, s)))
        .collect();
    let threads = match m.ablate.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<anyhow::Result<RunReport>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = jobs.get(i) else { break };
                let r = ablation_run(m, variant, seed);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut reports = Vec::with_capacity(jobs.len());
    for (r, (variant, seed)) in results.into_inner().expect("no worker panicked").into_iter().zip(&jobs) {
        let report = r
            .expect("every job ran")
            .with_context(|| format!("variant {variant}, seed {seed}"))?;
        report.write_all(dir.path().join("runs").join(format!("{variant}-seed{seed}")))?;
        reports.push(report);
    }
    let table = ablation_table(&reports)?;
    dir.write("ablation.csv", table.to_csv())?;
    dir.write("ablation.json", serde_json::to_string_pretty(&table)?)?;
    for row in &table.rows {
        println!("{:<12} median target acc {:.4}", row.variant.name(), row.median);
    }
    dir.commit()
}

/// One cell of the ablation grid; data and training share the run seed.
/// Target labels are used only to score the finished runs.
fn ablation_run(m: &Manifest, variant: Variant, seed: u64) -> anyhow::Result<RunReport> {
    let ms = m.with_seed(seed);
    let (source, target, oracle) = evaluation_data(&ms)?;
    let cfg = ms.train.clone().with_variant(variant);
    let report = Trainer::new(&cfg, &source, &target, Some(&oracle))?
        .with_dataset_tag(&ms.name)
        .run()?;
    info!("{variant} seed {seed}: target acc {:?}", report.final_accuracy.target);
    Ok(report)
}
