use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_protoalign");

const GAUSS_30: &str = r#"
name = "gauss-30"
seed = 0
out_dir = "run"

[data]
kind = "gaussian"
class_count = 4
per_class = 100
radius = 4.0
rotation = 0.5235987755982988
noise_std = 1.0

[train]
pretrain_epochs = 200
domain_loss_target = "full"

[eval]
probe_seeds = [0]
"#;

fn manifest(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("m.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("PROTOALIGN_OUT_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn pretrain_adapt_eval_improves_target_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), GAUSS_30);
    let m = m.to_str().unwrap();
    for cmd in ["gen-data", "pretrain", "adapt", "eval"] {
        ok(&[cmd, "-m", m], dir.path());
    }
    let run = dir.path().join("run");
    for f in [
        "data/source.csv",
        "pretrain/model_0.snap",
        "adapt/model_final.snap",
        "adapt/run_report.csv",
        "eval/metrics.csv",
        "eval/embedding_model_final.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let rows = json(run.join("eval/eval.json"));
    let acc = |i: usize| rows[i]["target_acc"].as_f64().unwrap();
    assert_eq!(rows[0]["snapshot"], "model_0");
    assert_eq!(rows[1]["snapshot"], "model_final");
    assert!(acc(1) > acc(0), "model_0 {} model_final {}", acc(0), acc(1));
}

#[test]
fn adapt_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), GAUSS_30);
    let m = m.to_str().unwrap();
    ok(&["pretrain", "-m", m, "--set", "train.pretrain_epochs=20"], dir.path());
    let mut reports = Vec::new();
    for out in ["a", "b"] {
        let target = dir.path().join(out);
        // adapt reads the stage 1 snapshot from its own output directory
        std::fs::create_dir_all(&target).unwrap();
        copy_dir(&dir.path().join("run/pretrain"), &target.join("pretrain"));
        ok(&["adapt", "-m", m, "-o", out, "--set", "train.pretrain_epochs=20"], dir.path());
        let files: Vec<Vec<u8>> = ["run_report.csv", "iterations.csv", "model_final.snap"]
            .iter()
            .map(|f| std::fs::read(target.join("adapt").join(f)).unwrap())
            .collect();
        reports.push(files);
    }
    assert!(reports[0] == reports[1]);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn source_only_ablation_matches_pretrain_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), GAUSS_30);
    let m = m.to_str().unwrap();
    let set = ["--set", "ablate.variants=[\"source-only\"]", "--set", "ablate.seeds=[0]"];
    let mut args = vec!["ablate", "-m", m];
    args.extend(set);
    ok(&args, dir.path());
    ok(&["pretrain", "-m", m], dir.path());
    ok(&["eval", "-m", m, "--snapshot", "run/pretrain/model_0.snap"], dir.path());
    let table = json(dir.path().join("run/ablate/ablation.json"));
    let eval = json(dir.path().join("run/eval/eval.json"));
    let text = table.to_string();
    let expected = eval[0]["target_acc"].as_f64().unwrap();
    assert!(text.contains("source-only") || text.contains("SourceOnly"), "{text}");
    let found = find_numbers(&table);
    assert!(
        found.iter().any(|v| (v - expected).abs() < 1e-12),
        "{expected} not in {text}"
    );
}

fn find_numbers(v: &serde_json::Value) -> Vec<f64> {
    match v {
        serde_json::Value::Number(n) => vec![n.as_f64().unwrap()],
        serde_json::Value::Array(a) => a.iter().flat_map(find_numbers).collect(),
        serde_json::Value::Object(o) => o.values().flat_map(find_numbers).collect(),
        _ => vec![],
    }
}

#[test]
fn bad_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), GAUSS_30);
    let m = m.to_str().unwrap();
    assert_eq!(run(&["pretrain", "-m", m, "--set", "train.stepz=3"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["pretrain", "-m", m, "--set", "train.temperature=-1"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["pretrain", "-m", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_data_exits_3_and_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        dir.path(),
        r#"
        out_dir = "run"
        [data]
        kind = "idx"
        source_images = "nope-images.idx3"
        source_labels = "nope-labels.idx1"
        target_images = "nope-images.idx3"
        target_labels = "nope-labels.idx1"
        "#,
    );
    let out = run(&["pretrain", "-m", m.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("run");
    assert!(!run_dir.join("pretrain").exists());
    assert!(!run_dir.join("pretrain.partial").exists());
}

#[test]
fn adapt_without_pretrain_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), GAUSS_30);
    let out = run(&["adapt", "-m", m.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("run/adapt.partial").exists());
}
