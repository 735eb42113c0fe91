use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{TrainConfig, Variant};
use crate::ehts::SelectionAudit;
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;

/// Stage-1 source loss for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss while the epoch ran.
    pub loss: f64,
    /// Loss over the whole source set once the epoch finished.
    pub end_loss: f64,
}

/// Loss terms and schedule values of one stage-2 iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub step: u64,
    /// Global stage-2 iteration index, from 0.
    pub iter: usize,
    pub p: f64,
    pub lr: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_apa: f64,
    pub total: f64,
}

/// One row per stage-2 step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    /// Iterations completed at the end of the step.
    pub iter: usize,
    pub p: f64,
    pub lr: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_apa: f64,
    pub tau: f64,
    pub n_selected: usize,
    pub source_acc: f64,
    pub target_acc: Option<f64>,
    pub pseudo_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: u64,
    pub iter: usize,
    pub class: usize,
    pub rho_source: Option<f64>,
    pub rho_target: Option<f64>,
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracies {
    pub source: f64,
    pub target: Option<f64>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub dataset: String,
    /// The configuration as given (before the variant was applied).
    pub config: TrainConfig,
    pub pretrain: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub iterations: Vec<IterationRecord>,
    pub audit: Vec<SelectionAudit>,
    pub trace: Vec<TraceRecord>,
    /// Accuracies of `model_0`.
    pub source_only: Accuracies,
    pub final_accuracy: Accuracies,
    pub initial: ModelSnapshot,
    pub final_snapshot: ModelSnapshot,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const STEPS_HEADER: &str =
    "step,iter,p,lr,lambda,gamma,L_c,L_d,L_apa,tau,n_selected,source_acc,target_acc,pseudo_acc";

#[derive(Serialize)]
struct Summary<'a> {
    variant: Variant,
    seed: u64,
    dataset: &'a str,
    source_only: Accuracies,
    final_accuracy: Accuracies,
    steps: usize,
    iterations: usize,
}

impl RunReport {
    pub fn final_target_accuracy(&self) -> Option<f64> {
        self.final_accuracy.target
    }

    pub fn steps_csv(&self) -> String {
        let mut out = format!("{STEPS_HEADER}\n");
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.iter,
                r.p,
                r.lr,
                r.lambda,
                r.gamma,
                r.l_c,
                r.l_d,
                r.l_apa,
                r.tau,
                r.n_selected,
                r.source_acc,
                opt(r.target_acc),
                opt(r.pseudo_acc)
            );
        }
        out
    }

    pub fn iterations_csv(&self) -> String {
        let mut out = String::from("step,iter,p,lr,lambda,gamma,L_c,L_d,L_apa,L\n");
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step, r.iter, r.p, r.lr, r.lambda, r.gamma, r.l_c, r.l_d, r.l_apa, r.total
            );
        }
        out
    }

    pub fn pretrain_csv(&self) -> String {
        let mut out = String::from("epoch,loss,end_loss\n");
        for r in &self.pretrain {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.end_loss);
        }
        out
    }

    pub fn audit_csv(&self) -> String {
        let mut out = SelectionAudit::csv_header(self.initial.model.config().class_count);
        out.push('\n');
        for a in &self.audit {
            out.push_str(&a.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("m,iter,class,rho_source,rho_target,distance\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.step,
                t.iter,
                t.class,
                opt(t.rho_source),
                opt(t.rho_target),
                opt(t.distance)
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let s = Summary {
            variant: self.variant,
            seed: self.seed,
            dataset: &self.dataset,
            source_only: self.source_only,
            final_accuracy: self.final_accuracy,
            steps: self.steps.len(),
            iterations: self.iterations.len(),
        };
        serde_json::to_string_pretty(&s).expect("summary serialises")
    }

    /// Writes every CSV plus `model_0.snap` and `model_final.snap` into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("run_report.csv", self.steps_csv()),
            ("iterations.csv", self.iterations_csv()),
            ("pretrain.csv", self.pretrain_csv()),
            ("selection_audit.csv", self.audit_csv()),
            ("prototype_trace.csv", self.trace_csv()),
            ("summary.json", self.summary_json()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        self.initial.save(dir.join("model_0.snap"))?;
        self.final_snapshot.save(dir.join("model_final.snap"))
    }
}
