//! Diagnostics: accuracy, pseudo-label precision, proxy A-distance, 2-D
//! embedding export and the ablation table.
//!
//! Ground-truth target labels live only inside a [`LabelOracle`]. The oracle
//! answers scalar questions (how many of these predictions are right) and
//! never hands the labels themselves back, so nothing that holds one can feed
//! target labels into a gradient.

mod ablation;
mod adistance;
mod pca;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::datasets::{DomainDataset, UnlabeledDataset};
use crate::ehts::PseudoLabeledSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Rng;

pub use ablation::{ablation_table, AblationRow, AblationTable};
pub use adistance::{proxy_a_distance, proxy_a_distance_multi, ADistanceFormula, ADistanceSummary, ProbeOptions};
pub use pca::{export_embedding_2d, pca_2d, write_embedding_csv, Pca2d};

/// Sealed ground-truth labels of an unlabelled domain.
#[derive(Clone, PartialEq)]
pub struct LabelOracle {
    labels: Vec<usize>,
}

impl std::fmt::Debug for LabelOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LabelOracle({} labels)", self.labels.len())
    }
}

impl LabelOracle {
    pub(crate) fn seal(labels: Vec<usize>) -> Self {
        LabelOracle { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of `predictions` equal to the sealed labels.
    pub fn accuracy(&self, predictions: &[usize]) -> Result<f64> {
        if predictions.len() != self.labels.len() {
            return Err(Error::dim("LabelOracle::accuracy", self.labels.len(), predictions.len()));
        }
        Ok(fraction_equal(predictions, &self.labels))
    }

    /// Fraction of `(index, label)` pairs that are correct; `None` when empty.
    pub fn precision_of(&self, indices: &[usize], labels: &[usize]) -> Result<Option<f64>> {
        if indices.len() != labels.len() {
            return Err(Error::dim("LabelOracle::precision_of", indices.len(), labels.len()));
        }
        if indices.is_empty() {
            return Ok(None);
        }
        let mut correct = 0usize;
        for (&i, &y) in indices.iter().zip(labels) {
            let truth = *self.labels.get(i).ok_or_else(|| {
                Error::Parameter(format!("index {i} outside oracle of {}", self.labels.len()))
            })?;
            correct += usize::from(truth == y);
        }
        Ok(Some(correct as f64 / indices.len() as f64))
    }

    /// Labels for an embedding export: `Some` for every row.
    fn export_labels(&self) -> Vec<Option<usize>> {
        self.labels.iter().copied().map(Some).collect()
    }
}

fn fraction_equal(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Classification accuracy on a labelled dataset (argmax of the logits, so
/// independent of the temperature).
pub fn accuracy(model: &Model, dataset: &DomainDataset) -> Result<f64> {
    let labels = dataset.require_labels()?;
    let pred = model.predict(&dataset.features)?;
    Ok(fraction_equal(&pred, labels))
}

pub fn target_accuracy(model: &Model, target: &UnlabeledDataset, oracle: &LabelOracle) -> Result<f64> {
    oracle.accuracy(&model.predict(&target.features)?)
}

/// Share of correctly pseudo-labelled samples in a selection; `None` for an
/// empty selection.
pub fn pseudo_label_accuracy(selection: &PseudoLabeledSet, oracle: &LabelOracle) -> Result<Option<f64>> {
    oracle.precision_of(&selection.indices, &selection.labels)
}

/// Precision of `count` target samples drawn uniformly (with their
/// pseudo-labels), as a baseline for a selection of the same size.
pub fn random_selection_precision(
    pseudo_labels: &[usize],
    count: usize,
    oracle: &LabelOracle,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    let n = pseudo_labels.len();
    let idx = rng.sample_without_replacement(n, count.min(n));
    let labels: Vec<usize> = idx.iter().map(|&i| pseudo_labels[i]).collect();
    oracle.precision_of(&idx, &labels)
}

/// Class column for a source/target embedding export; target classes come
/// from the oracle when one is given.
pub fn embedding_labels(source_labels: &[usize], target_len: usize, oracle: Option<&LabelOracle>) -> Result<Vec<Option<usize>>> {
    let mut out: Vec<Option<usize>> = source_labels.iter().copied().map(Some).collect();
    match oracle {
        Some(o) if o.len() != target_len => {
            return Err(Error::dim("embedding_labels", target_len, o.len()));
        }
        Some(o) => out.extend(o.export_labels()),
        None => out.extend(std::iter::repeat(None).take(target_len)),
    }
    Ok(out)
}

/// One row of named scalar metrics at a run coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub variant: String,
    pub step: u64,
    pub iter: u64,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(seed: u64, variant: impl Into<String>, step: u64, iter: u64) -> Self {
        MetricsRecord {
            seed,
            variant: variant.into(),
            step,
            iter,
            metrics: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Parameter(format!("metric {name} is not finite: {value}")));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }
}

/// Append-only list of [`MetricsRecord`]s.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn push(&mut self, record: MetricsRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// Long format: `seed,variant,step,iter,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,variant,step,iter,metric,value\n");
        for r in &self.records {
            for (k, v) in &r.metrics {
                let _ = writeln!(out, "{},{},{},{},{},{}", r.seed, r.variant, r.step, r.iter, k, v);
            }
        }
        out
    }
}
