//! Source/target domain pairs: seeded synthetic shift generators, an IDX
//! loader for digit subsets, subsampling and mini-batch ordering.

pub mod idx;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelOracle;
use crate::numerics::{Matrix, Rng};

pub use synthetic::{gen_gaussian_shift, gen_two_moons_shift, SyntheticShiftSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

/// Features plus optional labels for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: Matrix,
    labels: Option<Vec<usize>>,
    pub domain: DomainTag,
    pub class_count: usize,
}

impl DomainDataset {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<usize>>,
        domain: DomainTag,
        class_count: usize,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::dim("DomainDataset::new", features.rows(), l.len()));
            }
            if let Some(bad) = l.iter().find(|&&y| y >= class_count) {
                return Err(Error::Data(format!(
                    "label {bad} outside [0, {class_count})"
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(DomainDataset {
            features,
            labels,
            domain,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or a data error for an unlabelled set.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels().ok_or_else(|| {
            Error::Data(format!("{} dataset has no labels", self.domain.as_str()))
        })
    }

    /// `N_k` for each class; empty if unlabelled.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in self.labels().unwrap_or(&[]) {
            counts[y] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            domain: self.domain,
            class_count: self.class_count,
        }
    }

    /// Splits off the labels into an evaluation-only oracle. Training code
    /// receives the [`UnlabeledDataset`] half.
    pub fn into_unlabeled(self) -> (UnlabeledDataset, Option<LabelOracle>) {
        let oracle = self.labels.map(LabelOracle::seal);
        (
            UnlabeledDataset {
                features: self.features,
                class_count: self.class_count,
            },
            oracle,
        )
    }
}

/// Label-free view of a target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub features: Matrix,
    pub class_count: usize,
}

impl UnlabeledDataset {
    pub fn new(features: Matrix, class_count: usize) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(UnlabeledDataset {
            features,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Per-dimension affine scaling fitted on the source domain only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Self {
        let mean = features.column_means();
        let n = features.rows().max(1) as f64;
        let mut var = vec![0.0; features.cols()];
        for r in 0..features.rows() {
            for ((v, x), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        out
    }
}

/// Standardises both domains with statistics of the source features.
pub fn standardize_by_source(source: &mut DomainDataset, target: &mut DomainDataset) -> Standardizer {
    let s = Standardizer::fit(&source.features);
    source.features = s.apply(&source.features);
    target.features = s.apply(&target.features);
    s
}

/// Uniform sample of `n` rows without replacement, labels carried along.
pub fn subsample(dataset: &DomainDataset, n: usize, seed: u64) -> Result<DomainDataset> {
    if n > dataset.len() {
        return Err(Error::Data(format!(
            "cannot subsample {n} rows from {}",
            dataset.len()
        )));
    }
    let mut rng = Rng::derive(seed, crate::numerics::Stream::Subsample, 0);
    let idx = rng.sample_without_replacement(dataset.len(), n);
    Ok(dataset.select(&idx))
}

/// One shuffled epoch of index batches; the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    rng.permutation(n)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// Endless batch stream over `0..n`, reshuffled at every epoch boundary.
#[derive(Debug, Clone)]
pub struct BatchIter {
    n: usize,
    batch_size: usize,
    rng: Rng,
    pending: std::collections::VecDeque<Vec<usize>>,
}

impl BatchIter {
    pub fn new(n: usize, batch_size: usize, rng: Rng) -> Self {
        assert!(batch_size >= 1, "batch size must be at least 1");
        BatchIter {
            n,
            batch_size,
            rng,
            pending: Default::default(),
        }
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.n == 0 {
            return None;
        }
        if self.pending.is_empty() {
            self.pending = batch_indices(self.n, self.batch_size, &mut self.rng).into();
        }
        self.pending.pop_front()
    }
}
