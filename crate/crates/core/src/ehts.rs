//! Easy-to-hard pseudo-labelling of the target domain.
//!
//! Source class prototypes are the mean embeddings per class. Each target
//! embedding is scored by cosine similarity against every prototype, labelled
//! with the best-scoring class, and kept only if that score clears a threshold
//! that rises with the training step:
//!
//! ```text
//! τ(m) = 1 / (1 + exp(−μ·(m + 1))) − 0.01
//! ```
//!
//! so early steps admit only samples that already sit close to a source class
//! and later steps gradually admit harder ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Source,
    TargetGlobal,
    TargetAccumulated,
    LocalBatch,
}

/// Per-class centroids. A class with count 0 has no centroid; its row is kept
/// as zeros but must not be read (see [`PrototypeSet::is_valid`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub centroids: Matrix,
    pub counts: Vec<usize>,
    pub provenance: Provenance,
}

impl PrototypeSet {
    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn is_valid(&self, k: usize) -> bool {
        self.counts[k] > 0
    }

    pub fn centroid(&self, k: usize) -> Option<&[f64]> {
        self.is_valid(k).then(|| self.centroids.row(k))
    }

    pub fn valid_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.class_count()).filter(|&k| self.is_valid(k))
    }
}

/// Mean embedding per class, summed in row order.
pub fn compute_prototypes(
    features: &Matrix,
    labels: &[usize],
    class_count: usize,
    provenance: Provenance,
) -> Result<PrototypeSet> {
    if labels.len() != features.rows() {
        return Err(Error::dim("compute_prototypes", features.rows(), labels.len()));
    }
    let mut centroids = Matrix::zeros(class_count, features.cols());
    let mut counts = vec![0usize; class_count];
    for (i, &y) in labels.iter().enumerate() {
        if y >= class_count {
            return Err(Error::Parameter(format!(
                "label {y} outside [0, {class_count})"
            )));
        }
        counts[y] += 1;
        for (c, f) in centroids.row_mut(y).iter_mut().zip(features.row(i)) {
            *c += f;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            let inv = n as f64;
            centroids.row_mut(k).iter_mut().for_each(|c| *c /= inv);
        }
    }
    Ok(PrototypeSet {
        centroids,
        counts,
        provenance,
    })
}

/// `n × C` cosine similarities; columns of invalid prototypes are `−∞` so
/// they can never win an argmax or pass a threshold.
pub fn similarity_scores(features: &Matrix, prototypes: &PrototypeSet) -> Result<Matrix> {
    if features.cols() != prototypes.dim() {
        return Err(Error::dim("similarity_scores", prototypes.dim(), features.cols()));
    }
    let c = prototypes.class_count();
    let mut out = Matrix::filled(features.rows(), c, f64::NEG_INFINITY);
    for j in 0..features.rows() {
        let f = features.row(j);
        for k in prototypes.valid_classes() {
            out.set(j, k, cosine_similarity(f, prototypes.centroids.row(k)));
        }
    }
    Ok(out)
}

/// Row-wise argmax (ties to the lowest class) and the winning score.
pub fn assign_pseudo_labels(scores: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut labels = Vec::with_capacity(scores.rows());
    let mut best = Vec::with_capacity(scores.rows());
    for j in 0..scores.rows() {
        let row = scores.row(j);
        let mut k_best = None;
        let mut s_best = f64::NEG_INFINITY;
        for (k, &s) in row.iter().enumerate() {
            if s > s_best {
                s_best = s;
                k_best = Some(k);
            }
        }
        let k = k_best.ok_or_else(|| {
            Error::Data("no valid source prototype to assign pseudo-labels against".into())
        })?;
        labels.push(k);
        best.push(s_best);
    }
    Ok((labels, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub mu: f64,
}

impl ThresholdSchedule {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
        }
        Ok(ThresholdSchedule { mu })
    }

    pub fn at(&self, m: u64) -> f64 {
        threshold(m, self.mu)
    }
}

/// Selection threshold for step `m` (counting from 0).
pub fn threshold(m: u64, mu: f64) -> f64 {
    1.0 / (1.0 + (-mu * (m as f64 + 1.0)).exp()) - 0.01
}

/// Target samples chosen for one step, with their pseudo-labels and scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabeledSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
    pub step: u64,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self, class_count: usize) -> Vec<usize> {
        let mut c = vec![0; class_count];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    fn from_indices(idx: Vec<usize>, labels: &[usize], scores: &[f64], step: u64) -> Self {
        PseudoLabeledSet {
            labels: idx.iter().map(|&i| labels[i]).collect(),
            scores: idx.iter().map(|&i| scores[i]).collect(),
            indices: idx,
            step,
        }
    }
}

/// Keeps every sample with `ψ ≥ τ`, in index order.
pub fn select_easy(labels: &[usize], scores: &[f64], tau: f64, step: u64) -> PseudoLabeledSet {
    let idx = (0..scores.len()).filter(|&j| scores[j] >= tau).collect();
    PseudoLabeledSet::from_indices(idx, labels, scores, step)
}

/// `count` samples drawn uniformly without replacement, sorted by index.
pub fn select_random(
    labels: &[usize],
    scores: &[f64],
    count: usize,
    rng: &mut Rng,
    step: u64,
) -> PseudoLabeledSet {
    let mut idx = rng.sample_without_replacement(scores.len(), count.min(scores.len()));
    idx.sort_unstable();
    PseudoLabeledSet::from_indices(idx, labels, scores, step)
}

/// Every target sample with its pseudo-label.
pub fn select_all(labels: &[usize], scores: &[f64], step: u64) -> PseudoLabeledSet {
    PseudoLabeledSet::from_indices((0..scores.len()).collect(), labels, scores, step)
}

/// One row of the selection audit log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionAudit {
    pub step: u64,
    pub tau: f64,
    pub n_selected: usize,
    pub class_counts: Vec<usize>,
    /// Fraction of correct pseudo-labels, when ground truth is available.
    pub precision: Option<f64>,
    /// Precision of a random subset of the same size at the same step.
    pub random_precision: Option<f64>,
}

impl SelectionAudit {
    pub fn csv_header(class_count: usize) -> String {
        let mut h = String::from("m,tau,n_selected");
        for k in 0..class_count {
            h.push_str(&format!(",count_{k}"));
        }
        h.push_str(",precision,random_precision");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{},{}", self.step, self.tau, self.n_selected);
        for c in &self.class_counts {
            r.push_str(&format!(",{c}"));
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        r.push_str(&format!(",{},{}", opt(self.precision), opt(self.random_precision)));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protos(rows: &[[f64; 2]], counts: Vec<usize>) -> PrototypeSet {
        PrototypeSet {
            centroids: Matrix::from_rows(rows).unwrap(),
            counts,
            provenance: Provenance::Source,
        }
    }

    #[test]
    fn prototype_means() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [3.0, 4.0]]).unwrap();
        let p = compute_prototypes(&f, &[0, 0, 1], 3, Provenance::Source).unwrap();
        assert_eq!(p.centroid(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(p.centroid(1).unwrap(), &[3.0, 4.0]);
        assert!(!p.is_valid(2));
        assert_eq!(p.centroid(2), None);
        assert!(compute_prototypes(&f, &[0, 0, 3], 3, Provenance::Source).is_err());
    }

    #[test]
    fn cosine_hand_values() {
        let p = protos(&[[1.0, 0.0], [0.0, 0.0]], vec![1, 0]);
        let f = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]).unwrap();
        let s = similarity_scores(&f, &p).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-11);
        assert_eq!(s.get(1, 0), 0.0);
        assert!((s.get(2, 0) - 0.70711).abs() < 1e-5);
        assert!((s.get(2, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-11);
        assert_eq!(s.get(0, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_norm_embedding_is_guarded() {
        let p = protos(&[[1.0, 0.0], [0.0, 1.0]], vec![1, 1]);
        let s = similarity_scores(&Matrix::zeros(1, 2), &p).unwrap();
        assert!(s.is_finite());
        assert_eq!(assign_pseudo_labels(&s).unwrap().0, vec![0]);
    }

    #[test]
    fn argmax_and_ties() {
        let s = Matrix::from_rows(&[[0.1, 0.9, 0.3, 0.2], [0.2, 0.5, 0.1, 0.5]]).unwrap();
        let (l, b) = assign_pseudo_labels(&s).unwrap();
        assert_eq!(l, vec![1, 1]);
        assert_eq!(b, vec![0.9, 0.5]);
        let s = Matrix::filled(1, 3, f64::NEG_INFINITY);
        assert!(matches!(assign_pseudo_labels(&s), Err(Error::Data(_))));
    }

    #[test]
    fn threshold_values() {
        let t0 = threshold(0, 0.8);
        let oracle = 1.0 / (1.0 + (-0.8f64).exp()) - 0.01;
        assert_eq!(t0, oracle);
        assert!((t0 - 0.679974).abs() < 1e-6);
        assert!((threshold(200, 0.8) - 0.99).abs() < 1e-12);
        for m in 0..30 {
            assert!(threshold(m + 1, 0.8) > threshold(m, 0.8));
        }
        assert!(ThresholdSchedule::new(0.0).is_err());
    }

    #[test]
    fn selection_boundaries() {
        let tau = threshold(0, 0.8);
        let labels = [2, 0, 1];
        let scores = [0.7, tau, 0.5];
        let s = select_easy(&labels, &scores, tau, 0);
        assert_eq!(s.indices, vec![0, 1]);
        assert_eq!(s.labels, vec![2, 0]);
        assert!(s.scores.iter().all(|&x| x >= tau));
        assert!(select_easy(&labels, &[0.98, 0.5, 0.9], 0.99, 5).is_empty());
    }

    #[test]
    fn random_selection_distinct_and_sized() {
        let labels = vec![0; 50];
        let scores: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let s = select_random(&labels, &scores, 20, &mut Rng::new(1), 0);
        assert_eq!(s.len(), 20);
        let mut d = s.indices.clone();
        d.dedup();
        assert_eq!(d.len(), 20);
        assert_eq!(select_all(&labels, &scores, 0).len(), 50);
    }

    #[test]
    fn audit_row_format() {
        let a = SelectionAudit {
            step: 1,
            tau: 0.5,
            n_selected: 3,
            class_counts: vec![1, 2],
            precision: Some(1.0),
            random_precision: None,
        };
        assert_eq!(SelectionAudit::csv_header(2), "m,tau,n_selected,count_0,count_1,precision,random_precision");
        assert_eq!(a.csv_row(), "1,0.5,3,1,2,1,");
    }
}
