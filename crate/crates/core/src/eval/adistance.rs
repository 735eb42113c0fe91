use serde::{Deserialize, Serialize};

use crate::datasets::Standardizer;
use crate::error::{Error, Result};
use crate::numerics::{
    affine_backward, affine_forward, relu_backward, relu_forward, sgd_momentum_step, sigmoid,
    LayerParams, Matrix, Rng, Stream,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ADistanceFormula {
    /// `2(1 − ε)`.
    #[default]
    Plain,
    /// `2(1 − 2ε)`.
    Conventional,
}

impl ADistanceFormula {
    pub fn apply(self, err: f64) -> f64 {
        match self {
            ADistanceFormula::Plain => 2.0 * (1.0 - err),
            ADistanceFormula::Conventional => 2.0 * (1.0 - 2.0 * err),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub seed: u64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of the pooled samples used for training the probe.
    pub train_fraction: f64,
    pub formula: ADistanceFormula,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            seed: 0,
            hidden: 16,
            epochs: 20,
            batch_size: 64,
            lr: 0.02,
            train_fraction: 0.8,
            formula: ADistanceFormula::Plain,
        }
    }
}

/// Trains a fresh `affine → ReLU → affine` domain probe on a random split of
/// the pooled features and converts its held-out error `ε` into a distance.
pub fn proxy_a_distance(source: &Matrix, target: &Matrix, opts: &ProbeOptions) -> Result<f64> {
    let err = probe_error(source, target, opts)?;
    Ok(opts.formula.apply(err))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ADistanceSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// [`proxy_a_distance`] under each probe seed.
pub fn proxy_a_distance_multi(
    source: &Matrix,
    target: &Matrix,
    opts: &ProbeOptions,
    seeds: &[u64],
) -> Result<ADistanceSummary> {
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one probe seed is required".into()));
    }
    let values = seeds
        .iter()
        .map(|&seed| proxy_a_distance(source, target, &ProbeOptions { seed, ..opts.clone() }))
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(ADistanceSummary {
        median: median(&values),
        mean,
        values,
    })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn probe_error(source: &Matrix, target: &Matrix, opts: &ProbeOptions) -> Result<f64> {
    if source.rows() < 2 || target.rows() < 2 {
        return Err(Error::Data(format!(
            "A-distance needs at least 2 samples per domain, got {} and {}",
            source.rows(),
            target.rows()
        )));
    }
    if source.cols() != target.cols() {
        return Err(Error::dim("proxy_a_distance", source.cols(), target.cols()));
    }
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) || opts.hidden == 0 || opts.batch_size == 0 {
        return Err(Error::Parameter(format!("invalid probe options {opts:?}")));
    }
    let pooled = Matrix::vstack(&[source, target])?;
    let y: Vec<f64> = (0..pooled.rows()).map(|i| if i < source.rows() { 1.0 } else { 0.0 }).collect();

    let mut rng = Rng::derive(opts.seed, Stream::Probe, 0);
    let order = rng.permutation(pooled.rows());
    let n_train = ((pooled.rows() as f64) * opts.train_fraction).round() as usize;
    if n_train == 0 || n_train >= pooled.rows() {
        return Err(Error::Data(format!("degenerate {n_train}/{} probe split", pooled.rows())));
    }
    let (train_idx, test_idx) = order.split_at(n_train);
    let scaler = Standardizer::fit(&pooled.select_rows(train_idx));
    let x_train = scaler.apply(&pooled.select_rows(train_idx));
    let x_test = scaler.apply(&pooled.select_rows(test_idx));
    let y_train: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
    let y_test: Vec<f64> = test_idx.iter().map(|&i| y[i]).collect();

    let mut l1 = LayerParams::glorot(pooled.cols(), opts.hidden, &mut rng);
    let mut l2 = LayerParams::glorot(opts.hidden, 1, &mut rng);
    for _ in 0..opts.epochs {
        for batch in crate::datasets::batch_indices(n_train, opts.batch_size, &mut rng) {
            let xb = x_train.select_rows(&batch);
            let pre = affine_forward(&xb, &l1)?;
            let h = relu_forward(&pre);
            let z = affine_forward(&h, &l2)?;
            let n = batch.len() as f64;
            let g: Vec<f64> = batch
                .iter()
                .zip(z.as_slice())
                .map(|(&i, &zi)| (sigmoid(zi) - y_train[i]) / n)
                .collect();
            let g = Matrix::from_vec(batch.len(), 1, g)?;
            l1.zero_grad();
            l2.zero_grad();
            let gh = affine_backward(&h, &mut l2, &g)?;
            let gpre = relu_backward(&pre, &gh)?;
            affine_backward(&xb, &mut l1, &gpre)?;
            sgd_momentum_step(&mut l2, opts.lr)?;
            sgd_momentum_step(&mut l1, opts.lr)?;
        }
    }
    let z = affine_forward(&relu_forward(&affine_forward(&x_test, &l1)?), &l2)?;
    let wrong = z
        .as_slice()
        .iter()
        .zip(&y_test)
        .filter(|(&zi, &yi)| (zi > 0.0) != (yi > 0.5))
        .count();
    Ok(wrong as f64 / y_test.len() as f64)
}
