//! Fixtures shared by the benchmarks.

use protoalign::datasets::gen_gaussian_shift;
use protoalign::{DomainDataset, LabelOracle, Matrix, Model, ModelConfig, Rng, SyntheticShiftSpec, TrainConfig, UnlabeledDataset};

/// Rotated four-class Gaussian pair with `per_class` points per class.
pub struct Task {
    pub source: DomainDataset,
    pub target: UnlabeledDataset,
    pub oracle: LabelOracle,
}

pub fn gaussian_task(per_class: usize, seed: u64) -> Task {
    let spec = SyntheticShiftSpec {
        per_class,
        noise_std: 1.0,
        rotation: std::f64::consts::FRAC_PI_6,
        seed,
        ..SyntheticShiftSpec::default()
    };
    let (source, target) = gen_gaussian_shift(&spec).expect("valid spec");
    let (target, oracle) = target.into_unlabeled();
    Task {
        source,
        target,
        oracle: oracle.expect("generated targets are labelled"),
    }
}

pub fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

pub fn model(input_dim: usize, class_count: usize, seed: u64) -> Model {
    let cfg: ModelConfig = TrainConfig::default().model_config(input_dim, class_count);
    Model::new(&cfg, &mut Rng::new(seed)).expect("valid model config")
}

/// `rows × cols` standard normal entries.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = Rng::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.normal()).collect()).expect("sized")
}
