//! Unsupervised domain adaptation by progressive, prototype-aligned self-training.
//!
//! A labelled source domain and an unlabelled target domain are embedded by a
//! shared feature extractor. Training alternates two stages per step: target
//! samples whose embedding is close (by cosine) to a source class prototype are
//! pseudo-labelled under a threshold that tightens every step ([`ehts`]), and
//! per-class global prototypes of both domains are pulled together with a
//! similarity-weighted running update ([`apa`]). A gradient-reversed domain
//! discriminator and a temperature-softened source classifier complete the
//! objective ([`trainer`]).
//!
//! Everything runs on a small dense `f64` engine ([`numerics`]) whose backward
//! passes are checked against central finite differences.

pub mod apa;
pub mod datasets;
pub mod ehts;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use datasets::{DomainDataset, DomainTag, SyntheticShiftSpec, UnlabeledDataset};
pub use error::{Error, Result};
pub use eval::LabelOracle;
pub use model::{Model, ModelConfig, ModelSnapshot};
pub use numerics::{LayerParams, Matrix, Rng};
pub use trainer::{RunReport, TrainConfig, Variant};
