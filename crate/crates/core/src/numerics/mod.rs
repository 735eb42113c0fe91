//! Dense `f64` engine: matrices, affine/ReLU layers, losses with analytic
//! gradients, momentum SGD and a finite-difference gradient checker.

pub mod gradcheck;
mod layers;
mod losses;
mod matrix;
mod optim;
mod rng;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use layers::{affine_backward, affine_forward, relu_backward, relu_forward, LayerParams};
pub use losses::{
    cross_entropy, domain_bce, sigmoid, softmax_temperature, softplus, temperature_cross_entropy,
    DomainLoss,
};
pub use matrix::{argmax, dot, norm, Matrix};
pub use optim::{sgd_momentum_step, MOMENTUM};
pub use rng::{Rng, Stream};

/// Denominator guard for cosine similarities; ReLU embeddings can be all zero.
pub const NORM_EPS: f64 = 1e-12;

/// `⟨a, b⟩ / ((‖a‖ + ε)(‖b‖ + ε))`
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / ((norm(a) + NORM_EPS) * (norm(b) + NORM_EPS))
}
