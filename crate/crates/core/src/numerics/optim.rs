use super::LayerParams;
use crate::error::{Error, Result};

/// Heavy-ball coefficient used for every parameter group.
pub const MOMENTUM: f64 = 0.9;

/// `v ← 0.9·v + g; θ ← θ − lr·v`, in place. Fails without touching the
/// parameters if any gradient entry is non-finite.
pub fn sgd_momentum_step(p: &mut LayerParams, lr: f64) -> Result<()> {
    let finite = p.grad_weight.is_finite() && p.grad_bias.iter().all(|g| g.is_finite());
    if !finite {
        return Err(Error::Divergence(format!(
            "non-finite gradient in {}x{} layer",
            p.fan_in(),
            p.fan_out()
        )));
    }
    let LayerParams {
        weight,
        bias,
        grad_weight,
        grad_bias,
        momentum_weight,
        momentum_bias,
    } = p;
    update(weight.as_mut_slice(), grad_weight.as_slice(), momentum_weight.as_mut_slice(), lr);
    update(bias, grad_bias, momentum_bias, lr);
    Ok(())
}

fn update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64) {
    for ((w, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = MOMENTUM * *v + g;
        *w -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn scalar_layer(w: f64) -> LayerParams {
        LayerParams::new(Matrix::filled(1, 1, w), vec![0.0]).unwrap()
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar_layer(1.5);
        let before = p.clone();
        sgd_momentum_step(&mut p, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_plain_sgd() {
        let mut p = scalar_layer(1.0);
        p.grad_weight.set(0, 0, 2.0);
        sgd_momentum_step(&mut p, 0.1).unwrap();
        assert!((p.weight.get(0, 0) - (1.0 - 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let (lr, g) = (0.05, 3.0);
        let mut p = scalar_layer(0.0);
        for _ in 0..2 {
            p.grad_weight.set(0, 0, g);
            sgd_momentum_step(&mut p, lr).unwrap();
        }
        let expected = -(lr * g + lr * 1.9 * g);
        assert!((p.weight.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = scalar_layer(1.0);
        p.grad_bias[0] = f64::NAN;
        let before = p.clone().weight;
        assert!(matches!(sgd_momentum_step(&mut p, 0.1), Err(Error::Divergence(_))));
        assert_eq!(p.weight, before);
    }
}
