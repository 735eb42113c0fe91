use super::Matrix;
use crate::error::{Error, Result};

/// Row-wise `exp(z_i / T) / Σ_j exp(z_j / T)`, computed after subtracting the
/// row maximum.
pub fn softmax_temperature(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(r);
        let mut total = 0.0;
        for (oi, &zi) in o.iter_mut().zip(z) {
            *oi = ((zi - max) / temperature).exp();
            total += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= total;
        }
    }
    Ok(out)
}

fn check_labels(op: &'static str, labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim(op, format!("{rows} labels"), labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Parameter(format!(
            "{op}: label {bad} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean of `-ln p[y]` over rows.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels("cross_entropy", labels, probs.rows(), probs.cols())?;
    if probs.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs.get(r, y).ln())
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Cross-entropy of the temperature softmax together with its gradient with
/// respect to the logits, `(q - onehot(y)) / (T·B)`.
///
/// The loss uses a log-sum-exp form so that a saturated class probability
/// still gives a finite value.
pub fn temperature_cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let probs = softmax_temperature(logits, temperature)?;
    check_labels("temperature_cross_entropy", labels, logits.rows(), logits.cols())?;
    let b = logits.rows();
    if b == 0 {
        return Ok((0.0, probs));
    }
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse: f64 = z
            .iter()
            .map(|&zi| ((zi - max) / temperature).exp())
            .sum::<f64>()
            .ln();
        loss += lse - (z[y] - max) / temperature;
    }
    let scale = 1.0 / (temperature * b as f64);
    let mut grad = probs;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        row[y] -= 1.0;
        for g in row.iter_mut() {
            *g *= scale;
        }
    }
    Ok((loss / b as f64, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Output of [`domain_bce`].
#[derive(Debug, Clone)]
pub struct DomainLoss {
    pub loss: f64,
    /// d loss / d logit for each source row.
    pub grad_source: Vec<f64>,
    /// d loss / d logit for each target row.
    pub grad_target: Vec<f64>,
}

/// Discriminator loss `-mean_s ln σ(s) - mean_t ln(1 - σ(t))` on raw logits:
/// source rows carry domain label 1, target rows label 0. Either side may be
/// empty, in which case its expectation is dropped.
pub fn domain_bce(source_logits: &[f64], target_logits: &[f64]) -> DomainLoss {
    let mut loss = 0.0;
    let mut grad_source = Vec::with_capacity(source_logits.len());
    let mut grad_target = Vec::with_capacity(target_logits.len());
    if !source_logits.is_empty() {
        let n = source_logits.len() as f64;
        for &s in source_logits {
            loss += softplus(-s) / n;
            grad_source.push((sigmoid(s) - 1.0) / n);
        }
    }
    if !target_logits.is_empty() {
        let n = target_logits.len() as f64;
        for &t in target_logits {
            loss += softplus(t) / n;
            grad_target.push(sigmoid(t) / n);
        }
    }
    DomainLoss {
        loss,
        grad_source,
        grad_target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::grad_check;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetric_and_hand_case() {
        let z = Matrix::row_vector(&[0.0, 0.0, 0.0]);
        for t in [0.5, 1.0, 1.8] {
            let q = softmax_temperature(&z, t).unwrap();
            assert!(q.as_slice().iter().all(|&v| close(v, 1.0 / 3.0, 1e-15)));
        }
        let q = softmax_temperature(&Matrix::row_vector(&[2.0, 0.0]), 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!(close(q.get(0, 0), e / (e + 1.0), 1e-15));
        assert!(close(q.get(0, 0), 0.731059, 1e-6));
        assert!(close(q.get(0, 1), 0.268941, 1e-6));
    }

    #[test]
    fn softmax_t1_is_standard() {
        let z = Matrix::row_vector(&[1.0, -2.0, 0.5]);
        let q = softmax_temperature(&z, 1.0).unwrap();
        let denom: f64 = z.as_slice().iter().map(|v| v.exp()).sum();
        for (i, &zi) in z.as_slice().iter().enumerate() {
            assert!(close(q.get(0, i), zi.exp() / denom, 1e-15));
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let z = Matrix::row_vector(&[1.0]);
        assert!(matches!(softmax_temperature(&z, 0.0), Err(Error::Parameter(_))));
        assert!(softmax_temperature(&z, -1.0).is_err());
    }

    #[test]
    fn softmax_large_logits_low_temperature() {
        let z = Matrix::row_vector(&[1000.0, 999.0]);
        let q = softmax_temperature(&z, 0.1).unwrap();
        assert!(q.is_finite());
    }

    #[test]
    fn cross_entropy_cases() {
        let p = Matrix::row_vector(&[0.0, 1.0, 0.0]);
        assert_eq!(cross_entropy(&p, &[1]).unwrap(), 0.0);
        let c = 5;
        let u = Matrix::filled(3, c, 1.0 / c as f64);
        assert!(close(cross_entropy(&u, &[0, 2, 4]).unwrap(), (c as f64).ln(), 1e-14));
        assert!(cross_entropy(&u, &[0, 2, 5]).is_err());
    }

    #[test]
    fn temperature_ce_gradient_matches_finite_differences() {
        let labels = [2usize, 0, 1];
        let z0 = vec![0.3, -1.2, 2.0, 0.7, 0.1, -0.4, -0.9, 1.5, 0.2];
        for t in [1.0, 1.8] {
            let zm = Matrix::from_vec(3, 3, z0.clone()).unwrap();
            let (_, g) = temperature_cross_entropy(&zm, &labels, t).unwrap();
            let report = grad_check(
                |z: &[f64]| {
                    let m = Matrix::from_vec(3, 3, z.to_vec()).unwrap();
                    let p = softmax_temperature(&m, t).unwrap();
                    cross_entropy(&p, &labels).unwrap()
                },
                &z0,
                g.as_slice(),
                1e-6,
            );
            assert!(report.max_rel_error < 1e-6, "T={t}: {report:?}");
        }
    }

    #[test]
    fn domain_bce_gradient_matches_finite_differences() {
        let s = [0.4, -1.3];
        let t = [2.1, -0.2, 0.0];
        let out = domain_bce(&s, &t);
        let analytic: Vec<f64> = out.grad_source.iter().chain(&out.grad_target).copied().collect();
        let x0: Vec<f64> = s.iter().chain(&t).copied().collect();
        let report = grad_check(
            |x: &[f64]| domain_bce(&x[..2], &x[2..]).loss,
            &x0,
            &analytic,
            1e-6,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn sigmoid_stable_both_tails() {
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(softplus(800.0).is_finite());
    }
}
