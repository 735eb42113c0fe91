use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Weights of one affine layer together with their gradient and momentum
/// buffers. All three share the parameter shapes at all times.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `in x out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    pub momentum_weight: Matrix,
    pub momentum_bias: Vec<f64>,
}

impl LayerParams {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::dim("LayerParams::new", weight.cols(), bias.len()));
        }
        let (i, o) = weight.shape();
        Ok(LayerParams {
            grad_weight: Matrix::zeros(i, o),
            grad_bias: vec![0.0; o],
            momentum_weight: Matrix::zeros(i, o),
            momentum_bias: vec![0.0; o],
            weight,
            bias,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self::new(Matrix::zeros(fan_in, fan_out), vec![0.0; fan_out]).expect("shapes agree")
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        let weight = Matrix::from_vec(fan_in, fan_out, data).expect("sized above");
        Self::new(weight, vec![0.0; fan_out]).expect("shapes agree")
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.as_mut_slice().fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn reset_momentum(&mut self) {
        self.momentum_weight.as_mut_slice().fill(0.0);
        self.momentum_bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// `x · W + b`, bias broadcast over rows.
pub fn affine_forward(x: &Matrix, p: &LayerParams) -> Result<Matrix> {
    if x.cols() != p.fan_in() {
        return Err(Error::dim(
            "affine_forward",
            format!("input with {} cols", p.fan_in()),
            format!("{}x{}", x.rows(), x.cols()),
        ));
    }
    let mut out = x.matmul(&p.weight)?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(&p.bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Accumulates `xᵀ·grad_out` into `grad_weight` and the column sums of
/// `grad_out` into `grad_bias`; returns `grad_out·Wᵀ`.
pub fn affine_backward(x: &Matrix, p: &mut LayerParams, grad_out: &Matrix) -> Result<Matrix> {
    if grad_out.cols() != p.fan_out() || grad_out.rows() != x.rows() || x.cols() != p.fan_in() {
        return Err(Error::dim(
            "affine_backward",
            format!("x {}x{}, grad {}x{}", x.rows(), p.fan_in(), x.rows(), p.fan_out()),
            format!(
                "x {}x{}, grad {}x{}",
                x.rows(),
                x.cols(),
                grad_out.rows(),
                grad_out.cols()
            ),
        ));
    }
    let gw = x.t_matmul(grad_out)?;
    p.grad_weight.add_assign(&gw)?;
    for (gb, s) in p.grad_bias.iter_mut().zip(grad_out.column_sums()) {
        *gb += s;
    }
    grad_out.matmul_t(&p.weight)
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Masks `grad_out` by `pre > 0`. The subgradient at exactly zero is zero.
pub fn relu_backward(pre: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if pre.shape() != grad_out.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("{:?}", pre.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let data = pre
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data)
}
