use nalgebra::{DMatrix, DVector};

use super::{sigmoid, softplus, Kernel};
use crate::data::{Dataset, Row};
use crate::error::{Error, Result};

/// Gaussian likelihood with unit variance: `ℓ = ½(θᵀx − y)²`.
pub(super) struct LeastSquares {
    pub theta: Vec<f64>,
}

impl Kernel for LeastSquares {
    fn loss_and_score(&self, x: Row<'_>, y: Option<f64>, out: &mut [f64]) -> f64 {
        let r = x.dot(&self.theta) - y.unwrap_or(0.0);
        x.axpy(r, out);
        0.5 * r * r
    }

    fn loss(&self, x: Row<'_>, y: Option<f64>) -> f64 {
        let r = x.dot(&self.theta) - y.unwrap_or(0.0);
        0.5 * r * r
    }
}

/// Bernoulli likelihood with logit link: `ℓ = log(1 + e^z) − t·z`, `z = θᵀx`.
pub(super) struct Logistic {
    pub theta: Vec<f64>,
}

impl Kernel for Logistic {
    fn loss_and_score(&self, x: Row<'_>, y: Option<f64>, out: &mut [f64]) -> f64 {
        let z = x.dot(&self.theta);
        let t = y.unwrap_or(0.0);
        x.axpy(sigmoid(z) - t, out);
        softplus(z) - t * z
    }

    fn loss(&self, x: Row<'_>, y: Option<f64>) -> f64 {
        let z = x.dot(&self.theta);
        softplus(z) - y.unwrap_or(0.0) * z
    }
}

/// `XᵀX/n` and `Xᵀy/n`.
pub(crate) fn normal_equations(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let d = data.dim();
    let n = data.n_rows();
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    for i in 0..n {
        let x = data.row(i).to_dense(d);
        let y = data.label(i).unwrap_or(0.0);
        for a in 0..d {
            if x[a] == 0.0 {
                continue;
            }
            xty[a] += x[a] * y;
            for b in 0..d {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
    }
    (xtx / n as f64, xty / n as f64)
}

/// `θ = (XᵀX/n + βI)⁻¹ Xᵀy/n`.
pub(super) fn solve_least_squares(data: &Dataset, beta: f64) -> Result<Vec<f64>> {
    let (mut a, b) = normal_equations(data);
    let d = a.nrows();
    for i in 0..d {
        a[(i, i)] += beta;
    }
    let scale = a.diagonal().max().max(f64::MIN_POSITIVE);
    let chol = a.cholesky().ok_or_else(|| {
        Error::Singular("normal equations are not positive definite; use beta > 0".into())
    })?;
    let l = chol.l();
    let min_pivot = (0..d).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return Err(Error::Singular(
            "normal equations are rank deficient; use beta > 0".into(),
        ));
    }
    Ok(chol.solve(&b).as_slice().to_vec())
}
