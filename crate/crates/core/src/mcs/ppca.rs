use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Kernel, ModelSpec};
use crate::data::{Dataset, Row};
use crate::error::{Error, Result};
use crate::optimizer::{minimize, OptimizerConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// PPCA with `C = ΘΘᵀ + σ²I`. Parameters: `Θ` row-major `d×q`, then `σ²`.
pub(super) struct Ppca {
    d: usize,
    q: usize,
    /// `C⁻¹`, column-major `d×d`.
    c_inv: DMatrix<f64>,
    /// `C⁻¹Θ`, row-major `d×q`.
    c_inv_theta: Vec<f64>,
    /// `Θ`, row-major `d×q`.
    factors: Vec<f64>,
    log_det: f64,
    trace_c_inv: f64,
}

impl Ppca {
    pub fn prepare(theta: &[f64], d: usize, q: usize) -> Result<Self> {
        let noise = theta[d * q];
        if noise <= 0.0 {
            return Err(Error::Numerical(format!(
                "PPCA noise variance must be positive, got {noise}"
            )));
        }
        let w = DMatrix::from_row_slice(d, q, &theta[..d * q]);
        let mut c = &w * w.transpose();
        for i in 0..d {
            c[(i, i)] += noise;
        }
        let chol = match c.clone().cholesky() {
            Some(ch) => ch,
            None => {
                warn!("PPCA covariance not positive definite; adding 1e-12 I");
                for i in 0..d {
                    c[(i, i)] += 1e-12;
                }
                c.cholesky()
                    .ok_or_else(|| Error::Numerical("PPCA covariance is singular".into()))?
            }
        };
        let l = chol.l();
        let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let c_inv = chol.inverse();
        let ciw = &c_inv * &w;
        let mut c_inv_theta = vec![0.0; d * q];
        for j in 0..d {
            for k in 0..q {
                c_inv_theta[j * q + k] = ciw[(j, k)];
            }
        }
        Ok(Self {
            d,
            q,
            trace_c_inv: c_inv.trace(),
            c_inv,
            c_inv_theta,
            factors: theta[..d * q].to_vec(),
            log_det,
        })
    }

    /// `u = C⁻¹x` and `xᵀC⁻¹x`.
    fn solve_row(&self, x: Row<'_>) -> (Vec<f64>, f64) {
        let xd = x.to_dense(self.d);
        let mut u = vec![0.0; self.d];
        for (j, &xj) in xd.iter().enumerate() {
            if xj != 0.0 {
                for (ui, cij) in u.iter_mut().zip(self.c_inv.column(j).iter()) {
                    *ui += cij * xj;
                }
            }
        }
        let quad = u.iter().zip(&xd).map(|(a, b)| a * b).sum();
        (u, quad)
    }
}

impl Kernel for Ppca {
    fn loss_and_score(&self, x: Row<'_>, _y: Option<f64>, out: &mut [f64]) -> f64 {
        let (d, q) = (self.d, self.q);
        let (u, quad) = self.solve_row(x);
        // w = Θᵀu
        let mut w = vec![0.0; q];
        for (row, uj) in self.factors.chunks_exact(q).zip(&u) {
            for (wk, f) in w.iter_mut().zip(row) {
                *wk += f * uj;
            }
        }
        // C⁻¹Θ − C⁻¹xxᵀC⁻¹Θ = C⁻¹Θ − u wᵀ
        for j in 0..d {
            for k in 0..q {
                out[j * q + k] += self.c_inv_theta[j * q + k] - u[j] * w[k];
            }
        }
        let uu: f64 = u.iter().map(|v| v * v).sum();
        out[d * q] += 0.5 * (self.trace_c_inv - uu);
        0.5 * (d as f64 * LN_2PI + self.log_det + quad)
    }

    fn loss(&self, x: Row<'_>, _y: Option<f64>) -> f64 {
        let (_, quad) = self.solve_row(x);
        0.5 * (self.d as f64 * LN_2PI + self.log_det + quad)
    }
}

/// Small random factors with unit noise; zero factors are a stationary point.
pub(super) fn initial_theta(d: usize, q: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let mut theta: Vec<f64> = (0..d * q).map(|_| normal.sample(&mut rng)).collect();
    theta.push(1.0);
    theta
}

/// Maximum-likelihood PPCA from the eigendecomposition of `S = XᵀX/n`:
/// `σ²` is the mean of the discarded eigenvalues and `Θ = U_q (Λ_q − σ²I)^{1/2}`.
/// Data are assumed zero-centered.
pub fn closed_form(data: &Dataset, q: usize) -> Result<Vec<f64>> {
    let d = data.dim();
    if q == 0 || q >= d {
        return Err(Error::InvalidArgument(format!("PPCA needs 1 <= q < d, got q={q}, d={d}")));
    }
    let (s, _) = super::linear::normal_equations(data);
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let noise = order[q..].iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / (d - q) as f64;
    if noise <= 0.0 {
        return Err(Error::Singular(
            "data covariance has no residual variance beyond q factors".into(),
        ));
    }
    let mut theta = vec![0.0; d * q + 1];
    for (k, &i) in order[..q].iter().enumerate() {
        let scale = (eig.eigenvalues[i] - noise).max(0.0).sqrt();
        for j in 0..d {
            theta[j * q + k] = eig.eigenvectors[(j, i)] * scale;
        }
    }
    theta[d * q] = noise;
    Ok(theta)
}

/// Closed-form start refined by the optimizer so the result carries the same
/// gradient-norm certificate as iterative training (and honors `β > 0`).
pub(super) fn solve(spec: &ModelSpec, data: &Dataset, q: usize) -> Result<Vec<f64>> {
    let init = closed_form(data, q)?;
    let fit = minimize(spec, data, &OptimizerConfig::for_dim(init.len()), Some(&init))?;
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "PPCA refinement did not converge (gradient norm {:e})",
            fit.grad_norm
        )));
    }
    Ok(fit.theta)
}
