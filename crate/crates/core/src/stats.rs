//! Second-order statistics at a trained parameter: `H`, the Jacobian of the
//! regularized gradient, and `J = H − βI`, the Jacobian of its unregularized
//! part. These fix the asymptotic parameter covariance `α·H⁻¹JH⁻¹`.
//!
//! Three routes are provided:
//! - [`closed_form`]: analytic Hessian (Lin, LR).
//! - [`inverse_gradients`]: finite differences of the mean gradient, `dp + 1`
//!   gradient evaluations.
//! - [`observed_fisher`]: one gradient evaluation; `J` is the covariance of
//!   the per-example scores, kept as SVD factors `J = U diag(s²) Uᵀ` so no
//!   `dp × dp` matrix is ever formed.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mcs::{sigmoid, Mcs, ModelKind, ModelSpec};

/// Relative floor below which singular values are dropped.
pub const SINGULAR_FLOOR: f64 = 1e-10;
/// Default finite-difference step for [`inverse_gradients`].
pub const DEFAULT_FD_EPS: f64 = 1e-6;
/// Largest parameter dimension for which explicit covariances are formed.
pub const DEFAULT_EXPLICIT_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMethod {
    ClosedForm,
    InverseGradients,
    ObservedFisher,
}

impl std::str::FromStr for StatsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" => Ok(Self::ClosedForm),
            "inverse-gradients" => Ok(Self::InverseGradients),
            "observed-fisher" => Ok(Self::ObservedFisher),
            other => invalid(format!("unknown statistics method '{other}'")),
        }
    }
}

/// Explicit `H` and `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianPair {
    pub h: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub beta: f64,
}

impl HessianPair {
    /// Build from `J` for an L2-regularized objective (`H = J + βI`).
    pub fn from_j(j: DMatrix<f64>, beta: f64) -> Self {
        let mut h = j.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += beta;
        }
        Self { h, j, beta }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// `H⁻¹JH⁻¹`.
    pub fn inverse_hessian(&self) -> Result<DMatrix<f64>> {
        self.h.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
            Error::Singular(format!(
                "Hessian is not positive definite (beta = {}); increase the regularization",
                self.beta
            ))
        })
    }

    pub fn sandwich(&self) -> Result<DMatrix<f64>> {
        let dp = self.dim();
        let scale = self.h.diagonal().abs().max().max(f64::MIN_POSITIVE);
        let chol = self.h.clone().cholesky().ok_or_else(|| {
            Error::Singular("H is not positive definite; try a regularization coefficient beta > 0".into())
        })?;
        let l = chol.l();
        if (0..dp).any(|i| l[(i, i)] * l[(i, i)] < 1e-13 * scale) {
            return Err(Error::Singular(
                "H is numerically singular; try a regularization coefficient beta > 0".into(),
            ));
        }
        let h_inv = chol.inverse();
        let m = &h_inv * &self.j * &h_inv;
        Ok((&m + m.transpose()) * 0.5)
    }
}

/// Truncated SVD factors with `J = U diag(s²) Uᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatFactors {
    /// `dp × m`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Descending, strictly positive.
    pub s: Vec<f64>,
    pub beta: f64,
    /// Sample size the scores came from.
    pub n: usize,
}

impl StatFactors {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `Λᵢᵢ = sᵢ / (sᵢ² + β)`.
    pub fn lambda(&self) -> Vec<f64> {
        self.s.iter().map(|s| s / (s * s + self.beta)).collect()
    }

    /// `L = UΛ`, so that `LLᵀ = H⁻¹JH⁻¹` with `H = J + βI`.
    pub fn transform(&self) -> DMatrix<f64> {
        let mut l = self.u.clone();
        for (k, lam) in self.lambda().into_iter().enumerate() {
            l.column_mut(k).scale_mut(lam);
        }
        l
    }

    /// `U diag(s²) Uᵀ`. Forms a `dp × dp` matrix; for tests and small models.
    pub fn implied_j(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        &us * us.transpose()
    }

    /// Explicit `(J, H)` view of the factors.
    /// `H⁻¹ = U·diag(1/(s²+β))·Uᵀ + (I − UUᵀ)/β`; the second term is
    /// dropped when `β = 0`.
    pub fn inverse_hessian(&self) -> DMatrix<f64> {
        let dp = self.dim();
        let mut scaled = self.u.clone();
        for (k, s) in self.s.iter().enumerate() {
            scaled.column_mut(k).scale_mut(1.0 / (s * s + self.beta));
        }
        let mut inv = &scaled * self.u.transpose();
        if self.beta > 0.0 {
            let proj = &self.u * self.u.transpose();
            inv += (DMatrix::identity(dp, dp) - proj) / self.beta;
        }
        inv
    }

    pub fn to_pair(&self) -> HessianPair {
        HessianPair::from_j(self.implied_j(), self.beta)
    }

    /// Add `eps` to every retained `s²`.
    pub fn inflate(mut self, eps: f64) -> Self {
        if eps > 0.0 {
            self.s.iter_mut().for_each(|s| *s = (*s * *s + eps).sqrt());
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct FactorsRepr {
    dp: usize,
    m: usize,
    /// Column-major `dp × m`.
    u: Vec<f64>,
    s: Vec<f64>,
    beta: f64,
    n: usize,
}

impl Serialize for StatFactors {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        FactorsRepr {
            dp: self.dim(),
            m: self.rank(),
            u: self.u.as_slice().to_vec(),
            s: self.s.clone(),
            beta: self.beta,
            n: self.n,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for StatFactors {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = FactorsRepr::deserialize(de)?;
        if r.u.len() != r.dp * r.m || r.s.len() != r.m {
            return Err(serde::de::Error::custom("factor arrays do not match dp × m"));
        }
        Ok(StatFactors {
            u: DMatrix::from_column_slice(r.dp, r.m, &r.u),
            s: r.s,
            beta: r.beta,
            n: r.n,
        })
    }
}

/// Analytic `H = XᵀQX/n + βI` (LR: `Q = diag(σ(1−σ))`, Lin: `Q = I`).
pub fn closed_form(spec: &ModelSpec, theta: &[f64], data: &Dataset) -> Result<HessianPair> {
    spec.validate_data(data)?;
    spec.check_theta(theta, data.dim())?;
    let logistic = match spec.kind {
        ModelKind::Lin => false,
        ModelKind::Lr => true,
        _ => {
            return Err(Error::Unsupported {
                class: spec.kind.id(),
                op: "closed-form statistics",
            })
        }
    };
    let weight = |z: f64| {
        if logistic {
            let p = sigmoid(z);
            p * (1.0 - p)
        } else {
            1.0
        }
    };
    let d = data.dim();
    let n = data.n_rows();
    let parts = crate::exec::map_chunks(n, crate::exec::ROW_CHUNK, |range| {
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for i in range {
            let row = data.row(i);
            let w = weight(row.dot(theta));
            let x = DVector::from_vec(row.to_dense(d));
            acc.ger(w, &x, &x, 1.0);
        }
        acc
    });
    let mut j = DMatrix::<f64>::zeros(d, d);
    for p in parts {
        j += p;
    }
    j /= n as f64;
    Ok(HessianPair::from_j(j, spec.beta))
}

/// Column `i` of `H` is `(g_n(θ + ε·eᵢ) − g_n(θ)) / ε`, then `H ← (H + Hᵀ)/2`.
/// Calls `grads` exactly `dp + 1` times.
pub fn inverse_gradients<M: Mcs + ?Sized>(
    mcs: &M,
    theta: &[f64],
    data: &Dataset,
    eps: f64,
) -> Result<HessianPair> {
    if !(eps > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let dp = theta.len();
    let base = mcs.grads(theta, data)?.mean();
    let mut r = DMatrix::<f64>::zeros(dp, dp);
    let mut probe = theta.to_vec();
    for i in 0..dp {
        probe[i] = theta[i] + eps;
        let gi = mcs
            .grads(&probe, data)
            .map_err(|e| Error::Numerical(format!("perturbed gradient {i} failed: {e}")))?
            .mean();
        probe[i] = theta[i];
        for k in 0..dp {
            r[(k, i)] = (gi[k] - base[k]) / eps;
        }
    }
    let h = (&r + r.transpose()) * 0.5;
    let beta = mcs.spec().beta;
    let mut j = h.clone();
    for i in 0..dp {
        j[(i, i)] -= beta;
    }
    Ok(HessianPair { h, j, beta })
}

/// Score covariance factors from a single `grads` call.
///
/// Rows of `Q` are the per-example scores `q(θ; xᵢ, yᵢ)` (the regularizer
/// term removed), centered and scaled by `1/√n`, so `QᵀQ` is the empirical
/// score covariance. Returns the left singular vectors of `Qᵀ` and the
/// singular values above `s_max · 1e-10`.
pub fn observed_fisher<M: Mcs + ?Sized>(
    mcs: &M,
    theta: &[f64],
    data: &Dataset,
) -> Result<StatFactors> {
    let n = data.n_rows();
    if n < 2 {
        return invalid("observed Fisher information needs at least 2 examples");
    }
    let beta = mcs.spec().beta;
    let g = mcs.grads(theta, data)?;
    let dp = g.dp;
    let mut mean = g.mean();
    for (m, t) in mean.iter_mut().zip(theta) {
        *m -= beta * t;
    }
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    // Q is n × dp, filled column-major.
    let mut q = DMatrix::<f64>::zeros(n, dp);
    for (i, row) in g.rows().enumerate() {
        for k in 0..dp {
            q[(i, k)] = (row[k] - beta * theta[k] - mean[k]) * inv_sqrt_n;
        }
    }
    drop(g);
    let (u, s) = if dp <= n {
        let svd = q.try_svd(false, true, 1e-14, 10_000).ok_or_else(|| {
            Error::Numerical("SVD did not converge".into())
        })?;
        let vt = svd.v_t.expect("requested V");
        (vt.transpose(), svd.singular_values)
    } else {
        let svd = q.transpose().try_svd(true, false, 1e-14, 10_000).ok_or_else(|| {
            Error::Numerical("SVD did not converge".into())
        })?;
        (svd.u.expect("requested U"), svd.singular_values)
    };
    truncate_factors(u, s, beta, n)
}

fn truncate_factors(
    u: DMatrix<f64>,
    s: DVector<f64>,
    beta: f64,
    n: usize,
) -> Result<StatFactors> {
    let s_max = s.max();
    if !(s_max > 0.0) {
        return Err(Error::Numerical(
            "all per-example scores are identical; statistics are degenerate".into(),
        ));
    }
    let mut order: Vec<usize> = (0..s.len())
        .filter(|&k| s[k] > s_max * SINGULAR_FLOOR)
        .collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    debug!(
        "observed Fisher: kept {} of {} singular values",
        order.len(),
        s.len()
    );
    let cols: Vec<_> = order.iter().map(|&k| u.column(k).into_owned()).collect();
    Ok(StatFactors {
        u: DMatrix::from_columns(&cols),
        s: order.iter().map(|&k| s[k]).collect(),
        beta,
        n,
    })
}

/// Factors for an explicitly given score matrix `Qᵀ` (no centering or scaling).
pub fn factors_from_scores(qt: &DMatrix<f64>, beta: f64, n: usize) -> Result<StatFactors> {
    let svd = qt
        .clone()
        .try_svd(true, false, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    truncate_factors(svd.u.expect("requested U"), svd.singular_values, beta, n)
}

/// Either explicit matrices or SVD factors.
#[derive(Debug, Clone, Copy)]
pub enum Statistics<'a> {
    Pair(&'a HessianPair),
    Factors(&'a StatFactors),
}

/// `α·H⁻¹JH⁻¹` as an explicit matrix. Refuses models above `cap` parameters.
pub fn covariance_explicit(stats: Statistics<'_>, alpha: f64, cap: usize) -> Result<DMatrix<f64>> {
    let dp = match stats {
        Statistics::Pair(p) => p.dim(),
        Statistics::Factors(f) => f.dim(),
    };
    if dp > cap {
        return invalid(format!(
            "explicit covariance for {dp} parameters exceeds the cap of {cap}"
        ));
    }
    if !(alpha >= 0.0) {
        return invalid(format!("variance scale must be >= 0, got {alpha}"));
    }
    let base = match stats {
        Statistics::Pair(p) => p.sandwich()?,
        Statistics::Factors(f) => {
            let l = f.transform();
            &l * l.transpose()
        }
    };
    Ok(base * alpha)
}

/// `α = 1/n − 1/N`.
pub fn alpha(n: usize, population: usize) -> Result<f64> {
    if n == 0 || n > population {
        return invalid(format!("sample size {n} outside 1..={population}"));
    }
    Ok(1.0 / n as f64 - 1.0 / population as f64)
}
