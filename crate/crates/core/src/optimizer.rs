//! Quasi-Newton minimization of `f_n(θ)` through the [`Mcs`] contract.
//!
//! Dense BFGS below `dim_switch` parameters, L-BFGS above. Both use an
//! Armijo backtracking line search (`c = 1e-4`, halving, floor `1e-12`), so
//! accepted steps never increase the objective.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mcs::Mcs;

const ARMIJO_C: f64 = 1e-4;
const STEP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bfgs,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Forced method; `None` picks BFGS below `dim_switch` parameters.
    pub method: Option<Method>,
    pub lbfgs_memory: usize,
    /// Convergence threshold on `‖∇f_n‖∞`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub dim_switch: usize,
    /// Seed for randomized initial points (PPCA).
    pub init_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: None,
            lbfgs_memory: 10,
            grad_tol: 1e-6,
            max_iters: 500,
            dim_switch: 100,
            init_seed: 0x5eed,
        }
    }
}

impl OptimizerConfig {
    pub fn for_dim(dp: usize) -> Self {
        let mut c = Self::default();
        c.method = Some(c.method_for(dp));
        c
    }

    pub fn method_for(&self, dp: usize) -> Method {
        self.method.unwrap_or(if dp < self.dim_switch {
            Method::Bfgs
        } else {
            Method::Lbfgs
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return invalid("grad_tol must be positive");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if self.lbfgs_memory == 0 {
            return invalid("lbfgs_memory must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    /// `false` when `max_iters` was exhausted before reaching `grad_tol`.
    pub converged: bool,
    pub method: Method,
    /// Objective after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

enum Curvature {
    Dense {
        /// Inverse Hessian approximation, row-major.
        inv: Vec<f64>,
        fresh: bool,
    },
    Limited {
        pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
        memory: usize,
    },
}

impl Curvature {
    fn new(method: Method, dp: usize, memory: usize) -> Self {
        match method {
            Method::Bfgs => Curvature::Dense {
                inv: identity(dp),
                fresh: true,
            },
            Method::Lbfgs => Curvature::Limited {
                pairs: VecDeque::with_capacity(memory),
                memory,
            },
        }
    }

    fn reset(&mut self) {
        match self {
            Curvature::Dense { inv, fresh } => {
                let dp = (inv.len() as f64).sqrt() as usize;
                *inv = identity(dp);
                *fresh = true;
            }
            Curvature::Limited { pairs, .. } => pairs.clear(),
        }
    }

    /// `−H⁻¹g`
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let dp = g.len();
        match self {
            Curvature::Dense { inv, .. } => (0..dp)
                .map(|i| -dot(&inv[i * dp..(i + 1) * dp], g))
                .collect(),
            Curvature::Limited { pairs, .. } => {
                let mut q = g.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = rho * dot(s, &q);
                    for (qi, yi) in q.iter_mut().zip(y) {
                        *qi -= a * yi;
                    }
                    alphas.push(a);
                }
                if let Some((s, y, _)) = pairs.back() {
                    let gamma = dot(s, y) / dot(y, y);
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = rho * dot(y, &q);
                    for (qi, si) in q.iter_mut().zip(s) {
                        *qi += (a - b) * si;
                    }
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        let yy = dot(&y, &y);
        if !(sy > 1e-10 * (ss * yy).sqrt()) {
            return;
        }
        let rho = 1.0 / sy;
        match self {
            Curvature::Dense { inv, fresh } => {
                let dp = s.len();
                if *fresh {
                    let gamma = sy / yy;
                    inv.iter_mut().for_each(|v| *v *= gamma);
                    *fresh = false;
                }
                // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ
                let hy: Vec<f64> = (0..dp).map(|i| dot(&inv[i * dp..(i + 1) * dp], &y)).collect();
                let yhy = dot(&y, &hy);
                for i in 0..dp {
                    for j in 0..dp {
                        inv[i * dp + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                            + (rho * rho * yhy + rho) * s[i] * s[j];
                    }
                }
            }
            Curvature::Limited { pairs, memory } => {
                if pairs.len() == *memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, rho));
            }
        }
    }
}

fn identity(dp: usize) -> Vec<f64> {
    let mut m = vec![0.0; dp * dp];
    for i in 0..dp {
        m[i * dp + i] = 1.0;
    }
    m
}

/// Minimize `f_n` over `data`. `init` defaults to the model class's
/// [`default_init`](crate::mcs::ModelSpec::default_init).
pub fn minimize<M: Mcs + ?Sized>(
    mcs: &M,
    data: &Dataset,
    config: &OptimizerConfig,
    init: Option<&[f64]>,
) -> Result<FitResult> {
    run(mcs, data, config, init, None)
}

/// Like [`minimize`] from `init`, with BFGS starting from the supplied inverse
/// Hessian instead of the identity. L-BFGS ignores `inv_hessian`.
pub fn minimize_preconditioned<M: Mcs + ?Sized>(
    mcs: &M,
    data: &Dataset,
    config: &OptimizerConfig,
    init: &[f64],
    inv_hessian: &DMatrix<f64>,
) -> Result<FitResult> {
    if inv_hessian.nrows() != init.len() || inv_hessian.ncols() != init.len() {
        return Err(Error::Shape(format!(
            "inverse Hessian is {}x{}, parameters have length {}",
            inv_hessian.nrows(),
            inv_hessian.ncols(),
            init.len()
        )));
    }
    if inv_hessian.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite inverse Hessian".into()));
    }
    run(mcs, data, config, Some(init), Some(inv_hessian))
}

fn run<M: Mcs + ?Sized>(
    mcs: &M,
    data: &Dataset,
    config: &OptimizerConfig,
    init: Option<&[f64]>,
    inv_hessian: Option<&DMatrix<f64>>,
) -> Result<FitResult> {
    config.validate()?;
    let spec = mcs.spec();
    spec.validate_data(data)?;
    let mut theta = match init {
        Some(t) => {
            spec.check_theta(t, data.dim())?;
            t.to_vec()
        }
        None => spec.default_init(data.dim(), config.init_seed),
    };
    let dp = theta.len();
    let method = config.method_for(dp);
    let (mut f, mut g) = mcs.value_grad(&theta, data).map_err(|_| Error::NonFinite {
        iter: 0,
        theta: theta.clone(),
    })?;
    let mut curv = Curvature::new(method, dp, config.lbfgs_memory);
    if let (Curvature::Dense { inv, fresh }, Some(h)) = (&mut curv, inv_hessian) {
        // Symmetric, so column-major storage reads as row-major.
        inv.copy_from_slice(h.as_slice());
        *fresh = false;
    }
    let mut trace = vec![f];
    let mut iter = 0;
    while inf_norm(&g) > config.grad_tol && iter < config.max_iters {
        iter += 1;
        let mut p = curv.direction(&g);
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            curv.reset();
            p = g.iter().map(|v| -v).collect();
            slope = dot(&g, &p);
        }
        let (step, f_new, g_new) = match line_search(mcs, data, &theta, f, &p, slope) {
            Some(r) => r,
            None => {
                // Retry once along steepest descent before giving up.
                curv.reset();
                p = g.iter().map(|v| -v).collect();
                slope = dot(&g, &p);
                let scale = 1.0 / inf_norm(&g).max(1.0);
                let p_scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
                match line_search(mcs, data, &theta, f, &p_scaled, slope * scale) {
                    Some((t, fv, gv)) => {
                        p = p_scaled;
                        (t, fv, gv)
                    }
                    None => {
                        return Err(Error::LineSearch {
                            iter,
                            floor: STEP_FLOOR,
                        })
                    }
                }
            }
        };
        let s: Vec<f64> = p.iter().map(|v| step * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (t, si) in theta.iter_mut().zip(&s) {
            *t += si;
        }
        curv.update(s, y);
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    let grad_norm = inf_norm(&g);
    Ok(FitResult {
        converged: grad_norm <= config.grad_tol,
        theta,
        iterations: iter,
        grad_norm,
        objective: f,
        method,
        trace,
    })
}

/// Backtracking Armijo search. Infeasible or non-finite trial points count
/// as insufficient decrease.
fn line_search<M: Mcs + ?Sized>(
    mcs: &M,
    data: &Dataset,
    theta: &[f64],
    f: f64,
    p: &[f64],
    slope: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    let mut t = 1.0;
    let mut trial = vec![0.0; theta.len()];
    while t >= STEP_FLOOR {
        for ((x, a), b) in trial.iter_mut().zip(theta).zip(p) {
            *x = a + t * b;
        }
        if let Ok((fv, gv)) = mcs.value_grad(&trial, data) {
            if fv <= f + ARMIJO_C * t * slope {
                return Some((t, fv, gv));
            }
        }
        t *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcs::ModelSpec;

    #[test]
    fn exact_fit_line() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0]], Some(vec![2.0, 4.0])).unwrap();
        let fit = minimize(&ModelSpec::lin(0.0), &d, &OptimizerConfig::default(), None).unwrap();
        assert!(fit.converged);
        assert!((fit.theta[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_sets_flag() {
        let d = Dataset::from_rows(
            &[vec![1.0, 0.3], vec![0.2, 1.0], vec![-1.0, 0.5], vec![0.4, -2.0]],
            Some(vec![1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let cfg = OptimizerConfig {
            max_iters: 1,
            ..Default::default()
        };
        let fit = minimize(&ModelSpec::lr(0.001), &d, &cfg, None).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
        assert!(fit.theta.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn bad_config_rejected() {
        let d = Dataset::from_rows(&[vec![1.0]], Some(vec![1.0])).unwrap();
        let cfg = OptimizerConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(minimize(&ModelSpec::lin(0.0), &d, &cfg, None).is_err());
    }

    #[test]
    fn method_switch() {
        let c = OptimizerConfig::default();
        assert_eq!(c.method_for(99), Method::Bfgs);
        assert_eq!(c.method_for(100), Method::Lbfgs);
    }
}
