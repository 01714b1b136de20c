//! Gaussian draws from the asymptotic parameter distribution.
//!
//! Base draws come from `N(0, H⁻¹JH⁻¹)` and are rescaled by `√(1/n − 1/N)`
//! for any sample size, so one set of base draws serves every `n`.
//! Draw `i` uses its own ChaCha stream, which keeps the output identical
//! regardless of how the draws are spread across threads.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::exec::map_indices;
use crate::stats::{alpha, HessianPair, StatFactors};

const PSD_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerMode {
    /// `L = UΛ`, `dp × m`.
    Factor(DMatrix<f64>),
    /// Lower Cholesky factor of the explicit `H⁻¹JH⁻¹`.
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSampler {
    mode: SamplerMode,
    seed: u64,
}

/// `k` parameter-space vectors, row-major `k × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Draws {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Draws {
        Draws {
            dim: self.dim,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Sample mean and covariance (divisor `k − 1`).
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.len();
        let mut mean = DVector::zeros(self.dim);
        for r in self.rows() {
            mean += DVector::from_column_slice(r);
        }
        mean /= k as f64;
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for r in self.rows() {
            let c = DVector::from_column_slice(r) - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (k - 1) as f64;
        (mean, cov)
    }
}

impl ParamSampler {
    /// Factor-mode sampler, `Λᵢᵢ = sᵢ/(sᵢ² + β)`. Valid for L2 (or no)
    /// regularization, which is the only regularizer the model classes use.
    pub fn from_factors(factors: &StatFactors, seed: u64) -> Result<Self> {
        if !(factors.beta >= 0.0 && factors.beta.is_finite()) {
            return invalid("factor sampling requires an L2 regularizer r(θ) = βθ with β >= 0");
        }
        if factors.s.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Numerical("factor singular values must be positive".into()));
        }
        Ok(Self {
            mode: SamplerMode::Factor(factors.transform()),
            seed,
        })
    }

    /// Explicit-mode sampler from the Cholesky factor of `H⁻¹JH⁻¹`.
    pub fn from_pair(pair: &HessianPair, seed: u64) -> Result<Self> {
        Self::from_covariance(&pair.sandwich()?, seed)
    }

    /// Explicit-mode sampler for an arbitrary PSD covariance.
    pub fn from_covariance(cov: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let chol = match cov.clone().cholesky() {
            Some(c) => c,
            None => {
                let dp = cov.nrows();
                let scale = (cov.trace() / dp as f64).abs().max(1.0);
                warn!("covariance not positive definite; adding {:e} I", PSD_JITTER * scale);
                let mut j = cov.clone();
                for i in 0..dp {
                    j[(i, i)] += PSD_JITTER * scale;
                }
                j.cholesky().ok_or_else(|| {
                    Error::Numerical("Cholesky of the parameter covariance failed after jitter".into())
                })?
            }
        };
        Ok(Self {
            mode: SamplerMode::Explicit(chol.unpack()),
            seed,
        })
    }

    pub fn mode(&self) -> &SamplerMode {
        &self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same transform, different random stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            mode: self.mode.clone(),
            seed,
        }
    }

    fn transform(&self) -> &DMatrix<f64> {
        match &self.mode {
            SamplerMode::Factor(l) | SamplerMode::Explicit(l) => l,
        }
    }

    pub fn dim(&self) -> usize {
        self.transform().nrows()
    }

    /// `LLᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.transform();
        l * l.transpose()
    }

    /// `k` draws from `N(0, H⁻¹JH⁻¹)`.
    pub fn draw_base(&self, k: usize) -> Result<Draws> {
        if k == 0 {
            return invalid("need at least one draw");
        }
        let l = self.transform();
        let (dp, m) = l.shape();
        let rows = map_indices(k, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(i as u64);
            let z = DVector::<f64>::from_iterator(m, (0..m).map(|_| StandardNormal.sample(&mut rng)));
            (l * z).as_slice().to_vec()
        });
        Ok(Draws {
            dim: dp,
            values: rows.concat(),
        })
    }
}

/// Rescale base draws to `N(0, (1/n − 1/N)·H⁻¹JH⁻¹)`.
pub fn scale_draws(base: &Draws, n: usize, population: usize) -> Result<Draws> {
    Ok(base.scaled(alpha(n, population)?.sqrt()))
}

/// `k` draws of `θ_N | θₙ ~ N(θₙ, α·H⁻¹JH⁻¹)`.
pub fn sample_full_given_approx(
    sampler: &ParamSampler,
    theta_n: &[f64],
    n: usize,
    population: usize,
    k: usize,
) -> Result<Draws> {
    if theta_n.len() != sampler.dim() {
        return Err(Error::Shape(format!(
            "parameter has length {}, sampler dimension is {}",
            theta_n.len(),
            sampler.dim()
        )));
    }
    let mut d = scale_draws(&sampler.draw_base(k)?, n, population)?;
    for row in d.values.chunks_exact_mut(d.dim) {
        for (v, t) in row.iter_mut().zip(theta_n) {
            *v += t;
        }
    }
    Ok(d)
}
