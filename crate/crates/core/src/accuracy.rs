//! Error bound for a trained approximate model.
//!
//! Draw `k` plausible full-model parameters from `θ_N | θₙ`, measure the
//! model difference against each, and report the order statistic that keeps
//! the fraction of draws at or below `ε` above the conservative threshold
//! `τ = (1 − δ)/0.95 + √(log 0.95 / (−2k))`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::exec::map_indices;
use crate::mcs::{ModelSpec, TrainedModel};
use crate::psampler::{sample_full_given_approx, ParamSampler};
use crate::stats::alpha;

/// Default Monte-Carlo draw count.
pub const DEFAULT_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub k: usize,
    /// Required fraction of draws with `v ≤ ε` before clamping.
    pub tau: f64,
    pub v_samples: Vec<f64>,
    /// `τ ≥ 1`: `ε` is the largest sampled difference.
    pub clamped: bool,
}

/// `(1 − δ)/0.95 + √(log 0.95 / (−2k))`.
pub fn confidence_threshold(delta: f64, k: usize) -> f64 {
    (1.0 - delta) / 0.95 + (0.95f64.ln() / (-2.0 * k as f64)).sqrt()
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0,1), got {delta}"));
    }
    Ok(())
}

/// Smallest `ε` among the samples whose empirical CDF reaches `min(τ, 1)`.
pub fn bound_from_samples(v_samples: Vec<f64>, delta: f64) -> Result<AccuracyReport> {
    check_delta(delta)?;
    let k = v_samples.len();
    if k < 2 {
        return invalid("need at least 2 Monte-Carlo draws");
    }
    if v_samples.iter().any(|v| v.is_nan()) {
        return invalid("model difference produced NaN");
    }
    let tau = confidence_threshold(delta, k);
    let clamped = tau >= 1.0;
    let mut sorted = v_samples.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((tau.min(1.0) * k as f64).ceil() as usize).clamp(1, k);
    Ok(AccuracyReport {
        epsilon: sorted[rank - 1],
        delta,
        k,
        tau,
        v_samples,
        clamped,
    })
}

/// Model difference between two parameter vectors of the same class.
pub fn v_of(theta_a: &[f64], theta_b: &[f64], spec: &ModelSpec, holdout: &Dataset) -> Result<f64> {
    spec.diff_params(theta_a, theta_b, holdout)
}

/// With probability at least `1 − δ`, `v(mₙ) ≤ ε` for the returned `ε`.
pub fn estimate_error_bound(
    model: &TrainedModel,
    sampler: &ParamSampler,
    holdout: &Dataset,
    delta: f64,
    k: usize,
) -> Result<AccuracyReport> {
    check_delta(delta)?;
    if k < 2 {
        return invalid("need at least 2 Monte-Carlo draws");
    }
    if model.spec.kind.is_supervised() && holdout.is_empty() {
        return invalid("holdout set is empty");
    }
    if model.theta.len() != sampler.dim() {
        return Err(Error::Shape(format!(
            "parameter has length {}, sampler dimension is {}",
            model.theta.len(),
            sampler.dim()
        )));
    }
    if !holdout.is_empty() {
        let alpha = alpha(model.n, model.population)?;
        let base = model.spec.score_bank(holdout, &model.theta)?;
        if let Some(base) = base {
            let draws = sampler.draw_base(k)?;
            if let Some(bank) = model.spec.score_bank(holdout, &draws.values)? {
                return bound_from_samples(
                    model.spec.gaps_from_scores(&base, None, (&bank, alpha.sqrt())),
                    delta,
                );
            }
        }
    }
    let draws = sample_full_given_approx(sampler, &model.theta, model.n, model.population, k)?;
    let v: Result<Vec<f64>> = map_indices(k, |i| v_of(&model.theta, draws.row(i), &model.spec, holdout))
        .into_iter()
        .collect();
    bound_from_samples(v?, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::StatFactors;
    use nalgebra::DMatrix;

    #[test]
    fn threshold_values() {
        // (1 − 0.05)/0.95 = 1 plus a positive term.
        assert!(confidence_threshold(0.05, 100) > 1.0);
        // 0.9/0.95 + √(−log 0.95 / 20000), evaluated by hand.
        let want = 0.947_368_421_052_631_6 + (0.051_293_294_387_550_5f64 / 20_000.0).sqrt();
        assert!((confidence_threshold(0.1, 10_000) - want).abs() < 1e-15);
        assert!((confidence_threshold(0.1, 10_000) - 0.94897).abs() < 1e-5);
    }

    #[test]
    fn clamped_takes_max() {
        let r = bound_from_samples(vec![0.3, 0.1, 0.2, 0.05], 0.05).unwrap();
        assert!(r.clamped);
        assert_eq!(r.epsilon, 0.3);
    }

    #[test]
    fn order_statistic_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let r = bound_from_samples(v, 0.2).unwrap();
        // τ = 0.8/0.95 + 0.016 = 0.8581 -> 86th value
        assert!(!r.clamped);
        assert_eq!(r.epsilon, 0.86);
        let frac = r.v_samples.iter().filter(|v| **v <= r.epsilon).count() as f64 / 100.0;
        assert!(frac >= r.tau);
    }

    #[test]
    fn argument_checks() {
        assert!(bound_from_samples(vec![0.1, 0.2], 0.0).is_err());
        assert!(bound_from_samples(vec![0.1, 0.2], 1.0).is_err());
        assert!(bound_from_samples(vec![0.1], 0.1).is_err());
    }

    #[test]
    fn full_sample_has_zero_bound() {
        let spec = ModelSpec::lr(0.0);
        let f = StatFactors {
            u: DMatrix::identity(2, 2),
            s: vec![1.0, 1.0],
            beta: 0.0,
            n: 5,
        };
        let sampler = ParamSampler::from_factors(&f, 1).unwrap();
        let holdout = Dataset::from_rows(&[vec![1.0, 0.1], vec![-0.5, 0.2]], None).unwrap();
        let m = TrainedModel {
            spec,
            theta: vec![0.1, 0.0],
            n: 50,
            population: 50,
            layout: spec.layout(2),
            converged: true,
            grad_norm: 0.0,
            iterations: 0,
        };
        let r = estimate_error_bound(&m, &sampler, &holdout, 0.05, 20).unwrap();
        assert_eq!(r.epsilon, 0.0);
        let empty = holdout.select(&[]);
        assert!(estimate_error_bound(&m, &sampler, &empty, 0.05, 20).is_err());
    }
}
