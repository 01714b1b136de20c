//! End-to-end contract workflow.
//!
//! 1. Train `m₀` on a uniform sample of `n₀` rows.
//! 2. Compute statistics at `θ₀`, build the parameter sampler and estimate
//!    the error bound `ε₀`. If `ε₀ ≤ ε`, return `m₀`.
//! 3. Otherwise estimate the minimum sample size `n*` from `m₀` alone, train
//!    once more on `n*` rows (a superset of the first sample, warm-started
//!    at `θ₀`) and re-estimate its error bound from fresh statistics.
//!
//! At most two models are trained per run.

use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::accuracy::{check_delta, estimate_error_bound, AccuracyReport, DEFAULT_DRAWS};
use crate::data::{sample_indices, uniform_sample, DataSplit, Dataset, LabelMap};
use crate::error::{invalid, Result};
use crate::mcs::{Mcs, ModelSpec, TrainedModel};
use crate::optimizer::{minimize, minimize_preconditioned, Method, OptimizerConfig};
use crate::psampler::ParamSampler;
use crate::sizer::{min_sample_size, SizeEstimate};
use crate::stats::{
    closed_form, inverse_gradients, observed_fisher, HessianPair, StatsMethod, DEFAULT_FD_EPS,
};

/// Default initial sample size.
pub const DEFAULT_N0: usize = 10_000;
/// Default cap on holdout rows used to evaluate model differences.
pub const DEFAULT_DIFF_ROWS: usize = 10_000;

/// Requested `(ε, δ)` and the initial sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub eps: f64,
    pub delta: f64,
    pub n0: usize,
}

impl Contract {
    /// `ε > 0` (and `ε ≤ 1` for classifiers and PPCA, whose differences are
    /// bounded), `0 < δ < 1`, `n₀ ≥ 1`.
    pub fn new(eps: f64, delta: f64, n0: usize) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return invalid(format!("error bound must be positive, got {eps}"));
        }
        check_delta(delta)?;
        if n0 == 0 {
            return invalid("initial sample size must be at least 1");
        }
        Ok(Self { eps, delta, n0 })
    }

    /// Contract from a requested accuracy in percent, `ε = 1 − accuracy/100`.
    pub fn from_accuracy(accuracy_pct: f64, confidence_pct: f64, n0: usize) -> Result<Self> {
        Self::new(1.0 - accuracy_pct / 100.0, 1.0 - confidence_pct / 100.0, n0)
    }

    fn check_for(&self, spec: &ModelSpec) -> Result<()> {
        if spec.kind.is_classifier() && self.eps > 1.0 {
            return invalid(format!("error bound {} exceeds 1 for a classifier", self.eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub optimizer: OptimizerConfig,
    pub stats_method: StatsMethod,
    /// Monte-Carlo draws for both estimators.
    pub k: usize,
    /// Finite-difference step for inverse-gradient statistics.
    pub fd_eps: f64,
    /// Added to every retained eigenvalue of `J` (non-converged models).
    pub j_diag_eps: f64,
    /// Holdout rows used to evaluate model differences (`None`: all).
    pub diff_rows: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            stats_method: StatsMethod::ObservedFisher,
            k: DEFAULT_DRAWS,
            fd_eps: DEFAULT_FD_EPS,
            j_diag_eps: 0.0,
            diff_rows: Some(DEFAULT_DIFF_ROWS),
        }
    }
}

/// Seeds for every random stream of one run, derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub sample: u64,
    pub holdout: u64,
    pub accuracy: u64,
    pub size: u64,
    pub final_accuracy: u64,
}

/// SplitMix64 finalizer.
pub fn mix_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            sample: mix_seed(master, 1),
            holdout: mix_seed(master, 2),
            accuracy: mix_seed(master, 3),
            size: mix_seed(master, 4),
            final_accuracy: mix_seed(master, 5),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Drawing and copying the uniform samples.
    pub sampling: f64,
    pub initial_training: f64,
    pub statistics: f64,
    pub accuracy: f64,
    pub size_search: f64,
    pub final_training: f64,
    pub final_accuracy: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub model: TrainedModel,
    pub accuracy: AccuracyReport,
}

/// Measured holdout error of the returned model and the implied bound on the
/// full model's holdout error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generalization {
    pub eps_g: f64,
    pub full_model_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub contract: Contract,
    pub population: usize,
    pub stats_method: StatsMethod,
    pub initial: Phase,
    #[serde(rename = "final")]
    pub final_phase: Option<Phase>,
    pub size_estimate: Option<SizeEstimate>,
    pub trainings_performed: usize,
    pub timings: Timings,
    pub seeds: RunSeeds,
    /// The returned model's re-estimated bound satisfies `ε`.
    pub final_bound_within: bool,
    pub saturated: bool,
    pub generalization: Option<Generalization>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<LabelMap>,
}

impl RunReport {
    /// The model the run returns.
    pub fn model(&self) -> &TrainedModel {
        self.final_phase.as_ref().map_or(&self.initial.model, |p| &p.model)
    }

    pub fn accuracy(&self) -> &AccuracyReport {
        self.final_phase
            .as_ref()
            .map_or(&self.initial.accuracy, |p| &p.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `εg + ε − εg·ε`.
pub fn generalization_bound(eps_g: f64, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps_g) || !(0.0..=1.0).contains(&eps) {
        return invalid(format!("errors must lie in [0,1], got εg={eps_g}, ε={eps}"));
    }
    Ok(eps_g + eps * (1.0 - eps_g))
}

struct Runner<'a, M: Mcs + ?Sized> {
    mcs: &'a M,
    config: &'a RunConfig,
    trainings: usize,
    warnings: Vec<String>,
}

impl<M: Mcs + ?Sized> Runner<'_, M> {
    fn train(
        &mut self,
        data: &Dataset,
        population: usize,
        init: Option<&[f64]>,
        inv_hessian: Option<&DMatrix<f64>>,
    ) -> Result<TrainedModel> {
        self.trainings += 1;
        let spec = *self.mcs.spec();
        let fit = match (init, inv_hessian) {
            (Some(t), Some(h)) => minimize_preconditioned(self.mcs, data, &self.config.optimizer, t, h)?,
            _ => minimize(self.mcs, data, &self.config.optimizer, init)?,
        };
        if !fit.converged {
            let msg = format!(
                "training on {} rows stopped after {} iterations with gradient norm {:e}",
                data.n_rows(),
                fit.iterations,
                fit.grad_norm
            );
            warn!("{msg}");
            self.warnings.push(msg);
        }
        Ok(TrainedModel {
            spec,
            layout: spec.layout(data.dim()),
            theta: fit.theta,
            n: data.n_rows(),
            population,
            converged: fit.converged,
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
        })
    }

    fn sampler(&self, theta: &[f64], data: &Dataset, seed: u64) -> Result<ParamSampler> {
        Ok(sampler_and_curvature(self.mcs, theta, data, self.config, seed, false)?.0)
    }

    /// Sampler plus `H⁻¹` for preconditioning the second training, when it
    /// will run dense BFGS.
    fn sampler_and_curvature(
        &self,
        theta: &[f64],
        data: &Dataset,
        seed: u64,
    ) -> Result<(ParamSampler, Option<DMatrix<f64>>)> {
        let dense = self.config.optimizer.method_for(theta.len()) == Method::Bfgs;
        sampler_and_curvature(self.mcs, theta, data, self.config, seed, dense)
    }
}

/// Parameter sampler at `theta` using the configured statistics method.
pub fn build_sampler<M: Mcs + ?Sized>(
    mcs: &M,
    theta: &[f64],
    data: &Dataset,
    config: &RunConfig,
    seed: u64,
) -> Result<ParamSampler> {
    Ok(sampler_and_curvature(mcs, theta, data, config, seed, false)?.0)
}

fn sampler_and_curvature<M: Mcs + ?Sized>(
    mcs: &M,
    theta: &[f64],
    data: &Dataset,
    config: &RunConfig,
    seed: u64,
    want_inverse: bool,
) -> Result<(ParamSampler, Option<DMatrix<f64>>)> {
    let inflate = |mut p: HessianPair| {
        for i in 0..p.dim() {
            p.j[(i, i)] += config.j_diag_eps;
            p.h[(i, i)] += config.j_diag_eps;
        }
        p
    };
    match config.stats_method {
        StatsMethod::ObservedFisher => {
            let f = observed_fisher(mcs, theta, data)?.inflate(config.j_diag_eps);
            let inv = want_inverse.then(|| f.inverse_hessian());
            Ok((ParamSampler::from_factors(&f, seed)?, inv))
        }
        StatsMethod::ClosedForm | StatsMethod::InverseGradients => {
            let pair = inflate(if config.stats_method == StatsMethod::ClosedForm {
                closed_form(mcs.spec(), theta, data)?
            } else {
                inverse_gradients(mcs, theta, data, config.fd_eps)?
            });
            let inv = if want_inverse { Some(pair.inverse_hessian()?) } else { None };
            Ok((ParamSampler::from_pair(&pair, seed)?, inv))
        }
    }
}

fn diff_holdout(holdout: &Dataset, config: &RunConfig, seed: u64) -> Result<Dataset> {
    match config.diff_rows {
        Some(cap) if cap < holdout.n_rows() => uniform_sample(holdout, cap.max(1), seed),
        _ => Ok(holdout.clone()),
    }
}

fn validate_inputs(spec: &ModelSpec, data: &DataSplit, config: &RunConfig) -> Result<()> {
    spec.validate_data(&data.train)?;
    if spec.kind.is_supervised() && data.holdout.is_empty() {
        return invalid("holdout set is empty");
    }
    if data.holdout.dim() != data.train.dim() {
        return invalid("train and holdout dimensions differ");
    }
    if config.k < 2 {
        return invalid("need at least 2 Monte-Carlo draws");
    }
    Ok(())
}

fn generalization(spec: &ModelSpec, model: &TrainedModel, holdout: &Dataset, eps: f64) -> Option<Generalization> {
    if !spec.kind.is_classifier() || holdout.is_empty() {
        return None;
    }
    let eps_g = spec.holdout_error(&model.theta, holdout).ok()?;
    Some(Generalization {
        eps_g,
        full_model_bound: generalization_bound(eps_g, eps.min(1.0)).ok()?,
    })
}

/// Train a model that meets `contract` with probability at least `1 − δ`.
pub fn train_with_contract<M: Mcs + ?Sized>(
    mcs: &M,
    data: &DataSplit,
    contract: &Contract,
    config: &RunConfig,
    master_seed: u64,
) -> Result<RunReport> {
    let started = Instant::now();
    let spec = *mcs.spec();
    validate_inputs(&spec, data, config)?;
    contract.check_for(&spec)?;
    let seeds = RunSeeds::from_master(master_seed);
    let population = data.train.n_rows();
    let n0 = contract.n0.min(population);
    let mut run = Runner {
        mcs,
        config,
        trainings: 0,
        warnings: Vec::new(),
    };
    let mut timings = Timings::default();
    let holdout = diff_holdout(&data.holdout, config, seeds.holdout)?;

    let t = Instant::now();
    let d0 = data.train.select(&sample_indices(population, n0, seeds.sample)?);
    timings.sampling = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let m0 = run.train(&d0, population, None, None)?;
    timings.initial_training = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (sampler, inv_hessian) = run.sampler_and_curvature(&m0.theta, &d0, seeds.accuracy)?;
    timings.statistics = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let acc0 = estimate_error_bound(&m0, &sampler, &holdout, contract.delta, config.k)?;
    timings.accuracy = t.elapsed().as_secs_f64();
    info!("initial model: n={n0}, ε₀={:.5}", acc0.epsilon);

    if acc0.epsilon <= contract.eps {
        timings.total = started.elapsed().as_secs_f64();
        let gen = generalization(&spec, &m0, &data.holdout, contract.eps);
        return Ok(RunReport {
            contract: *contract,
            population,
            stats_method: config.stats_method,
            initial: Phase {
                model: m0,
                accuracy: acc0,
            },
            final_phase: None,
            size_estimate: None,
            trainings_performed: run.trainings,
            timings,
            seeds,
            final_bound_within: true,
            saturated: n0 == population,
            generalization: gen,
            warnings: run.warnings,
            label_map: None,
        });
    }

    let t = Instant::now();
    let estimate = min_sample_size(
        &m0.theta,
        &sampler.with_seed(seeds.size),
        &holdout,
        &spec,
        n0,
        population,
        contract.eps,
        contract.delta,
        config.k,
    )?;
    timings.size_search = t.elapsed().as_secs_f64();
    // n₀ was already rejected by the accuracy estimate.
    let n_star = estimate.n_star.max(n0 + 1).min(population);
    info!(
        "estimated sample size n*={n_star} after {} probes",
        estimate.probes.len()
    );

    let t = Instant::now();
    let dn = data.train.select(&sample_indices(population, n_star, seeds.sample)?);
    timings.sampling += t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mn = run.train(&dn, population, Some(&m0.theta), inv_hessian.as_ref())?;
    timings.final_training = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let final_sampler = run.sampler(&mn.theta, &dn, seeds.final_accuracy)?;
    let acc_n = estimate_error_bound(&mn, &final_sampler, &holdout, contract.delta, config.k)?;
    timings.final_accuracy = t.elapsed().as_secs_f64();
    if acc_n.epsilon > contract.eps {
        let msg = format!(
            "re-estimated bound {:.5} for n*={n_star} exceeds the requested {:.5}",
            acc_n.epsilon, contract.eps
        );
        warn!("{msg}");
        run.warnings.push(msg);
    }
    timings.total = started.elapsed().as_secs_f64();
    let gen = generalization(&spec, &mn, &data.holdout, contract.eps);
    Ok(RunReport {
        contract: *contract,
        population,
        stats_method: config.stats_method,
        initial: Phase {
            model: m0,
            accuracy: acc0,
        },
        final_bound_within: acc_n.epsilon <= contract.eps,
        saturated: n_star == population,
        final_phase: Some(Phase {
            model: mn,
            accuracy: acc_n,
        }),
        size_estimate: Some(estimate),
        trainings_performed: run.trainings,
        timings,
        seeds,
        generalization: gen,
        warnings: run.warnings,
        label_map: None,
    })
}

/// Train on exactly `n` rows and report the model's error bound.
pub fn estimate_accuracy_only<M: Mcs + ?Sized>(
    mcs: &M,
    data: &DataSplit,
    n: usize,
    delta: f64,
    config: &RunConfig,
    master_seed: u64,
) -> Result<RunReport> {
    let started = Instant::now();
    let spec = *mcs.spec();
    validate_inputs(&spec, data, config)?;
    check_delta(delta)?;
    let population = data.train.n_rows();
    if n == 0 || n > population {
        return invalid(format!("sample size {n} outside 1..={population}"));
    }
    let seeds = RunSeeds::from_master(master_seed);
    let mut run = Runner {
        mcs,
        config,
        trainings: 0,
        warnings: Vec::new(),
    };
    let mut timings = Timings::default();
    let holdout = diff_holdout(&data.holdout, config, seeds.holdout)?;
    let t = Instant::now();
    let dn = data.train.select(&sample_indices(population, n, seeds.sample)?);
    timings.sampling = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let m = run.train(&dn, population, None, None)?;
    timings.initial_training = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let sampler = run.sampler(&m.theta, &dn, seeds.accuracy)?;
    timings.statistics = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let acc = estimate_error_bound(&m, &sampler, &holdout, delta, config.k)?;
    timings.accuracy = t.elapsed().as_secs_f64();
    timings.total = started.elapsed().as_secs_f64();
    let gen = generalization(&spec, &m, &data.holdout, acc.epsilon);
    Ok(RunReport {
        contract: Contract {
            eps: acc.epsilon,
            delta,
            n0: n,
        },
        population,
        stats_method: config.stats_method,
        initial: Phase {
            model: m,
            accuracy: acc,
        },
        final_phase: None,
        size_estimate: None,
        trainings_performed: run.trainings,
        timings,
        seeds,
        final_bound_within: true,
        saturated: n == population,
        generalization: gen,
        warnings: run.warnings,
        label_map: None,
    })
}

/// Train the initial model and estimate `n*` without the second training.
pub fn estimate_size_only<M: Mcs + ?Sized>(
    mcs: &M,
    data: &DataSplit,
    contract: &Contract,
    config: &RunConfig,
    master_seed: u64,
) -> Result<(TrainedModel, SizeEstimate)> {
    let spec = *mcs.spec();
    validate_inputs(&spec, data, config)?;
    contract.check_for(&spec)?;
    let seeds = RunSeeds::from_master(master_seed);
    let population = data.train.n_rows();
    let n0 = contract.n0.min(population);
    let mut run = Runner {
        mcs,
        config,
        trainings: 0,
        warnings: Vec::new(),
    };
    let holdout = diff_holdout(&data.holdout, config, seeds.holdout)?;
    let d0 = data.train.select(&sample_indices(population, n0, seeds.sample)?);
    let m0 = run.train(&d0, population, None, None)?;
    let sampler = run.sampler(&m0.theta, &d0, seeds.size)?;
    let est = min_sample_size(
        &m0.theta,
        &sampler,
        &holdout,
        &spec,
        n0,
        population,
        contract.eps,
        contract.delta,
        config.k,
    )?;
    Ok((m0, est))
}
