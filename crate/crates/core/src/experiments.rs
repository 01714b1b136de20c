//! Coverage and baseline-comparison experiments against an actually trained
//! full model.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coordinator::{generalization_bound, mix_seed, train_with_contract, Contract, RunConfig};
use crate::data::{sample_indices, DataSplit};
use crate::error::{invalid, Result};
use crate::exec::map_indices;
use crate::mcs::{ModelSpec, TrainedModel};
use crate::optimizer::minimize;
use crate::sizer::{baseline_size, BaselineStrategy};
use crate::synth::Generator;

/// Largest `rows × dim` for which the bench trains a ground-truth full model.
pub const MAX_GROUND_TRUTH_CELLS: usize = 400_000_000;

/// Train on every training row.
pub fn train_full(spec: &ModelSpec, data: &DataSplit, config: &RunConfig) -> Result<TrainedModel> {
    let n = data.train.n_rows();
    let fit = minimize(spec, &data.train, &config.optimizer, None)?;
    Ok(TrainedModel {
        spec: *spec,
        layout: spec.layout(data.train.dim()),
        theta: fit.theta,
        n,
        population: n,
        converged: fit.converged,
        grad_norm: fit.grad_norm,
        iterations: fit.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    pub run: usize,
    pub seed: u64,
    pub n_used: usize,
    pub eps_estimated: f64,
    /// Difference between the returned model and the trained full model.
    pub v_actual: f64,
    pub within_contract: bool,
    pub trainings: usize,
    pub eps_g: Option<f64>,
    pub full_error: Option<f64>,
    pub generalization_ok: Option<bool>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub contract: Contract,
    pub runs: Vec<CoverageRun>,
    pub pass_rate: f64,
    pub v_quantiles: [f64; 3],
    pub generalization_rate: Option<f64>,
    pub max_trainings: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// One contract run on fresh synthetic data, scored against the full model.
pub fn coverage_run(
    spec: &ModelSpec,
    generator: &Generator,
    n_train: usize,
    contract: &Contract,
    config: &RunConfig,
    run: usize,
    master_seed: u64,
) -> Result<CoverageRun> {
    let seed = mix_seed(master_seed, 1000 + run as u64);
    let data = generator.split(n_train, 0.2, seed)?;
    let t = Instant::now();
    let report = train_with_contract(spec, &data, contract, config, seed)?;
    let seconds = t.elapsed().as_secs_f64();
    let full = train_full(spec, &data, config)?;
    let model = report.model();
    let v_actual = spec.diff(model, &full, &data.holdout)?;
    let (eps_g, full_error, generalization_ok) = if spec.kind.is_classifier() {
        let eg = spec.holdout_error(&model.theta, &data.holdout)?;
        let fe = spec.holdout_error(&full.theta, &data.holdout)?;
        let bound = generalization_bound(eg, contract.eps.min(1.0))?;
        (Some(eg), Some(fe), Some(fe <= bound))
    } else {
        (None, None, None)
    };
    Ok(CoverageRun {
        run,
        seed,
        n_used: model.n,
        eps_estimated: report.accuracy().epsilon,
        v_actual,
        within_contract: v_actual <= contract.eps,
        trainings: report.trainings_performed,
        eps_g,
        full_error,
        generalization_ok,
        seconds,
    })
}

/// `runs` independent contract runs; runs are spread over the worker pool.
pub fn coverage(
    spec: &ModelSpec,
    generator: &Generator,
    n_train: usize,
    contract: &Contract,
    config: &RunConfig,
    runs: usize,
    master_seed: u64,
) -> Result<CoverageSummary> {
    if runs == 0 {
        return invalid("need at least one run");
    }
    let results: Result<Vec<CoverageRun>> = map_indices(runs, |r| {
        coverage_run(spec, generator, n_train, contract, config, r, master_seed)
    })
    .into_iter()
    .collect();
    let results = results?;
    let passed = results.iter().filter(|r| r.within_contract).count();
    let mut v: Vec<f64> = results.iter().map(|r| r.v_actual).collect();
    v.sort_by(f64::total_cmp);
    let gen: Vec<bool> = results.iter().filter_map(|r| r.generalization_ok).collect();
    Ok(CoverageSummary {
        contract: *contract,
        pass_rate: passed as f64 / runs as f64,
        v_quantiles: [quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95)],
        generalization_rate: (!gen.is_empty())
            .then(|| gen.iter().filter(|g| **g).count() as f64 / gen.len() as f64),
        max_trainings: results.iter().map(|r| r.trainings).max().unwrap_or(0),
        runs: results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Contract,
    Baseline(BaselineStrategy),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Contract => "contract",
            Strategy::Baseline(BaselineStrategy::FixedRatio) => "fixed_ratio",
            Strategy::Baseline(BaselineStrategy::RelativeRatio) => "relative_ratio",
            Strategy::Baseline(BaselineStrategy::IncEstimator) => "inc_estimator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    pub repetition: usize,
    pub requested_accuracy: f64,
    pub achieved_v: f64,
    pub met: bool,
    pub sample_size: usize,
    pub trainings: usize,
    /// Time spent inside the optimizer.
    pub train_seconds: f64,
    /// End-to-end time of the strategy.
    pub wall_seconds: f64,
}

pub const BENCH_CSV_HEADER: &str =
    "strategy,repetition,requested_accuracy,achieved_v,met,sample_size,trainings,train_seconds,wall_seconds";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{},{},{:.6},{:.6}",
            self.strategy,
            self.repetition,
            self.requested_accuracy,
            self.achieved_v,
            self.met,
            self.sample_size,
            self.trainings,
            self.train_seconds,
            self.wall_seconds
        )
    }
}

fn train_on(
    spec: &ModelSpec,
    data: &DataSplit,
    n: usize,
    config: &RunConfig,
    seed: u64,
) -> Result<(TrainedModel, f64)> {
    let population = data.train.n_rows();
    let d = data.train.select(&sample_indices(population, n, seed)?);
    let t = Instant::now();
    let fit = minimize(spec, &d, &config.optimizer, None)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        TrainedModel {
            spec: *spec,
            layout: spec.layout(d.dim()),
            theta: fit.theta,
            n,
            population,
            converged: fit.converged,
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
        },
        secs,
    ))
}

/// Compare the contract workflow with the sample-size baselines on one
/// dataset. The full model is trained once as ground truth (reported as
/// strategy `full`).
#[allow(clippy::too_many_arguments)]
pub fn bench(
    spec: &ModelSpec,
    data: &DataSplit,
    accuracies_pct: &[f64],
    delta: f64,
    n0: usize,
    config: &RunConfig,
    repetitions: usize,
    master_seed: u64,
) -> Result<Vec<BenchRow>> {
    let population = data.train.n_rows();
    if population.saturating_mul(data.train.dim()) > MAX_GROUND_TRUTH_CELLS {
        return invalid(format!(
            "{population} rows × {} features is too large to train a ground-truth full model; \
             subsample the dataset first",
            data.train.dim()
        ));
    }
    let t = Instant::now();
    let full = train_full(spec, data, config)?;
    let full_secs = t.elapsed().as_secs_f64();
    let mut rows = vec![BenchRow {
        strategy: "full".into(),
        repetition: 0,
        requested_accuracy: 100.0,
        achieved_v: 0.0,
        met: true,
        sample_size: population,
        trainings: 1,
        train_seconds: full_secs,
        wall_seconds: full_secs,
    }];
    let strategies = [
        Strategy::Contract,
        Strategy::Baseline(BaselineStrategy::FixedRatio),
        Strategy::Baseline(BaselineStrategy::RelativeRatio),
        Strategy::Baseline(BaselineStrategy::IncEstimator),
    ];
    for rep in 0..repetitions {
        for &acc in accuracies_pct {
            let contract = Contract::from_accuracy(acc, (1.0 - delta) * 100.0, n0)?;
            let eps = contract.eps;
            let seed = mix_seed(master_seed, (rep as u64) << 16 | acc.to_bits() & 0xffff);
            for strategy in strategies {
                let t = Instant::now();
                let (model, trainings, train_secs) = match strategy {
                    Strategy::Contract => {
                        let r = train_with_contract(spec, data, &contract, config, seed)?;
                        let ts = r.timings.initial_training + r.timings.final_training;
                        (r.model().clone(), r.trainings_performed, ts)
                    }
                    Strategy::Baseline(b @ BaselineStrategy::IncEstimator) => {
                        let mut total = 0.0;
                        let mut it = 1;
                        loop {
                            let n = baseline_size(b, eps, population, it)?;
                            let (m, s) = train_on(spec, data, n, config, seed)?;
                            total += s;
                            let v = spec.diff(&m, &full, &data.holdout)?;
                            if v <= eps || n == population {
                                break (m, it, total);
                            }
                            it += 1;
                        }
                    }
                    Strategy::Baseline(b) => {
                        let n = baseline_size(b, eps, population, 1)?;
                        let (m, s) = train_on(spec, data, n, config, seed)?;
                        (m, 1, s)
                    }
                };
                let wall = t.elapsed().as_secs_f64();
                let v = spec.diff(&model, &full, &data.holdout)?;
                rows.push(BenchRow {
                    strategy: strategy.name().into(),
                    repetition: rep,
                    requested_accuracy: acc,
                    achieved_v: v,
                    met: v <= eps,
                    sample_size: model.n,
                    trainings,
                    train_seconds: train_secs,
                    wall_seconds: wall,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcs::ModelKind;

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.05), 5.0);
        assert_eq!(quantile(&v, 0.5), 50.0);
    }

    #[test]
    fn trivial_contract_always_passes() {
        let spec = ModelSpec::lr(0.001);
        let g = Generator::new(ModelKind::Lr, 3);
        let c = Contract::new(1.0, 0.05, 500).unwrap();
        let s = coverage(&spec, &g, 2000, &c, &RunConfig::default(), 3, 1).unwrap();
        assert_eq!(s.pass_rate, 1.0);
        assert_eq!(s.max_trainings, 1);
    }
}
