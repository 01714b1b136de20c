//! `quickfit` command-line front end.

mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use quickfit::coordinator::{estimate_accuracy_only, estimate_size_only, RunReport};
use quickfit::data::{split, DataSplit};
use quickfit::experiments::{bench, coverage, BENCH_CSV_HEADER};
use quickfit::mcs::ModelKind;
use quickfit::synth::Generator;
use quickfit::{load_dataset, train_with_contract, ModelSpec};

use args::{Cli, Command, DataArgs, ModelArgs, Usage};

/// Contract met on a sample smaller than the training set.
const EXIT_OK: u8 = 0;
/// Runtime failure.
const EXIT_ERROR: u8 = 1;
/// Contract met only by training on the whole training set.
const EXIT_SATURATED: u8 = 2;
/// Invalid flags or configuration.
const EXIT_USAGE: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    }))
    .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let usage = e.downcast_ref::<Usage>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_ERROR })
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    set_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => {
            let spec_data = prepare(&a.data, &a.model, a.run.holdout_frac)?;
            let contract = a.contract.contract()?;
            let config = a.run.config()?;
            let mut report = train_with_contract(&spec_data.spec, &spec_data.split, &contract, &config, a.run.seed)?;
            report.label_map = spec_data.label_map;
            emit_report(&report, a.output.as_deref())?;
            Ok(exit_for(&report))
        }
        Command::Accuracy(a) => {
            let spec_data = prepare(&a.data, &a.model, a.run.holdout_frac)?;
            let delta = a.confidence.delta()?;
            let config = a.run.config()?;
            let population = spec_data.split.train.n_rows();
            if a.n == 0 || a.n > population {
                return Err(Usage(format!("--n must be in 1..={population}, got {}", a.n)).into());
            }
            let mut report =
                estimate_accuracy_only(&spec_data.spec, &spec_data.split, a.n, delta, &config, a.run.seed)?;
            report.label_map = spec_data.label_map;
            emit_report(&report, a.output.as_deref())?;
            Ok(exit_for(&report))
        }
        Command::Size(a) => {
            let spec_data = prepare(&a.data, &a.model, a.run.holdout_frac)?;
            let contract = a.contract.contract()?;
            let config = a.run.config()?;
            let (m0, est) = estimate_size_only(&spec_data.spec, &spec_data.split, &contract, &config, a.run.seed)?;
            let population = spec_data.split.train.n_rows();
            let json = serde_json::json!({
                "contract": contract,
                "population": population,
                "initial_model": m0,
                "size_estimate": est,
                "label_map": spec_data.label_map,
            });
            let summary = format!(
                "estimated n*={} of N={population} for ε={} δ={} after {} probes{}",
                est.n_star,
                contract.eps,
                contract.delta,
                est.probes.len(),
                if est.saturated { " (saturated)" } else { "" }
            );
            emit(&serde_json::to_string_pretty(&json)?, &summary, a.output.as_deref())?;
            Ok(if est.saturated { EXIT_SATURATED } else { EXIT_OK })
        }
        Command::Bench(a) => {
            let spec_data = match (&a.data.data, a.synthetic) {
                (Some(_), None) => prepare(&a.data, &a.model, a.run.holdout_frac)?,
                (None, Some(n)) => synthetic(&a.model, n, a.dim, a.run.holdout_frac, a.run.seed)?,
                _ => return Err(Usage("give exactly one of --data and --synthetic".into()).into()),
            };
            let delta = a.confidence.delta()?;
            let accuracies = a.accuracies()?;
            if a.repetitions == 0 {
                return Err(Usage("--repetitions must be at least 1".into()).into());
            }
            let config = a.run.config()?;
            let rows = bench(
                &spec_data.spec,
                &spec_data.split,
                &accuracies,
                delta,
                a.n0,
                &config,
                a.repetitions,
                a.run.seed,
            )?;
            let mut csv = String::from(BENCH_CSV_HEADER);
            csv.push('\n');
            for r in &rows {
                csv.push_str(&r.csv());
                csv.push('\n');
            }
            let met = rows.iter().filter(|r| r.strategy == "contract" && r.met).count();
            let total = rows.iter().filter(|r| r.strategy == "contract").count();
            let summary = format!("contract strategy met the requested accuracy in {met}/{total} runs");
            emit(&csv, &summary, a.output.as_deref())?;
            Ok(EXIT_OK)
        }
        Command::Coverage(a) => {
            if a.runs < 20 {
                return Err(Usage(format!("--runs must be at least 20, got {}", a.runs)).into());
            }
            if a.run.holdout_frac != 0.2 {
                return Err(Usage("coverage runs always hold out 20% of the generated rows".into()).into());
            }
            let spec = a.model.spec(a.dim, None)?;
            let contract = a.contract.contract()?;
            let config = a.run.config()?;
            let generator = generator(spec.kind, a.dim)?;
            let s = coverage(&spec, &generator, a.n, &contract, &config, a.runs, a.run.seed)?;
            let mut csv = String::from(
                "run,seed,n_used,eps_estimated,v_actual,within_contract,trainings,eps_g,full_error,generalization_ok,seconds\n",
            );
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            for r in &s.runs {
                csv.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{},{},{},{},{},{:.4}\n",
                    r.run,
                    r.seed,
                    r.n_used,
                    r.eps_estimated,
                    r.v_actual,
                    r.within_contract,
                    r.trainings,
                    opt(r.eps_g),
                    opt(r.full_error),
                    r.generalization_ok.map(|g| g.to_string()).unwrap_or_default(),
                    r.seconds
                ));
            }
            let summary = format!(
                "pass rate {:.3} over {} runs; v quantiles p5={:.5} p50={:.5} p95={:.5}; max trainings {}{}",
                s.pass_rate,
                s.runs.len(),
                s.v_quantiles[0],
                s.v_quantiles[1],
                s.v_quantiles[2],
                s.max_trainings,
                s.generalization_rate
                    .map(|g| format!("; generalization bound held in {:.3}", g))
                    .unwrap_or_default()
            );
            emit(&csv, &summary, a.output.as_deref())?;
            if let Some(path) = &a.summary {
                fs::write(path, serde_json::to_string_pretty(&s)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    let Some(t) = threads else {
        return Ok(());
    };
    if t == 0 {
        return Err(Usage("--threads must be at least 1".into()).into());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    if t > 1 {
        log::warn!("built without the parallel feature; ignoring --threads {t}");
    }
    Ok(())
}

fn exit_for(report: &RunReport) -> u8 {
    if report.saturated {
        EXIT_SATURATED
    } else {
        EXIT_OK
    }
}

fn emit_report(report: &RunReport, output: Option<&Path>) -> Result<()> {
    let m = report.model();
    let summary = format!(
        "trained: n={} of N={}, ε={:.5} (requested {:.5}, δ={}), {} training(s), {:.2}s{}{}",
        m.n,
        report.population,
        report.accuracy().epsilon,
        report.contract.eps,
        report.contract.delta,
        report.trainings_performed,
        report.timings.total,
        if report.saturated { " (saturated)" } else { "" },
        if report.final_bound_within { "" } else { "; re-estimated bound exceeds the request" }
    );
    emit(&report.to_json(), &summary, output)
}

/// Write `body` to `output` (summary on stdout) or to stdout (summary on stderr).
fn emit(body: &str, summary: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => {
            fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
            println!("{summary}");
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
            if !body.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            eprintln!("{summary}");
        }
    }
    Ok(())
}

struct Prepared {
    spec: ModelSpec,
    split: DataSplit,
    label_map: Option<quickfit::data::LabelMap>,
}

fn prepare(data: &DataArgs, model: &ModelArgs, holdout_frac: f64) -> Result<Prepared> {
    let path = data
        .data
        .as_deref()
        .ok_or_else(|| Usage("--data is required".into()))?;
    let kind = model.kind();
    let label = match (kind.is_supervised(), data.format, data.label.as_deref()) {
        (true, args::Format::Csv, None) => {
            return Err(Usage(format!("--label is required for model '{}'", kind.id())).into())
        }
        (true, args::Format::Svm, l) => Some(l.unwrap_or("label")),
        (_, _, l) => l,
    };
    let mut dataset = load_dataset(path, data.format.into(), label)
        .with_context(|| format!("loading {}", path.display()))?;
    if !kind.is_supervised() {
        dataset = dataset.without_labels();
    }
    let label_map = if kind.is_classifier() {
        Some(dataset.encode_classes()?)
    } else {
        None
    };
    let found = label_map.as_ref().map(|m| m.values.len());
    let spec = model.spec(dataset.dim(), found)?;
    let split = split(&dataset, holdout_frac, data_seed(holdout_frac))?;
    Ok(Prepared {
        spec,
        split,
        label_map,
    })
}

/// Seed of the train/holdout split; fixed so a dataset always splits the same way.
fn data_seed(holdout_frac: f64) -> u64 {
    0x5eed_0000 ^ holdout_frac.to_bits()
}

fn generator(kind: ModelKind, dim: usize) -> Result<Generator> {
    if dim < 2 {
        return Err(Usage("--dim must be at least 2".into()).into());
    }
    Ok(Generator::new(kind, dim))
}

fn synthetic(model: &ModelArgs, n: usize, dim: usize, holdout_frac: f64, seed: u64) -> Result<Prepared> {
    let spec = model.spec(dim, None)?;
    let split = generator(spec.kind, dim)?.split(n, holdout_frac, seed)?;
    Ok(Prepared {
        spec,
        split,
        label_map: None,
    })
}
