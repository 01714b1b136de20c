use nalgebra::DMatrix;
use quickfit::data::Dataset;
use quickfit::mcs::{Counting, Mcs, ModelKind, ModelSpec};
use quickfit::optimizer::{minimize, minimize_preconditioned, Method, OptimizerConfig};
use quickfit::stats::closed_form;
use quickfit::synth::Generator;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn separable() -> Dataset {
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let t = i as f64 / 100.0 - 1.0 + 0.005;
            vec![t, (i % 7) as f64 / 7.0, 1.0]
        })
        .collect();
    let labels = rows.iter().map(|r| f64::from(r[0] > 0.0)).collect();
    Dataset::from_rows(&rows, Some(labels)).unwrap()
}

#[test]
fn separable_logistic_converges_with_regularizer() {
    let spec = ModelSpec::lr(0.01);
    let data = separable();
    for method in [Method::Bfgs, Method::Lbfgs] {
        let cfg = OptimizerConfig {
            method: Some(method),
            ..Default::default()
        };
        let fit = minimize(&spec, &data, &cfg, None).unwrap();
        assert!(fit.converged, "{method:?}");
        assert_eq!(fit.method, method);
        let (_, g) = spec.value_grad(&fit.theta, &data).unwrap();
        assert!(inf_norm(&g) <= 1e-6, "{method:?}: {}", inf_norm(&g));
        assert!((fit.grad_norm - inf_norm(&g)).abs() < 1e-12);
        assert!(fit.theta[0] > 0.0);
    }
}

#[test]
fn objective_trace_never_increases() {
    for kind in [ModelKind::Lr, ModelKind::Me { classes: 3 }, ModelKind::Ppca { factors: 2 }] {
        let spec = ModelSpec::new(kind, 0.001).unwrap();
        let (data, _) = Generator::new(kind, 6).sample(2000, 3).unwrap();
        let fit = minimize(&spec, &data, &OptimizerConfig::default(), None).unwrap();
        assert!(fit.converged, "{kind:?}");
        assert_eq!(fit.trace.len(), fit.iterations + 1);
        for w in fit.trace.windows(2) {
            assert!(w[1] <= w[0], "{kind:?}: {} then {}", w[0], w[1]);
        }
        assert_eq!(*fit.trace.last().unwrap(), fit.objective);
    }
}

#[test]
fn methods_reach_the_same_optimum() {
    let spec = ModelSpec::me(3, 0.01);
    let (data, _) = Generator::new(ModelKind::Me { classes: 3 }, 5).sample(3000, 8).unwrap();
    let fit = |m| {
        let cfg = OptimizerConfig {
            method: Some(m),
            grad_tol: 1e-9,
            ..Default::default()
        };
        minimize(&spec, &data, &cfg, None).unwrap().theta
    };
    let a = fit(Method::Bfgs);
    let b = fit(Method::Lbfgs);
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn repeated_runs_are_identical() {
    let spec = ModelSpec::lr(0.001);
    let (data, _) = Generator::new(ModelKind::Lr, 8).sample(5000, 2).unwrap();
    let cfg = OptimizerConfig::default();
    let a = minimize(&spec, &data, &cfg, None).unwrap();
    let b = minimize(&spec, &data, &cfg, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exact_inverse_hessian_needs_few_steps() {
    let spec = ModelSpec::lin(0.01);
    let (data, _) = Generator::new(ModelKind::Lin, 6).sample(500, 4).unwrap();
    let h = closed_form(&spec, &[0.0; 6], &data).unwrap().inverse_hessian().unwrap();
    let cfg = OptimizerConfig::default();
    let plain = minimize(&spec, &data, &cfg, Some(&[0.0; 6])).unwrap();
    let pre = minimize_preconditioned(&spec, &data, &cfg, &[0.0; 6], &h).unwrap();
    // A quadratic with its exact inverse Hessian is solved by the first Newton step.
    assert!(pre.iterations <= 2, "{}", pre.iterations);
    assert!(pre.iterations <= plain.iterations);
    let gap = pre.theta.iter().zip(&plain.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-5);
    assert!(minimize_preconditioned(&spec, &data, &cfg, &[0.0; 6], &DMatrix::identity(3, 3)).is_err());
}

#[test]
fn warm_start_at_optimum_stops_immediately() {
    let spec = ModelSpec::lr(0.01);
    let (data, _) = Generator::new(ModelKind::Lr, 4).sample(1000, 6).unwrap();
    let cfg = OptimizerConfig::default();
    let fit = minimize(&spec, &data, &cfg, None).unwrap();
    let counter = Counting::new(&spec);
    let again = minimize(&counter, &data, &cfg, Some(&fit.theta)).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.theta, fit.theta);
    assert_eq!(counter.grads_calls(), 0);
    assert!(counter.eval_calls() >= 1);
    assert_eq!(counter.spec(), &spec);
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let spec = ModelSpec::lr(0.0);
    let cfg = OptimizerConfig {
        max_iters: 1,
        ..Default::default()
    };
    let fit = minimize(&spec, &separable(), &cfg, None).unwrap();
    assert!(!fit.converged);
    assert_eq!(fit.iterations, 1);
}

#[test]
fn invalid_inputs_are_rejected() {
    let spec = ModelSpec::lr(0.0);
    let data = separable();
    let bad = OptimizerConfig {
        grad_tol: 0.0,
        ..Default::default()
    };
    assert!(minimize(&spec, &data, &bad, None).is_err());
    assert!(minimize(&spec, &data, &OptimizerConfig::default(), Some(&[0.0; 2])).is_err());
    assert!(minimize(&spec, &data, &OptimizerConfig::default(), Some(&[f64::NAN, 0.0, 0.0])).is_err());
}
