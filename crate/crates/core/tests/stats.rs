use nalgebra::DMatrix;
use quickfit::mcs::{Counting, ModelKind, ModelSpec};
use quickfit::optimizer::{minimize, OptimizerConfig};
use quickfit::stats::{
    alpha, closed_form, covariance_explicit, inverse_gradients, observed_fisher, HessianPair, StatFactors,
    Statistics, DEFAULT_FD_EPS,
};
use quickfit::synth::Generator;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn fitted(kind: ModelKind, d: usize, n: usize, beta: f64, seed: u64) -> (ModelSpec, quickfit::Dataset, Vec<f64>) {
    let spec = ModelSpec::new(kind, beta).unwrap();
    let (data, _) = Generator::new(kind, d).sample(n, seed).unwrap();
    let theta = minimize(&spec, &data, &OptimizerConfig::default(), None).unwrap().theta;
    (spec, data, theta)
}

#[test]
fn inverse_gradients_matches_closed_form_for_least_squares() {
    let (spec, data, theta) = fitted(ModelKind::Lin, 6, 500, 0.01, 1);
    let cf = closed_form(&spec, &theta, &data).unwrap();
    let ig = inverse_gradients(&spec, &theta, &data, DEFAULT_FD_EPS).unwrap();
    assert!(rel(&ig.h, &cf.h) < 1e-4, "{}", rel(&ig.h, &cf.h));
    assert!(rel(&ig.j, &cf.j) < 1e-4);
}

#[test]
fn inverse_gradients_matches_closed_form_for_logistic() {
    let (spec, data, theta) = fitted(ModelKind::Lr, 5, 2000, 0.001, 2);
    let cf = closed_form(&spec, &theta, &data).unwrap();
    let ig = inverse_gradients(&spec, &theta, &data, DEFAULT_FD_EPS).unwrap();
    assert!(rel(&ig.h, &cf.h) < 1e-4, "{}", rel(&ig.h, &cf.h));
    assert_eq!(ig.h, ig.h.transpose());
}

#[test]
fn gradient_call_counts() {
    let (spec, data, theta) = fitted(ModelKind::Me { classes: 3 }, 4, 300, 0.01, 3);
    let c = Counting::new(&spec);
    observed_fisher(&c, &theta, &data).unwrap();
    assert_eq!(c.grads_calls(), 1);
    let c = Counting::new(&spec);
    inverse_gradients(&c, &theta, &data, DEFAULT_FD_EPS).unwrap();
    assert_eq!(c.grads_calls(), theta.len() + 1);
    assert_eq!(c.eval_calls(), 0);
}

#[test]
fn observed_fisher_approaches_closed_form() {
    // Well-specified logistic model: the score covariance equals the Hessian of the loss.
    let (spec, data, theta) = fitted(ModelKind::Lr, 5, 50_000, 0.0, 4);
    let cf = closed_form(&spec, &theta, &data).unwrap();
    let of = observed_fisher(&spec, &theta, &data).unwrap();
    let gap = rel(&of.implied_j(), &cf.j);
    assert!(gap < 0.05, "relative gap {gap}");
}

/// `H⁻¹JH⁻¹` built directly from the per-example scores.
fn sandwich_oracle(spec: &ModelSpec, theta: &[f64], data: &quickfit::Dataset) -> DMatrix<f64> {
    let g = spec.grads(theta, data).unwrap();
    let (n, dp) = (g.n, g.dp);
    let scores: Vec<Vec<f64>> = g
        .rows()
        .map(|r| r.iter().zip(theta).map(|(v, t)| v - spec.beta * t).collect())
        .collect();
    let mean: Vec<f64> = (0..dp).map(|k| scores.iter().map(|s| s[k]).sum::<f64>() / n as f64).collect();
    let mut j = DMatrix::zeros(dp, dp);
    for s in &scores {
        for a in 0..dp {
            for b in 0..dp {
                j[(a, b)] += (s[a] - mean[a]) * (s[b] - mean[b]) / n as f64;
            }
        }
    }
    let h_inv = (&j + DMatrix::identity(dp, dp) * spec.beta).try_inverse().unwrap();
    &h_inv * j * &h_inv
}

#[test]
fn factor_covariance_matches_direct_sandwich_in_both_regimes() {
    // n > dp uses the SVD of Q, n < dp the SVD of Qᵀ.
    for (n, classes) in [(400, 3), (20, 6)] {
        let kind = ModelKind::Me { classes };
        let spec = ModelSpec::new(kind, 0.05).unwrap();
        let (data, _) = Generator::new(kind, 8).sample(n, 5).unwrap();
        let theta = minimize(&spec, &data, &OptimizerConfig::default(), None).unwrap().theta;
        let of = observed_fisher(&spec, &theta, &data).unwrap();
        let fast = covariance_explicit(Statistics::Factors(&of), 1.0, 2000).unwrap();
        let direct = sandwich_oracle(&spec, &theta, &data);
        assert!(rel(&fast, &direct) < 1e-8, "n={n}: {}", rel(&fast, &direct));
        let via_pair = covariance_explicit(Statistics::Pair(&of.to_pair()), 1.0, 2000).unwrap();
        assert!(rel(&via_pair, &direct) < 1e-8);
        assert!(of.rank() <= n.min(theta.len()));
    }
}

#[test]
fn factor_inverse_hessian_matches_explicit_inverse() {
    let (spec, data, theta) = fitted(ModelKind::Lr, 6, 30, 0.1, 6);
    let of = observed_fisher(&spec, &theta, &data).unwrap();
    let pair = of.to_pair();
    let gap = rel(&of.inverse_hessian(), &pair.inverse_hessian().unwrap());
    assert!(gap < 1e-10, "{gap}");
}

#[test]
fn scaling_by_alpha() {
    let pair = HessianPair::from_j(DMatrix::identity(2, 2) * 3.0, 1.0);
    let a = alpha(10, 40).unwrap();
    assert!((a - 0.075).abs() < 1e-15);
    let cov = covariance_explicit(Statistics::Pair(&pair), a, 10).unwrap();
    // H = 4I, J = 3I: H⁻¹JH⁻¹ = 3/16 I.
    assert!((cov[(0, 0)] - a * 3.0 / 16.0).abs() < 1e-15);
    assert!(covariance_explicit(Statistics::Pair(&pair), a, 1).is_err());
    assert_eq!(alpha(40, 40).unwrap(), 0.0);
    assert!(alpha(0, 40).is_err() && alpha(41, 40).is_err());
}

#[test]
fn degenerate_scores_are_reported() {
    let spec = ModelSpec::lin(0.0);
    let data = quickfit::Dataset::from_rows(&[vec![1.0], vec![1.0], vec![1.0]], Some(vec![2.0, 2.0, 2.0])).unwrap();
    assert!(observed_fisher(&spec, &[2.0], &data).is_err());
    let f = StatFactors {
        u: DMatrix::identity(1, 1),
        s: vec![2.0],
        beta: 0.0,
        n: 3,
    };
    assert_eq!(f.lambda(), vec![0.5]);
}

#[test]
fn closed_form_rejects_other_classes() {
    let (spec, data, theta) = fitted(ModelKind::Me { classes: 2 }, 3, 100, 0.01, 7);
    assert!(closed_form(&spec, &theta, &data).is_err());
}

#[test]
fn estimated_variance_tracks_resampled_variance() {
    // Disjoint blocks of one generated dataset share the planted model:
    // compare the spread of their fits with the spread the statistics predict.
    let spec = ModelSpec::lin(0.001);
    let g = Generator::new(ModelKind::Lin, 4);
    let reps = 200;
    let mut ratios = Vec::new();
    for n in [5000, 10_000] {
        let (pool, _) = g.sample(n * reps, n as u64).unwrap();
        let fits: Vec<Vec<f64>> = (0..reps)
            .map(|r| {
                let idx: Vec<usize> = (r * n..(r + 1) * n).collect();
                spec.solve(&pool.select(&idx)).unwrap()
            })
            .collect();
        let dp = fits[0].len();
        let mut empirical = 0.0;
        for k in 0..dp {
            let m = fits.iter().map(|f| f[k]).sum::<f64>() / reps as f64;
            empirical += fits.iter().map(|f| (f[k] - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        }
        let data = pool.select(&(0..n).collect::<Vec<_>>());
        let theta = spec.solve(&data).unwrap();
        let of = observed_fisher(&spec, &theta, &data).unwrap();
        let estimated = covariance_explicit(Statistics::Factors(&of), 1.0 / n as f64, 100).unwrap().trace();
        let ratio = estimated / empirical;
        assert!((0.8..=2.0).contains(&ratio), "n={n}: ratio {ratio}");
        ratios.push(ratio);
    }
    println!("variance ratios {ratios:?}");
}
