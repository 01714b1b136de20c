use super::Kernel;
use crate::data::Row;

/// Softmax cross-entropy. Parameters are class-major: class `k` owns
/// `theta[k*d..(k+1)*d]`.
pub(super) struct Softmax {
    theta: Vec<f64>,
    d: usize,
    classes: usize,
}

impl Softmax {
    pub fn new(theta: &[f64], d: usize, classes: usize) -> Self {
        Self {
            theta: theta.to_vec(),
            d,
            classes,
        }
    }

    fn scores(&self, x: Row<'_>) -> Vec<f64> {
        (0..self.classes)
            .map(|k| x.dot(&self.theta[k * self.d..(k + 1) * self.d]))
            .collect()
    }
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Kernel for Softmax {
    fn loss_and_score(&self, x: Row<'_>, y: Option<f64>, out: &mut [f64]) -> f64 {
        let s = self.scores(x);
        let lse = log_sum_exp(&s);
        let t = y.unwrap_or(0.0) as usize;
        for (k, sk) in s.iter().enumerate() {
            let p = (sk - lse).exp() - f64::from(k == t);
            x.axpy(p, &mut out[k * self.d..(k + 1) * self.d]);
        }
        lse - s[t]
    }

    fn loss(&self, x: Row<'_>, y: Option<f64>) -> f64 {
        let s = self.scores(x);
        log_sum_exp(&s) - s[y.unwrap_or(0.0) as usize]
    }
}

/// `argmax_k θ_kᵀx`; ties go to the lowest class index.
pub(super) fn argmax_class(theta: &[f64], d: usize, classes: usize, x: Row<'_>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..classes {
        let s = x.dot(&theta[k * d..(k + 1) * d]);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    best
}
