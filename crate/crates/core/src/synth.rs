//! Synthetic datasets with known generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{split, DataSplit, Dataset};
use crate::error::{invalid, Result};
use crate::exec::map_chunks;
use crate::mcs::{sigmoid, ModelKind};

const GEN_CHUNK: usize = 4096;

/// Which generator to use and its shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub kind: ModelKind,
    /// Feature dimension including the trailing constant column (supervised kinds).
    pub dim: usize,
    /// Norm of the planted coefficient vector (supervised) or factor scale (PPCA).
    pub signal: f64,
    /// Label noise standard deviation (Lin) or isotropic noise variance (PPCA).
    pub noise: f64,
}

impl Generator {
    pub fn new(kind: ModelKind, dim: usize) -> Self {
        let (signal, noise) = match kind {
            ModelKind::Lin => (1.0, 1.0),
            ModelKind::Lr | ModelKind::Me { .. } => (2.0, 0.0),
            ModelKind::Ppca { .. } => (2.0, 0.5),
        };
        Self {
            kind,
            dim,
            signal,
            noise,
        }
    }

    /// Planted parameters; deterministic in `seed`.
    pub fn truth(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = match self.kind {
            ModelKind::Me { classes } => classes,
            ModelKind::Ppca { factors } => factors,
            _ => 1,
        };
        let mut w: Vec<f64> = (0..self.dim * blocks)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = (w.iter().map(|v| v * v).sum::<f64>() / blocks as f64).sqrt();
        w.iter_mut().for_each(|v| *v *= self.signal / norm);
        w
    }

    /// `n` rows from the generator. Supervised kinds get a constant last feature.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
        if self.dim < 2 && self.kind.is_supervised() {
            return invalid("supervised generators need dim >= 2 (one column is the intercept)");
        }
        if let ModelKind::Ppca { factors } = self.kind {
            if factors >= self.dim {
                return invalid("PPCA generator needs q < d");
            }
        }
        let truth = self.truth(seed);
        let d = self.dim;
        let parts = map_chunks(n, GEN_CHUNK, |range| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + (range.start / GEN_CHUNK) as u64);
            let mut xs = Vec::with_capacity(range.len() * d);
            let mut ys = Vec::with_capacity(range.len());
            for _ in range {
                let row = self.row(&truth, &mut rng);
                xs.extend_from_slice(&row.0);
                ys.push(row.1);
            }
            (xs, ys)
        });
        let mut xs = Vec::with_capacity(n * d);
        let mut ys = Vec::with_capacity(n);
        for (x, y) in parts {
            xs.extend(x);
            ys.extend(y);
        }
        let labels = self.kind.is_supervised().then_some(ys);
        Ok((Dataset::dense(xs, d, labels)?, truth))
    }

    fn row(&self, truth: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let d = self.dim;
        match self.kind {
            ModelKind::Ppca { factors } => {
                let z: Vec<f64> = (0..factors).map(|_| StandardNormal.sample(rng)).collect();
                let sd = self.noise.sqrt();
                let x = (0..d)
                    .map(|j| {
                        let e: f64 = StandardNormal.sample(rng);
                        (0..factors).map(|k| truth[j * factors + k] * z[k]).sum::<f64>() + sd * e
                    })
                    .collect();
                (x, 0.0)
            }
            _ => {
                let mut x: Vec<f64> = (0..d - 1).map(|_| StandardNormal.sample(rng)).collect();
                x.push(1.0);
                let y = match self.kind {
                    ModelKind::Lin => {
                        let e: f64 = StandardNormal.sample(rng);
                        dot(truth, &x) + self.noise * e
                    }
                    ModelKind::Lr => f64::from(rng.random::<f64>() < sigmoid(dot(truth, &x))),
                    ModelKind::Me { classes } => {
                        let s: Vec<f64> = (0..classes)
                            .map(|k| dot(&truth[k * d..(k + 1) * d], &x))
                            .collect();
                        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let w: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                        let total: f64 = w.iter().sum();
                        let mut u = rng.random::<f64>() * total;
                        let mut class = classes - 1;
                        for (k, wk) in w.iter().enumerate() {
                            if u < *wk {
                                class = k;
                                break;
                            }
                            u -= wk;
                        }
                        class as f64
                    }
                    ModelKind::Ppca { .. } => unreachable!(),
                };
                (x, y)
            }
        }
    }

    /// Generate `n_train / (1 − holdout_frac)` rows and split them so the
    /// training side has about `n_train` rows.
    pub fn split(&self, n_train: usize, holdout_frac: f64, seed: u64) -> Result<DataSplit> {
        let total = (n_train as f64 / (1.0 - holdout_frac)).round() as usize;
        let (data, _) = self.sample(total, seed)?;
        split(&data, holdout_frac, seed ^ 0x5151)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let g = Generator::new(ModelKind::Lr, 4);
        let (a, t) = g.sample(5000, 3).unwrap();
        let (b, _) = g.sample(5000, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n_rows(), a.dim(), t.len()), (5000, 4, 4));
        assert_eq!(a.row(17).to_dense(4)[3], 1.0);
        let ones = a.labels().unwrap().iter().filter(|v| **v == 1.0).count();
        assert!(ones > 500 && ones < 4500);
    }

    #[test]
    fn me_labels_in_range() {
        let g = Generator::new(ModelKind::Me { classes: 3 }, 3);
        let (a, _) = g.sample(1000, 1).unwrap();
        assert_eq!(a.class_count(), Some(3));
    }

    #[test]
    fn split_sizes() {
        let s = Generator::new(ModelKind::Lin, 3).split(800, 0.2, 9).unwrap();
        assert_eq!((s.train.n_rows(), s.holdout.n_rows()), (800, 200));
    }
}
