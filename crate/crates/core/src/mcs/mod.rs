//! Model class specifications.
//!
//! A model class is described entirely by its per-example gradients, its
//! prediction function and a model-difference metric. Everything downstream
//! (optimizer, statistics, samplers, estimators) only talks to a model class
//! through the [`Mcs`] trait and [`ModelSpec`]'s prediction helpers.
//!
//! The objective has the form
//! `f_n(θ) = (1/n) Σ ℓ(θ; xᵢ, yᵢ) + (β/2)‖θ‖²`, so the per-example gradient
//! element is `q(θ; xᵢ, yᵢ) + βθ` and `mean(grads) = ∇f_n(θ)`.

mod linear;
mod maxent;
mod ppca;
mod scores;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Row};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_chunks, ROW_CHUNK};

pub use ppca::closed_form as ppca_closed_form;
pub(crate) use scores::ScoreBank;

/// Default L2 coefficient for Lin, LR and ME.
pub const DEFAULT_BETA: f64 = 0.001;
/// Default PPCA factor count.
pub const DEFAULT_FACTORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum ModelKind {
    /// Least-squares linear regression.
    Lin,
    /// Binary logistic regression.
    Lr,
    /// Multiclass max-entropy (softmax) classifier.
    Me {
        #[serde(rename = "K")]
        classes: usize,
    },
    /// Probabilistic PCA.
    Ppca {
        #[serde(rename = "q")]
        factors: usize,
    },
}

impl ModelKind {
    pub fn id(&self) -> &'static str {
        match self {
            ModelKind::Lin => "lin",
            ModelKind::Lr => "lr",
            ModelKind::Me { .. } => "me",
            ModelKind::Ppca { .. } => "ppca",
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, ModelKind::Lr | ModelKind::Me { .. })
    }

    pub fn is_supervised(&self) -> bool {
        !matches!(self, ModelKind::Ppca { .. })
    }
}

/// Shape of a flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Input feature dimension `d`.
    pub feature_dim: usize,
    /// Column blocks of length `d`: 1 (Lin/LR), K (ME, class-major) or q (PPCA, row-major `d×q`).
    pub blocks: usize,
    /// Trailing scalar parameters (PPCA noise variance).
    pub extra: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.feature_dim * self.blocks + self.extra
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub beta: f64,
}

/// Output of a single prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

impl ModelSpec {
    pub fn new(kind: ModelKind, beta: f64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return invalid(format!("regularization coefficient must be >= 0, got {beta}"));
        }
        match kind {
            ModelKind::Me { classes } if classes < 2 => {
                return invalid("max-entropy classifier needs K >= 2")
            }
            ModelKind::Ppca { factors: 0 } => return invalid("PPCA needs q >= 1"),
            _ => {}
        }
        Ok(Self { kind, beta })
    }

    pub fn lin(beta: f64) -> Self {
        Self::new(ModelKind::Lin, beta).unwrap()
    }

    pub fn lr(beta: f64) -> Self {
        Self::new(ModelKind::Lr, beta).unwrap()
    }

    pub fn me(classes: usize, beta: f64) -> Self {
        Self::new(ModelKind::Me { classes }, beta).unwrap()
    }

    pub fn ppca(factors: usize, beta: f64) -> Self {
        Self::new(ModelKind::Ppca { factors }, beta).unwrap()
    }

    pub fn layout(&self, feature_dim: usize) -> Layout {
        let (blocks, extra) = match self.kind {
            ModelKind::Lin | ModelKind::Lr => (1, 0),
            ModelKind::Me { classes } => (classes, 0),
            ModelKind::Ppca { factors } => (factors, 1),
        };
        Layout {
            feature_dim,
            blocks,
            extra,
        }
    }

    pub fn param_dim(&self, feature_dim: usize) -> usize {
        self.layout(feature_dim).len()
    }

    /// Check that `data` can be used with this model class.
    pub fn validate_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return invalid("dataset is empty");
        }
        match self.kind {
            ModelKind::Lin => {
                if data.labels().is_none() {
                    return invalid("linear regression needs labels");
                }
            }
            ModelKind::Lr | ModelKind::Me { .. } => {
                let k = match self.kind {
                    ModelKind::Me { classes } => classes,
                    _ => 2,
                };
                let Some(labels) = data.labels() else {
                    return invalid(format!("{} needs class labels", self.kind.id()));
                };
                if let Some(bad) = labels
                    .iter()
                    .find(|&&t| t < 0.0 || t.fract() != 0.0 || t as usize >= k)
                {
                    return invalid(format!("label {bad} is not a class index below {k}"));
                }
            }
            ModelKind::Ppca { factors } => {
                if factors >= data.dim() {
                    return invalid(format!(
                        "PPCA needs q < d, got q={factors}, d={}",
                        data.dim()
                    ));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_theta(&self, theta: &[f64], feature_dim: usize) -> Result<()> {
        let want = self.param_dim(feature_dim);
        if theta.len() != want {
            return Err(Error::Shape(format!(
                "{} parameter vector has length {}, expected {want}",
                self.kind.id(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Parameters the optimizer starts from when none are supplied.
    pub fn default_init(&self, feature_dim: usize, seed: u64) -> Vec<f64> {
        match self.kind {
            ModelKind::Ppca { factors } => ppca::initial_theta(feature_dim, factors, seed),
            _ => vec![0.0; self.param_dim(feature_dim)],
        }
    }

    fn kernel(&self, theta: &[f64], feature_dim: usize) -> Result<Box<dyn Kernel + '_>> {
        self.check_theta(theta, feature_dim)?;
        Ok(match self.kind {
            ModelKind::Lin => Box::new(linear::LeastSquares { theta: theta.to_vec() }),
            ModelKind::Lr => Box::new(linear::Logistic { theta: theta.to_vec() }),
            ModelKind::Me { classes } => Box::new(maxent::Softmax::new(theta, feature_dim, classes)),
            ModelKind::Ppca { factors } => Box::new(ppca::Ppca::prepare(theta, feature_dim, factors)?),
        })
    }

    /// Per-example regularized gradients; element `i` is `q(θ; xᵢ, yᵢ) + βθ`.
    pub fn grads(&self, theta: &[f64], data: &Dataset) -> Result<Grads> {
        self.validate_data(data)?;
        let kernel = self.kernel(theta, data.dim())?;
        let dp = theta.len();
        let n = data.n_rows();
        let parts = map_chunks(n, ROW_CHUNK, |range| {
            let mut block = vec![0.0; range.len() * dp];
            for (slot, i) in block.chunks_exact_mut(dp).zip(range) {
                kernel.loss_and_score(data.row(i), data.label(i), slot);
                for (g, t) in slot.iter_mut().zip(theta) {
                    *g += self.beta * t;
                }
            }
            block
        });
        let values = parts.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite per-example gradient".into()));
        }
        Ok(Grads { n, dp, values })
    }

    /// `f_n(θ)` and `∇f_n(θ)` in one pass over the data.
    pub fn value_grad(&self, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.validate_data(data)?;
        let kernel = self.kernel(theta, data.dim())?;
        let dp = theta.len();
        let n = data.n_rows();
        let parts = map_chunks(n, ROW_CHUNK, |range| {
            let mut g = vec![0.0; dp];
            let mut loss = 0.0;
            for i in range {
                loss += kernel.loss_and_score(data.row(i), data.label(i), &mut g);
            }
            (loss, g)
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; dp];
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let inv_n = 1.0 / n as f64;
        let mut sq = 0.0;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = *g * inv_n + self.beta * t;
            sq += t * t;
        }
        let value = loss * inv_n + 0.5 * self.beta * sq;
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite objective or gradient".into()));
        }
        Ok((value, grad))
    }

    /// `f_n(θ)`: mean negative log-likelihood plus `(β/2)‖θ‖²`.
    pub fn objective(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.validate_data(data)?;
        let kernel = self.kernel(theta, data.dim())?;
        let n = data.n_rows();
        let parts = map_chunks(n, ROW_CHUNK, |range| {
            range
                .map(|i| kernel.loss(data.row(i), data.label(i)))
                .sum::<f64>()
        });
        let sq: f64 = theta.iter().map(|t| t * t).sum();
        let value = parts.iter().sum::<f64>() / n as f64 + 0.5 * self.beta * sq;
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite objective".into()));
        }
        Ok(value)
    }

    /// Prediction `m(x; θ)` for a single feature vector.
    pub fn predict(&self, theta: &[f64], x: Row<'_>) -> Result<Prediction> {
        match self.kind {
            ModelKind::Lin => Ok(Prediction::Value(x.dot(theta))),
            ModelKind::Lr => Ok(Prediction::Class(usize::from(x.dot(theta) >= 0.0))),
            ModelKind::Me { classes } => {
                let d = theta.len() / classes;
                Ok(Prediction::Class(maxent::argmax_class(theta, d, classes, x)))
            }
            ModelKind::Ppca { .. } => Err(Error::Unsupported {
                class: "ppca",
                op: "predict",
            }),
        }
    }

    /// Model difference between parameters `a` and `b`.
    ///
    /// Classification: fraction of `holdout` rows where the predicted classes
    /// differ. Regression: root-mean-square prediction gap. PPCA: one minus
    /// the cosine similarity of the factor parts (noise variance excluded);
    /// `holdout` is ignored.
    pub fn diff_params(&self, a: &[f64], b: &[f64], holdout: &Dataset) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape("parameter vectors differ in length".into()));
        }
        if let ModelKind::Ppca { .. } = self.kind {
            let m = a.len() - 1;
            let dot: f64 = a[..m].iter().zip(&b[..m]).map(|(x, y)| x * y).sum();
            let na = a[..m].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b[..m].iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Numerical("cosine of a zero factor matrix".into()));
            }
            return Ok((1.0 - dot / (na * nb)).max(0.0));
        }
        if holdout.is_empty() {
            return invalid("difference needs a non-empty holdout set");
        }
        self.check_theta(a, holdout.dim())?;
        self.check_theta(b, holdout.dim())?;
        let n = holdout.n_rows();
        let parts = map_chunks(n, ROW_CHUNK, |range| {
            let mut acc = 0.0;
            for i in range {
                let x = holdout.row(i);
                acc += match self.kind {
                    ModelKind::Lin => {
                        let g = x.dot(a) - x.dot(b);
                        g * g
                    }
                    ModelKind::Lr => f64::from((x.dot(a) >= 0.0) != (x.dot(b) >= 0.0)),
                    ModelKind::Me { classes } => {
                        let d = a.len() / classes;
                        f64::from(
                            maxent::argmax_class(a, d, classes, x)
                                != maxent::argmax_class(b, d, classes, x),
                        )
                    }
                    ModelKind::Ppca { .. } => unreachable!(),
                };
            }
            acc
        });
        let mean = parts.iter().sum::<f64>() / n as f64;
        Ok(match self.kind {
            ModelKind::Lin => mean.sqrt(),
            _ => mean,
        })
    }

    /// Model difference between two trained models.
    pub fn diff(&self, m1: &TrainedModel, m2: &TrainedModel, holdout: &Dataset) -> Result<f64> {
        if m1.spec != *self || m2.spec != *self {
            return invalid("models were trained with a different model class specification");
        }
        self.diff_params(&m1.theta, &m2.theta, holdout)
    }

    /// Held-out error against the true labels: misclassification rate for
    /// classifiers, RMSE for regression. Unsupported for PPCA.
    pub fn holdout_error(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.validate_data(data)?;
        self.check_theta(theta, data.dim())?;
        let n = data.n_rows();
        let parts = map_chunks(n, ROW_CHUNK, |range| {
            let mut acc = 0.0;
            for i in range {
                let y = data.label(i).unwrap();
                acc += match self.predict(theta, data.row(i)) {
                    Ok(Prediction::Class(c)) => f64::from(c as f64 != y),
                    Ok(Prediction::Value(v)) => (v - y) * (v - y),
                    Err(_) => f64::NAN,
                };
            }
            acc
        });
        let mean = parts.iter().sum::<f64>() / n as f64;
        match self.kind {
            ModelKind::Ppca { .. } => Err(Error::Unsupported {
                class: "ppca",
                op: "holdout_error",
            }),
            ModelKind::Lin => Ok(mean.sqrt()),
            _ => Ok(mean),
        }
    }

    /// Closed-form optimum where one exists (Lin and PPCA).
    pub fn solve(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.validate_data(data)?;
        match self.kind {
            ModelKind::Lin => linear::solve_least_squares(data, self.beta),
            ModelKind::Ppca { factors } => ppca::solve(self, data, factors),
            _ => Err(Error::Unsupported {
                class: self.kind.id(),
                op: "solve",
            }),
        }
    }
}

/// Per-example computations for one fixed parameter vector.
trait Kernel: Sync {
    /// Negative log-likelihood of one example; adds its score `q` into `out`.
    fn loss_and_score(&self, x: Row<'_>, y: Option<f64>, out: &mut [f64]) -> f64;

    fn loss(&self, x: Row<'_>, y: Option<f64>) -> f64;
}

/// Per-example gradient matrix, row-major `n × dp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub n: usize,
    pub dp: usize,
    pub values: Vec<f64>,
}

impl Grads {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dp..(i + 1) * self.dp]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dp)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dp];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let inv = 1.0 / self.n as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }
}

/// The operations the training and estimation pipeline needs from a model class.
pub trait Mcs: Sync {
    fn spec(&self) -> &ModelSpec;

    fn grads(&self, theta: &[f64], data: &Dataset) -> Result<Grads> {
        self.spec().grads(theta, data)
    }

    fn value_grad(&self, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.spec().value_grad(theta, data)
    }

    fn objective(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.spec().objective(theta, data)
    }
}

impl Mcs for ModelSpec {
    fn spec(&self) -> &ModelSpec {
        self
    }
}

/// Wraps a model class and counts gradient and objective evaluations.
#[derive(Debug)]
pub struct Counting<'a, M: Mcs> {
    inner: &'a M,
    grads: AtomicUsize,
    evals: AtomicUsize,
}

impl<'a, M: Mcs> Counting<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            grads: AtomicUsize::new(0),
            evals: AtomicUsize::new(0),
        }
    }

    /// Calls to [`Mcs::grads`].
    pub fn grads_calls(&self) -> usize {
        self.grads.load(Ordering::SeqCst)
    }

    /// Calls to [`Mcs::value_grad`] and [`Mcs::objective`] (i.e. training work).
    pub fn eval_calls(&self) -> usize {
        self.evals.load(Ordering::SeqCst)
    }
}

impl<M: Mcs> Mcs for Counting<'_, M> {
    fn spec(&self) -> &ModelSpec {
        self.inner.spec()
    }

    fn grads(&self, theta: &[f64], data: &Dataset) -> Result<Grads> {
        self.grads.fetch_add(1, Ordering::SeqCst);
        self.inner.grads(theta, data)
    }

    fn value_grad(&self, theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
        self.evals.fetch_add(1, Ordering::SeqCst);
        self.inner.value_grad(theta, data)
    }

    fn objective(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.evals.fetch_add(1, Ordering::SeqCst);
        self.inner.objective(theta, data)
    }
}

/// A parameter vector together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(flatten)]
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub n: usize,
    #[serde(rename = "N")]
    pub population: usize,
    pub layout: Layout,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel =
            serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        if m.theta.len() != m.layout.len() || m.layout != m.spec.layout(m.layout.feature_dim) {
            return Err(Error::Shape("model layout does not match its parameters".into()));
        }
        Ok(m)
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
