//! Holdout scores for batches of parameter vectors.
//!
//! Lin, LR and ME predict from scores that are linear in θ, so the scores of
//! `θ₀ + c·b` are `S(θ₀) + c·S(b)`. Scoring a fixed bank of base draws once
//! lets every later rescaling of that bank be evaluated without touching the
//! features again.

use nalgebra::{DMatrix, DMatrixView};

use super::{ModelKind, ModelSpec};
use crate::data::{Dataset, Rows};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, ROW_CHUNK};

/// Largest score table (cells) built before falling back to per-draw evaluation.
pub(crate) const MAX_CELLS: usize = 1 << 24;

/// Scores of `count` parameter vectors on every holdout row.
#[derive(Debug, Clone)]
pub(crate) struct ScoreBank {
    /// Row `r` of the holdout owns `values[r·width..(r+1)·width]`; inside it,
    /// vector `i` owns `classes` consecutive scores.
    values: Vec<f64>,
    width: usize,
    classes: usize,
}

impl ScoreBank {
    pub(crate) fn count(&self) -> usize {
        self.width / self.classes
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.width..(r + 1) * self.width]
    }
}

impl ModelSpec {
    fn score_width(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Lin | ModelKind::Lr => Some(1),
            ModelKind::Me { classes } => Some(classes),
            ModelKind::Ppca { .. } => None,
        }
    }

    /// Scores for `params` (`count` concatenated parameter vectors). `None`
    /// when the class has no linear scores or the table would be too large.
    pub(crate) fn score_bank(&self, holdout: &Dataset, params: &[f64]) -> Result<Option<ScoreBank>> {
        let Some(classes) = self.score_width() else {
            return Ok(None);
        };
        let d = holdout.dim();
        let dp = self.param_dim(d);
        if params.is_empty() || !params.len().is_multiple_of(dp) {
            return Err(Error::Shape(format!(
                "{} values do not form parameter vectors of length {dp}",
                params.len()
            )));
        }
        let width = params.len() / dp * classes;
        let n = holdout.n_rows();
        if n.saturating_mul(width) > MAX_CELLS {
            return Ok(None);
        }
        // Wᵀ: column j holds feature j's coefficient for every (vector, class).
        let mut wt = DMatrix::<f64>::zeros(width, d);
        for (col, theta) in params.chunks_exact(d).enumerate() {
            for (j, v) in theta.iter().enumerate() {
                wt[(col, j)] = *v;
            }
        }
        let parts = map_chunks(n, ROW_CHUNK, |range| match holdout.storage() {
            Rows::Dense(values) => {
                let xt = DMatrixView::from_slice(&values[range.start * d..range.end * d], d, range.len());
                let block = &wt * xt;
                block.as_slice().to_vec()
            }
            Rows::Sparse { .. } => {
                let mut out = vec![0.0; range.len() * width];
                for (local, r) in range.enumerate() {
                    let dst = &mut out[local * width..(local + 1) * width];
                    if let crate::data::Row::Sparse(idx, val) = holdout.row(r) {
                        for (&j, &v) in idx.iter().zip(val) {
                            for (o, w) in dst.iter_mut().zip(wt.column(j as usize).iter()) {
                                *o += v * w;
                            }
                        }
                    }
                }
                out
            }
        });
        Ok(Some(ScoreBank {
            values: parts.concat(),
            width,
            classes,
        }))
    }

    /// Model difference for every vector `i` of the banks, comparing the
    /// model scored `base + ca·Aᵢ` with the one scored `base + ca·Aᵢ + cb·Bᵢ`.
    /// `base` holds a single vector; `first = None` means `ca = 0`.
    pub(crate) fn gaps_from_scores(
        &self,
        base: &ScoreBank,
        first: Option<(&ScoreBank, f64)>,
        second: (&ScoreBank, f64),
    ) -> Vec<f64> {
        let (bank_b, cb) = second;
        let k = bank_b.count();
        let classes = base.classes;
        let rows = base.values.len() / base.width;
        let kind = self.kind;
        let parts = map_chunks(rows, ROW_CHUNK, |range| {
            let mut acc = vec![0.0; k];
            if classes == 1 {
                let mut sa = vec![0.0; k];
                for r in range {
                    let b_row = bank_b.row(r);
                    if kind == ModelKind::Lin {
                        // The gap `cb·Bᵢ` does not depend on the first model.
                        for (slot, bv) in acc.iter_mut().zip(b_row) {
                            let g = cb * bv;
                            *slot += g * g;
                        }
                        continue;
                    }
                    let b0 = base.row(r)[0];
                    match first {
                        Some((a, ca)) => {
                            for (s, av) in sa.iter_mut().zip(a.row(r)) {
                                *s = b0 + ca * av;
                            }
                        }
                        None => sa.iter_mut().for_each(|s| *s = b0),
                    }
                    for ((slot, bv), s) in acc.iter_mut().zip(b_row).zip(&sa) {
                        let sb = s + cb * bv;
                        *slot += f64::from((*s >= 0.0) != (sb >= 0.0));
                    }
                }
                return acc;
            }
            let mut sa = vec![0.0; classes];
            let mut sb = vec![0.0; classes];
            for r in range {
                let b0 = base.row(r);
                let a_row = first.map(|(a, ca)| (a.row(r), ca));
                let b_row = bank_b.row(r);
                for (i, slot) in acc.iter_mut().enumerate() {
                    let off = i * classes;
                    for c in 0..classes {
                        sa[c] = match a_row {
                            Some((a, ca)) => b0[c] + ca * a[off + c],
                            None => b0[c],
                        };
                        sb[c] = sa[c] + cb * b_row[off + c];
                    }
                    *slot += f64::from(argmax(&sa) != argmax(&sb));
                }
            }
            acc
        });
        let mut total = vec![0.0; k];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
            .into_iter()
            .map(|s| {
                let mean = s / rows as f64;
                if self.kind == ModelKind::Lin {
                    mean.sqrt()
                } else {
                    mean
                }
            })
            .collect()
    }
}

/// Index of the largest score; ties go to the lowest index.
fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, v) in s.iter().enumerate() {
        if *v > best_score {
            best = k;
            best_score = *v;
        }
    }
    best
}
