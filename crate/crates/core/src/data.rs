//! In-memory datasets, file ingestion, train/holdout splitting and uniform
//! subsampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Feature storage, row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    Dense(Vec<f64>),
    /// CSR layout: row `i` owns `indices[indptr[i]..indptr[i+1]]`.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

/// Borrowed view of a single feature vector.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse(&'a [u32], &'a [f64]),
}

impl Row<'_> {
    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        match *self {
            Row::Dense(x) => x.iter().zip(w).map(|(a, b)| a * b).sum(),
            Row::Sparse(idx, val) => idx
                .iter()
                .zip(val)
                .map(|(&j, v)| v * w[j as usize])
                .sum(),
        }
    }

    /// `out += alpha * x`
    #[inline]
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        match *self {
            Row::Dense(x) => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o += alpha * v;
                }
            }
            Row::Sparse(idx, val) => {
                for (&j, v) in idx.iter().zip(val) {
                    out[j as usize] += alpha * v;
                }
            }
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        match *self {
            Row::Dense(x) => x.to_vec(),
            Row::Sparse(..) => {
                let mut out = vec![0.0; dim];
                self.axpy(1.0, &mut out);
                out
            }
        }
    }
}

/// A training corpus or one of its subsamples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Rows,
    labels: Option<Vec<f64>>,
    n_rows: usize,
    dim: usize,
}

impl Dataset {
    pub fn dense(values: Vec<f64>, dim: usize, labels: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return invalid("feature dimension must be at least 1");
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        let n_rows = values.len() / dim;
        Self::check_labels(&labels, n_rows)?;
        Ok(Self {
            rows: Rows::Dense(values),
            labels,
            n_rows,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Shape(format!(
                "row {i} has {} features, expected {dim}",
                r.len()
            )));
        }
        Self::dense(rows.concat(), dim, labels)
    }

    pub fn sparse(
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
        dim: usize,
        labels: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return invalid("feature dimension must be at least 1");
        }
        if indptr.is_empty() || *indptr.last().unwrap() != indices.len() || indices.len() != values.len()
        {
            return Err(Error::Shape("malformed CSR arrays".into()));
        }
        if indices.iter().any(|&j| j as usize >= dim) {
            return Err(Error::Shape(format!("sparse index out of range for dim {dim}")));
        }
        let n_rows = indptr.len() - 1;
        Self::check_labels(&labels, n_rows)?;
        Ok(Self {
            rows: Rows::Sparse {
                indptr,
                indices,
                values,
            },
            labels,
            n_rows,
            dim,
        })
    }

    fn check_labels(labels: &Option<Vec<f64>>, n_rows: usize) -> Result<()> {
        match labels {
            Some(l) if l.len() != n_rows => Err(Error::Shape(format!(
                "{} labels for {n_rows} rows",
                l.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.rows, Rows::Sparse { .. })
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels.as_ref().map(|l| l[i])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.rows {
            Rows::Dense(v) => Row::Dense(&v[i * self.dim..(i + 1) * self.dim]),
            Rows::Sparse {
                indptr,
                indices,
                values,
            } => {
                let (a, b) = (indptr[i], indptr[i + 1]);
                Row::Sparse(&indices[a..b], &values[a..b])
            }
        }
    }

    /// Underlying feature storage.
    pub fn storage(&self) -> &Rows {
        &self.rows
    }

    /// Copy the given rows, in the given order, into a new dataset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let labels = self
            .labels
            .as_ref()
            .map(|l| idx.iter().map(|&i| l[i]).collect());
        let rows = match &self.rows {
            Rows::Dense(v) => {
                let mut out = Vec::with_capacity(idx.len() * self.dim);
                for &i in idx {
                    out.extend_from_slice(&v[i * self.dim..(i + 1) * self.dim]);
                }
                Rows::Dense(out)
            }
            Rows::Sparse {
                indptr,
                indices,
                values,
            } => {
                let mut p = Vec::with_capacity(idx.len() + 1);
                let mut ix = Vec::new();
                let mut vs = Vec::new();
                p.push(0);
                for &i in idx {
                    let (a, b) = (indptr[i], indptr[i + 1]);
                    ix.extend_from_slice(&indices[a..b]);
                    vs.extend_from_slice(&values[a..b]);
                    p.push(ix.len());
                }
                Rows::Sparse {
                    indptr: p,
                    indices: ix,
                    values: vs,
                }
            }
        };
        Dataset {
            rows,
            labels,
            n_rows: idx.len(),
            dim: self.dim,
        }
    }

    /// Drop the labels (e.g. to treat a labelled file as unsupervised).
    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Re-encode labels as class indices `0..K` following the sorted distinct
    /// label values. Returns the mapping (index -> original value).
    pub fn encode_classes(&mut self) -> Result<LabelMap> {
        let Some(labels) = self.labels.as_mut() else {
            return invalid("dataset has no labels to encode");
        };
        let mut distinct: Vec<f64> = labels.clone();
        distinct.sort_by(|a, b| a.total_cmp(b));
        distinct.dedup();
        if distinct.len() < 2 {
            return invalid(format!(
                "classification needs at least 2 distinct labels, found {}",
                distinct.len()
            ));
        }
        for l in labels.iter_mut() {
            *l = distinct.binary_search_by(|v| v.total_cmp(l)).unwrap() as f64;
        }
        Ok(LabelMap { values: distinct })
    }

    /// Number of classes, assuming labels are already class indices.
    pub fn class_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1)
    }
}

/// Original label values indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    Csv,
    SparseSvm,
}

impl std::str::FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "sparse-svm" | "svm" | "libsvm" => Ok(FileFormat::SparseSvm),
            other => invalid(format!("unknown file format '{other}'")),
        }
    }
}

/// Label column: header name, or 0-based position when no header matches.
pub type LabelColumn<'a> = Option<&'a str>;

/// Load a dataset from disk.
///
/// For CSV the first line is a header; `label_col` picks the label column by
/// name (or by 0-based index). Without it every column is a feature. For the
/// sparse format the leading token of each line is the label; it is dropped
/// when `label_col` is `None`.
pub fn load_dataset(path: &Path, format: FileFormat, label_col: LabelColumn<'_>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        FileFormat::Csv => parse_csv(&text, label_col),
        FileFormat::SparseSvm => parse_sparse(&text, label_col.is_some()),
    }
}

pub fn parse_csv(text: &str, label_col: LabelColumn<'_>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let width = header.len();
    let label_idx = match label_col {
        None => None,
        Some(spec) => Some(match header.iter().position(|h| h == spec) {
            Some(i) => i,
            None => match spec.parse::<usize>() {
                Ok(i) if i < width => i,
                _ => return invalid(format!("label column '{spec}' not found in header")),
            },
        }),
    };
    let dim = width - usize::from(label_idx.is_some());
    if dim == 0 {
        return invalid("no feature columns");
    }
    let mut values = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(Error::DimensionMismatch {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell '{cell}' in column {}", j + 1),
            })?;
            if Some(j) == label_idx {
                labels.as_mut().unwrap().push(v);
            } else {
                values.push(v);
            }
        }
    }
    Dataset::dense(values, dim, labels)
}

/// Parse `label idx:val idx:val ...` lines with 1-based indices.
pub fn parse_sparse(text: &str, keep_labels: bool) -> Result<Dataset> {
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label = toks.next().unwrap();
        labels.push(label.parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad label '{label}'"),
        })?);
        let start = indices.len();
        for tok in toks {
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected idx:val, got '{tok}'"),
            })?;
            let i: u32 = i.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad index '{i}'"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "indices are 1-based".into(),
                });
            }
            let v: f64 = v.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad value '{v}'"),
            })?;
            if indices.len() > start && *indices.last().unwrap() >= i - 1 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "indices must be strictly increasing".into(),
                });
            }
            dim = dim.max(i as usize);
            indices.push(i - 1);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    Dataset::sparse(
        indptr,
        indices,
        values,
        dim.max(1),
        keep_labels.then_some(labels),
    )
}

/// First `n` entries of a seeded uniform permutation of `0..population`.
///
/// Prefixes are nested: for a fixed seed the first `m < n` indices equal
/// `sample_indices(population, m, seed)`.
pub fn sample_indices(population: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > population {
        return invalid(format!("sample size {n} outside 1..={population}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..population).collect();
    for i in 0..n {
        let j = rng.random_range(i..population);
        perm.swap(i, j);
    }
    perm.truncate(n);
    Ok(perm)
}

/// `n` distinct rows chosen uniformly without replacement.
pub fn uniform_sample(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    Ok(d.select(&sample_indices(d.n_rows(), n, seed)?))
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Dataset,
    pub holdout: Dataset,
    pub seed: u64,
}

/// Disjoint train/holdout partition with `round(holdout_frac * N)` holdout rows.
pub fn split(d: &Dataset, holdout_frac: f64, seed: u64) -> Result<DataSplit> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return invalid(format!("holdout fraction {holdout_frac} not in (0,1)"));
    }
    let n = d.n_rows();
    let n_hold = (holdout_frac * n as f64).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return invalid(format!(
            "split of {n} rows at fraction {holdout_frac} leaves an empty side"
        ));
    }
    let perm = sample_indices(n, n, seed)?;
    let (hold, train) = perm.split_at(n_hold);
    let mut train = train.to_vec();
    let mut hold = hold.to_vec();
    train.sort_unstable();
    hold.sort_unstable();
    Ok(DataSplit {
        train: d.select(&train),
        holdout: d.select(&hold),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_label() {
        let d = parse_csv("x1,x2,y\n1,2,0\n3,4,1\n", Some("y")).unwrap();
        assert_eq!((d.n_rows(), d.dim()), (2, 2));
        assert_eq!(d.labels(), Some(&[0.0, 1.0][..]));
        assert_eq!(d.row(1).to_dense(2), vec![3.0, 4.0]);
    }

    #[test]
    fn csv_without_label_is_unsupervised() {
        let d = parse_csv("x1,x2,y\n1,2,0\n3,4,1\n", None).unwrap();
        assert_eq!((d.n_rows(), d.dim()), (2, 3));
        assert!(d.labels().is_none());
    }

    #[test]
    fn csv_label_by_index() {
        let d = parse_csv("a,b,c\n1,2,0\n", Some("0")).unwrap();
        assert_eq!(d.labels(), Some(&[1.0][..]));
        assert_eq!(d.row(0).to_dense(2), vec![2.0, 0.0]);
    }

    #[test]
    fn csv_short_row_is_dimension_error() {
        let err = parse_csv("a,b,c,d\n1,2,3,4\n1,2,3\n", None).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                line: 3,
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn csv_non_numeric_cell_reports_line() {
        let err = parse_csv("a,b\n1,2\n1,zz\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn sparse_parse() {
        let d = parse_sparse("1 1:0.5 3:2\n0 2:1\n", true).unwrap();
        assert!(d.is_sparse());
        assert_eq!((d.n_rows(), d.dim()), (2, 3));
        assert_eq!(d.row(0).to_dense(3), vec![0.5, 0.0, 2.0]);
        assert_eq!(d.row(1).dot(&[1.0, 7.0, 1.0]), 7.0);
        assert_eq!(d.labels(), Some(&[1.0, 0.0][..]));
        assert!(parse_sparse("1 0:1\n", true).is_err());
        assert!(parse_sparse("1 3:1 2:1\n", true).is_err());
    }

    #[test]
    fn encode_classes_sorted() {
        let mut d = Dataset::dense(vec![0.0; 4], 1, Some(vec![5.0, -1.0, 5.0, 2.0])).unwrap();
        let map = d.encode_classes().unwrap();
        assert_eq!(map.values, vec![-1.0, 2.0, 5.0]);
        assert_eq!(d.labels(), Some(&[2.0, 0.0, 2.0, 1.0][..]));
        assert_eq!(d.class_count(), Some(3));
    }

    #[test]
    fn full_sample_is_permutation() {
        let d = Dataset::dense((0..20).map(f64::from).collect(), 2, None).unwrap();
        let s = uniform_sample(&d, 10, 3).unwrap();
        let mut firsts: Vec<i64> = (0..10).map(|i| s.row(i).to_dense(2)[0] as i64).collect();
        firsts.sort();
        assert_eq!(firsts, (0..10).map(|i| 2 * i).collect::<Vec<_>>());
    }

    #[test]
    fn sample_size_zero_rejected() {
        let d = Dataset::dense(vec![1.0; 4], 1, None).unwrap();
        assert!(uniform_sample(&d, 0, 1).is_err());
        assert!(uniform_sample(&d, 5, 1).is_err());
    }

    #[test]
    fn nested_prefixes() {
        let a = sample_indices(1000, 50, 9).unwrap();
        let b = sample_indices(1000, 400, 9).unwrap();
        assert_eq!(&b[..50], &a[..]);
    }

    #[test]
    fn single_row_frequencies() {
        let mut counts = [0usize; 4];
        let reps = 100_000;
        for s in 0..reps {
            counts[sample_indices(4, 1, s).unwrap()[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / reps as f64;
            assert!((f - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn split_sizes_and_errors() {
        let d = Dataset::dense((0..10).map(f64::from).collect(), 1, None).unwrap();
        let s = split(&d, 0.2, 1).unwrap();
        assert_eq!((s.train.n_rows(), s.holdout.n_rows()), (8, 2));
        let s2 = split(&d, 0.2, 1).unwrap();
        assert_eq!(s.train, s2.train);
        assert_eq!(s.holdout, s2.holdout);
        let d5 = Dataset::dense(vec![1.0; 5], 1, None).unwrap();
        assert!(split(&d5, 0.99, 1).is_err());
    }

    #[test]
    fn split_is_disjoint() {
        let d = Dataset::dense((0..100).map(f64::from).collect(), 1, None).unwrap();
        let s = split(&d, 0.3, 4).unwrap();
        let mut all: Vec<i64> = (0..s.train.n_rows())
            .map(|i| s.train.row(i).to_dense(1)[0] as i64)
            .chain((0..s.holdout.n_rows()).map(|i| s.holdout.row(i).to_dense(1)[0] as i64))
            .collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
