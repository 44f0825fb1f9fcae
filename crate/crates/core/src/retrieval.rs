//! Descriptor index, PCA whitening and exhaustive nearest-neighbour search.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::euclidean_distance;

/// Rows further than this from unit norm are re-normalized on ingest.
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("duplicate descriptor id {0}")]
    DuplicateId(u32),
    #[error("{ids} ids for {rows} descriptors")]
    LengthMismatch { ids: usize, rows: usize },
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("PCA needs at least 2 descriptors, got {0}")]
    TooFewSamples(usize),
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("invalid whitening parameters: {0}")]
    InvalidWhitening(String),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Immutable set of unit-norm descriptors, searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    ids: Vec<u32>,
    data: Vec<f64>,
    dim: usize,
}

/// What `build_index` had to fix up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub renormalized: Vec<u32>,
}

pub fn build_index(
    descriptors: &[Vec<f64>],
    ids: &[u32],
) -> Result<(DescriptorIndex, BuildReport), RetrievalError> {
    if descriptors.len() != ids.len() {
        return Err(RetrievalError::LengthMismatch {
            ids: ids.len(),
            rows: descriptors.len(),
        });
    }
    let dim = descriptors.first().map_or(0, Vec::len);
    let mut seen = HashSet::with_capacity(ids.len());
    let mut data = Vec::with_capacity(dim * ids.len());
    let mut report = BuildReport::default();
    for (row, &id) in descriptors.iter().zip(ids) {
        if !seen.insert(id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        if row.len() != dim {
            return Err(RetrievalError::Dimension {
                expected: dim,
                got: row.len(),
            });
        }
        let n = norm(row);
        if (n - 1.0).abs() > UNIT_TOLERANCE && n > 0.0 {
            report.renormalized.push(id);
            data.extend(row.iter().map(|x| x / n));
        } else {
            data.extend_from_slice(row);
        }
    }
    Ok((
        DescriptorIndex {
            ids: ids.to_vec(),
            data,
            dim,
        },
        report,
    ))
}

impl DescriptorIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.ids.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub query_id: u32,
    /// `(id, distance)` by ascending distance, ties by ascending id.
    pub candidates: Vec<(u32, f64)>,
    /// Set when fewer than the requested `k` candidates exist.
    pub truncated: bool,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.candidates.iter().map(|&(id, _)| id)
    }
}

/// Exact k nearest neighbours by Euclidean distance.
pub fn search(
    index: &DescriptorIndex,
    query_id: u32,
    query: &[f64],
    k: usize,
) -> Result<RankedList, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query.len() != index.dim {
        return Err(RetrievalError::Dimension {
            expected: index.dim,
            got: query.len(),
        });
    }
    let mut scored: Vec<(u32, f64)> = index
        .ids
        .iter()
        .zip(index.rows())
        .map(|(&id, row)| (id, euclidean_distance(query, row)))
        .collect();
    let by_distance_then_id =
        |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let truncated = k > scored.len();
    let keep = k.min(scored.len());
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep, by_distance_then_id);
        scored.truncate(keep);
    }
    scored.sort_unstable_by(by_distance_then_id);
    Ok(RankedList {
        query_id,
        candidates: scored,
        truncated,
    })
}

/// Fitted PCA whitening: `y = normalize(diag(1/√(λ+ε)) · C · (x − μ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaWhitening {
    pub mean: Vec<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `r × d` row-major; rows are orthonormal principal directions.
    pub components: Vec<f64>,
    pub r: usize,
    pub eps: f64,
}

pub const DEFAULT_WHITENING_EPS: f64 = 1e-8;

/// Fits PCA whitening on the rows of `descriptors` keeping `r` components.
pub fn fit_pca_whitening(
    descriptors: &[Vec<f64>],
    r: usize,
    eps: f64,
) -> Result<PcaWhitening, RetrievalError> {
    let n = descriptors.len();
    if n < 2 {
        return Err(RetrievalError::TooFewSamples(n));
    }
    let d = descriptors[0].len();
    if let Some(bad) = descriptors.iter().find(|row| row.len() != d) {
        return Err(RetrievalError::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    let max = (n - 1).min(d);
    if r == 0 || r > max {
        return Err(RetrievalError::TooManyComponents { requested: r, max });
    }
    if !(eps >= 0.0) {
        return Err(RetrievalError::InvalidWhitening("eps must be >= 0".into()));
    }
    let mut mean = vec![0.0; d];
    for row in descriptors {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| descriptors[i][j] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    // exact symmetry for the eigen solver
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut eigenvalues = Vec::with_capacity(r);
    let mut components = Vec::with_capacity(r * d);
    for &k in order.iter().take(r) {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let col = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
    }
    Ok(PcaWhitening {
        mean,
        eigenvalues,
        components,
        r,
        eps,
    })
}

impl PcaWhitening {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let d = self.mean.len();
        if self.eigenvalues.len() != self.r || self.components.len() != self.r * d || self.r == 0 {
            return Err(RetrievalError::InvalidWhitening(
                "inconsistent shapes".into(),
            ));
        }
        if self.eigenvalues.iter().any(|&l| l + self.eps <= 0.0) {
            return Err(RetrievalError::InvalidWhitening(
                "eigenvalue + eps must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Projects and scales without the final normalization.
    pub fn transform_raw(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components
            .chunks_exact(self.mean.len())
            .zip(&self.eigenvalues)
            .map(|(row, &lambda)| {
                let proj: f64 = row.iter().zip(&centered).map(|(c, v)| c * v).sum();
                proj / (lambda + self.eps).sqrt()
            })
            .collect()
    }

    /// Whitened, unit-norm descriptor. A zero projection (the input equals
    /// the fit mean) maps to the first basis vector; the flag reports it.
    pub fn apply(&self, x: &[f64]) -> Result<(Vec<f64>, bool), RetrievalError> {
        if x.len() != self.input_dim() {
            return Err(RetrievalError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut y = self.transform_raw(x);
        let n = norm(&y);
        if !(n > 1e-12) {
            y.iter_mut().for_each(|v| *v = 0.0);
            y[0] = 1.0;
            return Ok((y, true));
        }
        y.iter_mut().for_each(|v| *v /= n);
        Ok((y, false))
    }
}
