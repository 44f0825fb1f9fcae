//! Ranking metrics, distance/similarity KL divergence and the covariance
//! diagnostic, plus the one-pass [`evaluate`] that ties them together.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::encoder::{EncoderError, EncoderModel};
use crate::geometry::{fov_overlap, is_positive};
use crate::losses::euclidean_distance;
use crate::retrieval::{
    build_index, fit_pca_whitening, search, PcaWhitening, RankedList, RetrievalError,
    DEFAULT_WHITENING_EPS,
};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no query has a positive map image; recall is undefined")]
    NoPositives,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("histogram needs at least 2 bins")]
    TooFewBins,
    #[error("no query-map pairs to compare")]
    NoPairs,
    #[error("covariance needs at least 2 descriptors")]
    TooFewDescriptors,
    #[error("ground truth references unknown map id {0}")]
    UnknownMapId(u32),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Positive map ids per query. Queries with no positives are kept (with an
/// empty set) and skipped by the ranking metrics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth {
    pub positives: BTreeMap<u32, BTreeSet<u32>>,
}

impl GroundTruth {
    /// Applies the distance/heading positive rule to every query × map pair.
    pub fn from_poses(ds: &Dataset, dist_m: f64, angle_rad: f64) -> Self {
        let maps: Vec<_> = ds
            .map_ids()
            .into_iter()
            .map(|id| ds.get(id).expect("own id"))
            .collect();
        let positives = ds
            .query_ids()
            .into_iter()
            .map(|q| {
                let qp = &ds.get(q).expect("own id").pose;
                let set = maps
                    .iter()
                    .filter(|m| is_positive(qp, &m.pose, dist_m, angle_rad))
                    .map(|m| m.id)
                    .collect();
                (q, set)
            })
            .collect();
        Self { positives }
    }

    pub fn validate_against(&self, ds: &Dataset) -> Result<(), MetricsError> {
        let maps: BTreeSet<u32> = ds.map_ids().into_iter().collect();
        for set in self.positives.values() {
            if let Some(&bad) = set.iter().find(|id| !maps.contains(id)) {
                return Err(MetricsError::UnknownMapId(bad));
            }
        }
        Ok(())
    }

    pub fn positives_of(&self, query: u32) -> Option<&BTreeSet<u32>> {
        self.positives.get(&query).filter(|s| !s.is_empty())
    }

    pub fn is_positive(&self, query: u32, map: u32) -> bool {
        self.positives.get(&query).is_some_and(|s| s.contains(&map))
    }
}

/// 1-based rank of the first positive in `ranked`, if any.
fn first_positive_rank(ranked: &RankedList, positives: &BTreeSet<u32>) -> Option<usize> {
    ranked
        .ids()
        .position(|id| positives.contains(&id))
        .map(|p| p + 1)
}

/// Averages `score` over the queries that have positives.
fn mean_over_answerable(
    rankings: &[RankedList],
    gt: &GroundTruth,
    score: impl Fn(Option<usize>) -> f64,
) -> Result<f64, MetricsError> {
    let (sum, count) = rankings
        .iter()
        .filter_map(|r| {
            gt.positives_of(r.query_id)
                .map(|p| score(first_positive_rank(r, p)))
        })
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(MetricsError::NoPositives);
    }
    Ok(sum / count as f64)
}

/// Fraction of queries with at least one positive in the top `k`.
pub fn recall_at_k(
    rankings: &[RankedList],
    gt: &GroundTruth,
    k: usize,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    mean_over_answerable(rankings, gt, |rank| {
        if rank.is_some_and(|r| r <= k) {
            1.0
        } else {
            0.0
        }
    })
}

/// Linear top-5 rank score: `(6 − rank)/5` for the first positive within
/// the top 5, otherwise 0.
pub fn mrr_at_5(rankings: &[RankedList], gt: &GroundTruth) -> Result<f64, MetricsError> {
    mean_over_answerable(rankings, gt, |rank| match rank {
        Some(r) if r <= 5 => (6 - r) as f64 / 5.0,
        _ => 0.0,
    })
}

/// Equal-width histogram of values in `[0, 1]` (clamped), as probabilities
/// with `delta` added to every bin and renormalized.
pub fn smoothed_histogram(
    values: impl IntoIterator<Item = f64>,
    bins: usize,
    delta: f64,
) -> Result<Vec<f64>, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::TooFewBins);
    }
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(MetricsError::NoPairs);
    }
    let z = 1.0 + bins as f64 * delta;
    Ok(counts
        .into_iter()
        .map(|c| (c as f64 / total as f64 + delta) / z)
        .collect())
}

/// `KL(P‖Q) = Σ p ln(p/q)` in nats; bins with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// KL divergence between the histogram of `d/2` (descriptor distance
/// rescaled to `[0, 1]`) and the histogram of `1 − ψ` over the same pairs.
pub fn kl_divergence_distance_vs_similarity(
    pairs: &[(f64, f64)],
    bins: usize,
    delta: f64,
) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::NoPairs);
    }
    let p = smoothed_histogram(pairs.iter().map(|&(d, _)| d / 2.0), bins, delta)?;
    let q = smoothed_histogram(pairs.iter().map(|&(_, psi)| 1.0 - psi), bins, delta)?;
    Ok(kl_divergence(&p, &q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCovariance {
    pub dim: usize,
    /// Row-major `dim × dim`, exactly symmetric.
    pub matrix: Vec<f64>,
    pub mean_abs_off_diagonal: f64,
}

pub fn feature_covariance(descriptors: &[Vec<f64>]) -> Result<FeatureCovariance, MetricsError> {
    let n = descriptors.len();
    if n < 2 {
        return Err(MetricsError::TooFewDescriptors);
    }
    let d = descriptors[0].len();
    let mut mean = vec![0.0; d];
    for row in descriptors {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut matrix = vec![0.0; d * d];
    for row in descriptors {
        let c: Vec<f64> = row.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for a in 0..d {
            for b in a..d {
                matrix[a * d + b] += c[a] * c[b];
            }
        }
    }
    let mut off = 0.0;
    for a in 0..d {
        for b in a..d {
            let v = matrix[a * d + b] / (n as f64 - 1.0);
            matrix[a * d + b] = v;
            matrix[b * d + a] = v;
            if a != b {
                off += 2.0 * v.abs();
            }
        }
    }
    let mean_abs_off_diagonal = if d > 1 {
        off / (d * (d - 1)) as f64
    } else {
        0.0
    };
    Ok(FeatureCovariance {
        dim: d,
        matrix,
        mean_abs_off_diagonal,
    })
}

/// Which similarity the KL term compares distances against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlGroundTruth {
    /// Graded FoV overlap recomputed from the poses.
    Graded,
    /// 1 for ground-truth positives, 0 otherwise.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteningConfig {
    pub dim: usize,
    pub eps: f64,
}

fn default_bins() -> usize {
    100
}
fn default_smoothing() -> f64 {
    1e-10
}
fn default_max_kl_pairs() -> usize {
    1_000_000
}
fn default_kl_ground_truth() -> KlGroundTruth {
    KlGroundTruth::Graded
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_max_kl_pairs")]
    pub max_kl_pairs: usize,
    pub kl_seed: u64,
    #[serde(default = "default_kl_ground_truth")]
    pub kl_ground_truth: KlGroundTruth,
    #[serde(default)]
    pub whitening: Option<WhiteningConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: default_bins(),
            smoothing: default_smoothing(),
            max_kl_pairs: default_max_kl_pairs(),
            kl_seed: 0,
            kl_ground_truth: KlGroundTruth::Graded,
            whitening: None,
        }
    }
}

impl EvalConfig {
    pub fn with_whitening(mut self, dim: usize) -> Self {
        self.whitening = Some(WhiteningConfig {
            dim,
            eps: DEFAULT_WHITENING_EPS,
        });
        self
    }
}

/// Number of candidates retrieved per query.
pub const SEARCH_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr5: f64,
    pub kldiv: f64,
    pub cov_mean_abs_offdiag: f64,
    pub n_queries: usize,
    pub n_answerable: usize,
    pub dim: usize,
}

/// Descriptors for the map and query sides of an evaluation.
#[derive(Debug, Clone)]
pub struct DescriptorSets {
    pub map_ids: Vec<u32>,
    pub maps: Vec<Vec<f64>>,
    pub query_ids: Vec<u32>,
    pub queries: Vec<Vec<f64>>,
}

impl DescriptorSets {
    pub fn from_model(model: &EncoderModel, ds: &Dataset) -> Result<Self, MetricsError> {
        let describe = |ids: &[u32]| -> Result<Vec<Vec<f64>>, MetricsError> {
            ids.iter()
                .map(|&id| Ok(model.describe(ds.observation(id)?)?.into_vec()))
                .collect()
        };
        let map_ids = ds.map_ids();
        let query_ids = ds.query_ids();
        Ok(Self {
            maps: describe(&map_ids)?,
            queries: describe(&query_ids)?,
            map_ids,
            query_ids,
        })
    }

    /// Splits `(id, descriptor)` records by the dataset roles.
    pub fn from_records(records: Vec<(u32, Vec<f64>)>, ds: &Dataset) -> Result<Self, MetricsError> {
        let mut by_id: BTreeMap<u32, Vec<f64>> = records.into_iter().collect();
        let mut take = |ids: &[u32]| -> Result<Vec<Vec<f64>>, MetricsError> {
            ids.iter()
                .map(|id| by_id.remove(id).ok_or(DatasetError::UnknownId(*id).into()))
                .collect()
        };
        let map_ids = ds.map_ids();
        let query_ids = ds.query_ids();
        Ok(Self {
            maps: take(&map_ids)?,
            queries: take(&query_ids)?,
            map_ids,
            query_ids,
        })
    }

    pub fn whitened(&self, w: &PcaWhitening) -> Result<Self, MetricsError> {
        let apply = |rows: &[Vec<f64>]| -> Result<Vec<Vec<f64>>, MetricsError> {
            rows.iter().map(|r| Ok(w.apply(r)?.0)).collect()
        };
        Ok(Self {
            map_ids: self.map_ids.clone(),
            maps: apply(&self.maps)?,
            query_ids: self.query_ids.clone(),
            queries: apply(&self.queries)?,
        })
    }
}

/// Query × map `(distance, ψ)` pairs, subsampled to at most
/// `cfg.max_kl_pairs` with `cfg.kl_seed`.
fn kl_pairs(
    sets: &DescriptorSets,
    ds: &Dataset,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Vec<(f64, f64)> {
    let n_maps = sets.map_ids.len();
    let total = n_maps * sets.query_ids.len();
    let pick: Vec<usize> = if total > cfg.max_kl_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.kl_seed);
        let mut chosen = index::sample(&mut rng, total, cfg.max_kl_pairs).into_vec();
        chosen.sort_unstable();
        chosen
    } else {
        (0..total).collect()
    };
    pick.into_iter()
        .map(|flat| {
            let (qi, mi) = (flat / n_maps, flat % n_maps);
            let (q, m) = (sets.query_ids[qi], sets.map_ids[mi]);
            let psi = match cfg.kl_ground_truth {
                KlGroundTruth::Graded => {
                    let qp = &ds.get(q).expect("ids from dataset").pose;
                    let mp = &ds.get(m).expect("ids from dataset").pose;
                    fov_overlap(qp, mp).value()
                }
                KlGroundTruth::Binary => f64::from(u8::from(gt.is_positive(q, m))),
            };
            (euclidean_distance(&sets.queries[qi], &sets.maps[mi]), psi)
        })
        .collect()
}

/// Retrieves the top [`SEARCH_DEPTH`] maps for every query and derives all
/// report metrics. Whitening, when configured, is fitted on the map side.
pub fn evaluate(
    sets: &DescriptorSets,
    ds: &Dataset,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    Ok(evaluate_detailed(sets, ds, gt, cfg)?.0)
}

/// [`evaluate`], also returning the per-query rankings it was computed from.
pub fn evaluate_detailed(
    sets: &DescriptorSets,
    ds: &Dataset,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<RankedList>), MetricsError> {
    let whitened;
    let sets = match &cfg.whitening {
        Some(w) => {
            let fit = fit_pca_whitening(&sets.maps, w.dim, w.eps)?;
            whitened = sets.whitened(&fit)?;
            &whitened
        }
        None => sets,
    };
    let (index, _) = build_index(&sets.maps, &sets.map_ids)?;
    let rankings = sets
        .query_ids
        .iter()
        .zip(&sets.queries)
        .map(|(&q, desc)| search(&index, q, desc, SEARCH_DEPTH))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = kl_pairs(sets, ds, gt, cfg);
    let mut all = sets.maps.clone();
    all.extend(sets.queries.iter().cloned());
    let report = EvalReport {
        r_at_1: recall_at_k(&rankings, gt, 1)?,
        r_at_5: recall_at_k(&rankings, gt, 5)?,
        r_at_10: recall_at_k(&rankings, gt, 10)?,
        mrr5: mrr_at_5(&rankings, gt)?,
        kldiv: kl_divergence_distance_vs_similarity(&pairs, cfg.bins, cfg.smoothing)?,
        cov_mean_abs_offdiag: feature_covariance(&all)?.mean_abs_off_diagonal,
        n_queries: sets.query_ids.len(),
        n_answerable: sets
            .query_ids
            .iter()
            .filter(|&&q| gt.positives_of(q).is_some())
            .count(),
        dim: index.dim(),
    };
    Ok((report, rankings))
}

pub fn evaluate_model(
    model: &EncoderModel,
    ds: &Dataset,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    evaluate(&DescriptorSets::from_model(model, ds)?, ds, gt, cfg)
}
