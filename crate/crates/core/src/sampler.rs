//! ψ-stratified batch composition.
//!
//! Pairs are split into three buckets by similarity and every batch draws a
//! fixed number of pairs from each. There is no mining: what a batch contains
//! is a function of the pairs, the seed and the cursor only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SimilarityPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("bucket `{0}` is empty")]
    EmptyBucket(BucketKind),
    #[error("invalid batch spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BucketKind {
    /// ψ ∈ (0.5, 1]
    High,
    /// ψ ∈ (0, 0.5]
    Mid,
    /// ψ = 0
    Zero,
}

impl BucketKind {
    pub const ALL: [BucketKind; 3] = [BucketKind::High, BucketKind::Mid, BucketKind::Zero];

    pub fn of(psi: f64) -> Self {
        if psi > 0.5 {
            BucketKind::High
        } else if psi > 0.0 {
            BucketKind::Mid
        } else {
            BucketKind::Zero
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for BucketKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BucketKind::High => "high",
            BucketKind::Mid => "mid",
            BucketKind::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buckets {
    pub high: Vec<SimilarityPair>,
    pub mid: Vec<SimilarityPair>,
    pub zero: Vec<SimilarityPair>,
}

impl Buckets {
    pub fn get(&self, kind: BucketKind) -> &[SimilarityPair] {
        match kind {
            BucketKind::High => &self.high,
            BucketKind::Mid => &self.mid,
            BucketKind::Zero => &self.zero,
        }
    }

    /// Errors on the first bucket that `spec` draws from but is empty.
    pub fn ensure_non_empty(&self, spec: &BatchSpec) -> Result<(), SamplerError> {
        match BucketKind::ALL
            .into_iter()
            .find(|&k| spec.count(k) > 0 && self.get(k).is_empty())
        {
            Some(kind) => Err(SamplerError::EmptyBucket(kind)),
            None => Ok(()),
        }
    }
}

pub fn stratify(pairs: &[SimilarityPair]) -> Buckets {
    let mut buckets = Buckets::default();
    for &p in pairs {
        match BucketKind::of(p.psi) {
            BucketKind::High => buckets.high.push(p),
            BucketKind::Mid => buckets.mid.push(p),
            BucketKind::Zero => buckets.zero.push(p),
        }
    }
    buckets
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub batch_size: usize,
    #[serde(default = "BatchSpec::default_high")]
    pub f_high: f64,
    #[serde(default = "BatchSpec::default_quarter")]
    pub f_mid: f64,
    #[serde(default = "BatchSpec::default_quarter")]
    pub f_zero: f64,
}

impl BatchSpec {
    fn default_high() -> f64 {
        0.5
    }
    fn default_quarter() -> f64 {
        0.25
    }

    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            f_high: 0.5,
            f_mid: 0.25,
            f_zero: 0.25,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.batch_size == 0 {
            return Err(SamplerError::InvalidSpec("batch_size must be > 0".into()));
        }
        let fr = [self.f_high, self.f_mid, self.f_zero];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(SamplerError::InvalidSpec(
                "bucket fractions must lie in [0, 1] and sum to 1".into(),
            ));
        }
        let (h, m, _) = self.counts_unchecked();
        if h + m > self.batch_size {
            return Err(SamplerError::InvalidSpec(
                "rounded high + mid counts exceed the batch size".into(),
            ));
        }
        Ok(())
    }

    fn counts_unchecked(&self) -> (usize, usize, usize) {
        let round_half_up = |x: f64| (x + 0.5).floor() as usize;
        let high = round_half_up(self.f_high * self.batch_size as f64);
        let mid = round_half_up(self.f_mid * self.batch_size as f64);
        (high, mid, self.batch_size.saturating_sub(high + mid))
    }

    /// `(high, mid, zero)` pair counts: high and mid rounded half-up, the
    /// remainder goes to the zero bucket.
    pub fn counts(&self) -> (usize, usize, usize) {
        self.counts_unchecked()
    }

    fn count(&self, kind: BucketKind) -> usize {
        let (h, m, z) = self.counts();
        match kind {
            BucketKind::High => h,
            BucketKind::Mid => m,
            BucketKind::Zero => z,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCursor {
    pub epoch: u64,
    pub pos: usize,
}

/// Position of the sampler in each bucket's shuffled order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorState {
    pub buckets: [BucketCursor; 3],
}

/// Shuffled visiting order of a bucket in a given epoch.
fn permutation(seed: u64, kind: BucketKind, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind.index() as u64 + 1) << 56) ^ epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

fn draw(
    bucket: &[SimilarityPair],
    n: usize,
    cursor: &mut BucketCursor,
    mut order_for: impl FnMut(u64) -> Vec<usize>,
    current: &mut Option<(u64, Vec<usize>)>,
    out: &mut Vec<SimilarityPair>,
) {
    for _ in 0..n {
        if cursor.pos == bucket.len() {
            cursor.epoch += 1;
            cursor.pos = 0;
        }
        if current.as_ref().map(|(e, _)| *e) != Some(cursor.epoch) {
            *current = Some((cursor.epoch, order_for(cursor.epoch)));
        }
        let order = &current.as_ref().expect("set above").1;
        out.push(bucket[order[cursor.pos]]);
        cursor.pos += 1;
    }
}

/// Composes one batch from `buckets` starting at `cursor`; returns the
/// batch and the advanced cursor.
///
/// Pairs are drawn high, then mid, then zero. Within a bucket each epoch
/// visits every pair once in a seeded shuffled order, and a fresh shuffle
/// starts when the bucket is exhausted.
pub fn compose_batch(
    buckets: &Buckets,
    spec: &BatchSpec,
    seed: u64,
    cursor: &CursorState,
) -> Result<(Vec<SimilarityPair>, CursorState), SamplerError> {
    spec.validate()?;
    buckets.ensure_non_empty(spec)?;
    let mut next = *cursor;
    let mut batch = Vec::with_capacity(spec.batch_size);
    for kind in BucketKind::ALL {
        let bucket = buckets.get(kind);
        draw(
            bucket,
            spec.count(kind),
            &mut next.buckets[kind.index()],
            |epoch| permutation(seed, kind, epoch, bucket.len()),
            &mut None,
            &mut batch,
        );
    }
    Ok((batch, next))
}

/// Stateful sampler producing the same batches as repeated
/// [`compose_batch`] calls, with the per-epoch shuffles cached.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    buckets: Buckets,
    spec: BatchSpec,
    seed: u64,
    cursor: CursorState,
    orders: [Option<(u64, Vec<usize>)>; 3],
}

impl BatchSampler {
    pub fn new(buckets: Buckets, spec: BatchSpec, seed: u64) -> Result<Self, SamplerError> {
        spec.validate()?;
        buckets.ensure_non_empty(&spec)?;
        Ok(Self {
            buckets,
            spec,
            seed,
            cursor: CursorState::default(),
            orders: [None, None, None],
        })
    }

    pub fn cursor(&self) -> CursorState {
        self.cursor
    }

    pub fn spec(&self) -> &BatchSpec {
        &self.spec
    }

    pub fn next_batch(&mut self) -> Vec<SimilarityPair> {
        let mut batch = Vec::with_capacity(self.spec.batch_size);
        for kind in BucketKind::ALL {
            let bucket = self.buckets.get(kind);
            let seed = self.seed;
            draw(
                bucket,
                self.spec.count(kind),
                &mut self.cursor.buckets[kind.index()],
                |epoch| permutation(seed, kind, epoch, bucket.len()),
                &mut self.orders[kind.index()],
                &mut batch,
            );
        }
        batch
    }
}
