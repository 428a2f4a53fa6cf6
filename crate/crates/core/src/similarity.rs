//! Pearson user-user similarity over co-rated items.
//!
//! Two evaluation routes are provided: the definitional mean-deviation form and
//! the single-pass accumulator form (`n·Σxy − Σx·Σy` over the product of root
//! radicands). They agree to 1e-12 and report "absent" under the same conditions:
//! fewer than `min_overlap` co-rated items, or zero variance on either side.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{GraphStore, ItemId, Timestamp, UserId, UserPair};

pub const DEFAULT_MIN_OVERLAP: usize = 3;

/// Relative tolerance under which a variance term is treated as zero.
const VARIANCE_TOLERANCE: f64 = 1e-12;
const CLAMP_TOLERANCE: f64 = 1e-12;

/// Aligned ratings of two users on the items both have rated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairVectors {
    co_items: Vec<ItemId>,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

impl PairVectors {
    pub fn new(co_items: Vec<ItemId>, r1: Vec<f64>, r2: Vec<f64>) -> Result<Self> {
        if co_items.len() != r1.len() || r1.len() != r2.len() {
            return Err(Error::InvalidArgument(format!(
                "misaligned vectors: {} items, {} and {} ratings",
                co_items.len(),
                r1.len(),
                r2.len()
            )));
        }
        if co_items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("co-rated items must be strictly ascending".into()));
        }
        Ok(PairVectors { co_items, r1, r2 })
    }

    /// Builds vectors over synthetic item ids `0..n`, for evaluating the kernel
    /// on raw values.
    pub fn from_values(r1: &[f64], r2: &[f64]) -> Result<Self> {
        let items = (0..r1.len() as u64).map(ItemId).collect();
        PairVectors::new(items, r1.to_vec(), r2.to_vec())
    }

    pub fn n(&self) -> usize {
        self.co_items.len()
    }

    pub fn co_items(&self) -> &[ItemId] {
        &self.co_items
    }

    pub fn r1(&self) -> &[f64] {
        &self.r1
    }

    pub fn r2(&self) -> &[f64] {
        &self.r2
    }

    pub fn accumulators(&self) -> SimilarityAccumulators {
        let mut acc = SimilarityAccumulators::default();
        for (&x, &y) in self.r1.iter().zip(&self.r2) {
            acc.push(x, y);
        }
        acc
    }
}

/// Running sums sufficient for the single-pass Pearson form.
///
/// Half-star ratings are multiples of 0.5, so for realistic overlaps every sum
/// is exact in `f64` and `remove` undoes `push` without drift.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimilarityAccumulators {
    pub n: usize,
    pub sum1: f64,
    pub sum2: f64,
    pub sum1sq: f64,
    pub sum2sq: f64,
    pub sum12: f64,
}

impl SimilarityAccumulators {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        self.sum1 += x;
        self.sum2 += y;
        self.sum1sq += x * x;
        self.sum2sq += y * y;
        self.sum12 += x * y;
    }

    pub fn remove(&mut self, x: f64, y: f64) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        self.sum1 -= x;
        self.sum2 -= y;
        self.sum1sq -= x * x;
        self.sum2sq -= y * y;
        self.sum12 -= x * y;
    }
}

fn finish(num: f64, den1: f64, den2: f64) -> f64 {
    let k = num / (den1 * den2).sqrt();
    debug_assert!(
        k.abs() <= 1.0 + CLAMP_TOLERANCE,
        "coefficient {k} outside [-1, 1] beyond rounding drift"
    );
    k.clamp(-1.0, 1.0)
}

/// Mean-deviation form of the Pearson coefficient.
pub fn pearson_definitional(pv: &PairVectors, min_overlap: usize) -> Option<f64> {
    let n = pv.n();
    if n < min_overlap.max(1) {
        return None;
    }
    let mean1 = pv.r1.iter().sum::<f64>() / n as f64;
    let mean2 = pv.r2.iter().sum::<f64>() / n as f64;
    let (mut num, mut ss1, mut ss2, mut sq1, mut sq2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in pv.r1.iter().zip(&pv.r2) {
        let (dx, dy) = (x - mean1, y - mean2);
        num += dx * dy;
        ss1 += dx * dx;
        ss2 += dy * dy;
        sq1 += x * x;
        sq2 += y * y;
    }
    if ss1 <= VARIANCE_TOLERANCE * sq1.max(1.0) || ss2 <= VARIANCE_TOLERANCE * sq2.max(1.0) {
        return None;
    }
    Some(finish(num, ss1, ss2))
}

/// Accumulator form of the Pearson coefficient.
pub fn pearson_fast(acc: &SimilarityAccumulators, min_overlap: usize) -> Option<f64> {
    if acc.n < min_overlap.max(1) {
        return None;
    }
    let n = acc.n as f64;
    let rad1 = n * acc.sum1sq - acc.sum1 * acc.sum1;
    let rad2 = n * acc.sum2sq - acc.sum2 * acc.sum2;
    if rad1 <= VARIANCE_TOLERANCE * (n * acc.sum1sq).max(1.0)
        || rad2 <= VARIANCE_TOLERANCE * (n * acc.sum2sq).max(1.0)
    {
        return None;
    }
    Some(finish(n * acc.sum12 - acc.sum1 * acc.sum2, rad1, rad2))
}

/// Items both users rated at or before `asof`, with their latest ratings.
pub fn co_rated(store: &GraphStore, u1: UserId, u2: UserId, asof: Timestamp) -> Result<PairVectors> {
    let a = store.ratings_asof(u1, asof)?;
    let b = store.ratings_asof(u2, asof)?;
    let mut pv = PairVectors::default();
    for (item, ra) in &a {
        if let Some(rb) = b.get(item) {
            pv.co_items.push(*item);
            pv.r1.push(ra.value());
            pv.r2.push(rb.value());
        }
    }
    Ok(pv)
}

pub fn compute_pair(
    store: &GraphStore,
    pair: UserPair,
    asof: Timestamp,
    min_overlap: usize,
) -> Result<Option<f64>> {
    let pv = co_rated(store, pair.a(), pair.b(), asof)?;
    Ok(pearson_fast(&pv.accumulators(), min_overlap))
}

/// Computes every defined pairwise coefficient as of `asof`, in pair order.
pub fn all_pairs(store: &GraphStore, asof: Timestamp, min_overlap: usize) -> Vec<(UserPair, f64)> {
    let profiles: Vec<(UserId, Vec<(ItemId, f64)>)> = store
        .users()
        .map(|u| {
            let map = store.ratings_asof(u, asof).unwrap_or_default();
            (u, map.into_iter().map(|(i, r)| (i, r.value())).collect::<Vec<_>>())
        })
        .filter(|(_, p)| p.len() >= min_overlap.max(1))
        .collect();
    (0..profiles.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (ua, pa) = &profiles[i];
            profiles[i + 1..].iter().filter_map(move |(ub, pb)| {
                let k = pearson_fast(&merge_accumulate(pa, pb), min_overlap)?;
                Some((UserPair::new(*ua, *ub).ok()?, k))
            })
        })
        .collect()
}

/// Merge-joins two item-sorted profiles into accumulators.
pub(crate) fn merge_accumulate(a: &[(ItemId, f64)], b: &[(ItemId, f64)]) -> SimilarityAccumulators {
    let mut acc = SimilarityAccumulators::default();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc.push(a[i].1, b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    acc
}
