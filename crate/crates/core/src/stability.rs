//! Similarity time series on a bucket grid and the stability-interval statistics
//! derived from them (interval histogram, smoothing, probability function and
//! survival curve).

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::similarity::{pearson_fast, SimilarityAccumulators, DEFAULT_MIN_OVERLAP};
use crate::store::{GraphStore, ItemId, RatedEntry, Timestamp, UserId, UserPair};

/// Roughly eleven days.
pub const DEFAULT_BUCKET_LEN: i64 = 1_000_000;
pub const DEFAULT_SENSITIVITY: f64 = 0.01;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 3;
pub const DEFAULT_MIN_ACTIVE_BUCKETS: usize = 5;

/// Fixed-width time buckets; bucket `i` covers `[start + i·len, start + (i+1)·len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    start: Timestamp,
    bucket_len: i64,
    bucket_count: usize,
}

impl TimeGrid {
    pub fn new(start: Timestamp, bucket_len: i64, bucket_count: usize) -> Result<Self> {
        if bucket_len <= 0 {
            return Err(Error::InvalidArgument(format!("bucket length {bucket_len} must be positive")));
        }
        Ok(TimeGrid {
            start,
            bucket_len,
            bucket_count,
        })
    }

    /// Smallest grid starting at `first` whose buckets cover `last`.
    pub fn covering(first: Timestamp, last: Timestamp, bucket_len: i64) -> Result<Self> {
        if last < first {
            return Err(Error::InvalidArgument(format!("empty time range [{first}, {last}]")));
        }
        let mut grid = TimeGrid::new(first, bucket_len, 0)?;
        grid.bucket_count = ((last - first) / bucket_len + 1) as usize;
        Ok(grid)
    }

    pub fn for_store(store: &GraphStore, bucket_len: i64) -> Result<Self> {
        let (first, last) = store
            .time_range()
            .ok_or_else(|| Error::InsufficientData("store holds no ratings".into()))?;
        TimeGrid::covering(first, last, bucket_len)
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn bucket_len(&self) -> i64 {
        self.bucket_len
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    /// Bucket index of `t`, saturating at both ends of the grid.
    pub fn bucket_of(&self, t: Timestamp) -> usize {
        if t < self.start || self.bucket_count == 0 {
            return 0;
        }
        (((t - self.start) / self.bucket_len) as usize).min(self.bucket_count - 1)
    }

    pub fn bucket_start(&self, i: usize) -> Timestamp {
        self.start + i as i64 * self.bucket_len
    }

    /// Last second inside bucket `i`; prefix windows are evaluated "as of" this time.
    pub fn bucket_end(&self, i: usize) -> Timestamp {
        self.bucket_start(i + 1) - 1
    }
}

/// Per-bucket coefficients of one pair over the whole grid.
///
/// Only the joint-activity range is stored; every bucket outside it is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySeries {
    pair: UserPair,
    bucket_count: usize,
    active_range: Option<(usize, usize)>,
    active_values: Vec<Option<f64>>,
}

impl SimilaritySeries {
    pub fn pair(&self) -> UserPair {
        self.pair
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    /// Inclusive first and last bucket in which both users are active.
    pub fn active_range(&self) -> Option<(usize, usize)> {
        self.active_range
    }

    pub fn value(&self, bucket: usize) -> Option<f64> {
        let (lo, hi) = self.active_range?;
        if bucket < lo || bucket > hi {
            return None;
        }
        self.active_values[bucket - lo]
    }

    /// Values restricted to the active range.
    pub fn active_values(&self) -> &[Option<f64>] {
        &self.active_values
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        (0..self.bucket_count).map(|i| self.value(i)).collect()
    }

    pub fn present_count(&self) -> usize {
        self.active_values.iter().filter(|v| v.is_some()).count()
    }
}

fn activity_span(list: &[RatedEntry], grid: &TimeGrid) -> Option<(usize, usize)> {
    Some((grid.bucket_of(list.first()?.timestamp), grid.bucket_of(list.last()?.timestamp)))
}

/// Inclusive bucket span during which both users are active.
pub fn joint_activity(store: &GraphStore, pair: UserPair, grid: &TimeGrid) -> Result<Option<(usize, usize)>> {
    let a = activity_span(store.user_ratings(pair.a())?, grid);
    let b = activity_span(store.user_ratings(pair.b())?, grid);
    Ok(match (a, b) {
        (Some(a), Some(b)) => {
            let (lo, hi) = (a.0.max(b.0), a.1.min(b.1));
            (lo <= hi).then_some((lo, hi))
        }
        _ => None,
    })
}

/// Incrementally maintained co-rating state of one pair.
#[derive(Default)]
struct PairState {
    latest: HashMap<ItemId, [Option<f64>; 2]>,
    acc: SimilarityAccumulators,
}

impl PairState {
    fn apply(&mut self, side: usize, item: ItemId, rating: f64) {
        let slot = self.latest.entry(item).or_default();
        if let [Some(x), Some(y)] = *slot {
            self.acc.remove(x, y);
        }
        slot[side] = Some(rating);
        if let [Some(x), Some(y)] = *slot {
            self.acc.push(x, y);
        }
    }
}

/// Cumulative-prefix coefficient of `pair` at the end of every bucket inside the
/// pair's joint-activity range.
pub fn build_series(
    store: &GraphStore,
    pair: UserPair,
    grid: &TimeGrid,
    min_overlap: usize,
) -> Result<SimilaritySeries> {
    let lists = [store.user_ratings(pair.a())?, store.user_ratings(pair.b())?];
    let active_range = joint_activity(store, pair, grid)?;
    let mut series = SimilaritySeries {
        pair,
        bucket_count: grid.bucket_count(),
        active_range,
        active_values: Vec::new(),
    };
    let Some((lo, hi)) = active_range else {
        return Ok(series);
    };
    let mut state = PairState::default();
    let mut cursor = [0usize; 2];
    for bucket in lo..=hi {
        let end = grid.bucket_end(bucket);
        for side in 0..2 {
            let list = lists[side];
            while cursor[side] < list.len() && list[cursor[side]].timestamp <= end {
                let e = list[cursor[side]];
                state.apply(side, e.item, e.rating.value());
                cursor[side] += 1;
            }
        }
        series.active_values.push(pearson_fast(&state.acc, min_overlap));
    }
    Ok(series)
}

/// Lengths (in buckets) of completed stability intervals.
///
/// Each interval is anchored at its first present value; it closes at the first
/// later bucket whose value differs from the anchor by more than `d`, and that
/// bucket anchors the next interval. A run broken by an absent value, or still
/// open at the end of the series, is dropped because its completion was never
/// observed.
pub fn stability_intervals(values: &[Option<f64>], d: f64) -> Vec<u32> {
    let mut lengths = Vec::new();
    let mut anchor: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        match (*v, anchor) {
            (None, _) => anchor = None,
            (Some(v), None) => anchor = Some((i, v)),
            (Some(v), Some((at, k))) => {
                if (v - k).abs() > d {
                    lengths.push((i - at) as u32);
                    anchor = Some((i, v));
                }
            }
        }
    }
    lengths
}

/// Frequency of stability intervals by length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalHistogram {
    pub counts: BTreeMap<u32, u64>,
    pub sensitivity: f64,
}

impl IntervalHistogram {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn max_length(&self) -> Option<u32> {
        self.counts.keys().next_back().copied()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.counts.iter().map(|(&n, &c)| (n as f64, c as f64)).collect()
    }
}

pub fn histogram(lengths: &[u32], sensitivity: f64) -> IntervalHistogram {
    let mut counts = BTreeMap::new();
    for &n in lengths {
        *counts.entry(n).or_insert(0) += 1;
    }
    IntervalHistogram { counts, sensitivity }
}

/// Centered moving average over consecutive lengths from the smallest to the
/// largest observed one (missing lengths count as zero). Edges average over the
/// part of the window that exists.
pub fn moving_average(hist: &IntervalHistogram, window: usize) -> Result<Vec<(u32, f64)>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("smoothing window {window} must be odd and >= 1")));
    }
    let (Some(&lo), Some(&hi)) = (hist.counts.keys().next(), hist.counts.keys().next_back()) else {
        return Ok(Vec::new());
    };
    let dense: Vec<f64> = (lo..=hi)
        .map(|n| hist.counts.get(&n).copied().unwrap_or(0) as f64)
        .collect();
    let half = window / 2;
    Ok((0..dense.len())
        .map(|i| {
            let from = i.saturating_sub(half);
            let to = (i + half).min(dense.len() - 1);
            let slice = &dense[from..=to];
            (lo + i as u32, slice.iter().sum::<f64>() / slice.len() as f64)
        })
        .collect())
}

/// Normalises counts to `p(n) = N(n) / ΣN`.
pub fn probability_function(hist: &IntervalHistogram) -> Result<BTreeMap<u32, f64>> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::UndefinedInput("probability of an empty histogram".into()));
    }
    Ok(hist
        .counts
        .iter()
        .map(|(&n, &c)| (n, c as f64 / total as f64))
        .collect())
}

/// `k(t)`: how many monitored units have not yet changed at time `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurvivalCurve {
    pub values: Vec<u64>,
}

impl SurvivalCurve {
    /// `(t, k(t))` pairs with `k(t) > 0`, ready for a log-linear fit.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(t, &k)| (t as f64, k as f64))
            .collect()
    }
}

/// Running difference `k(0) = total`, `k(t) = k(t−1) − N(t)`.
pub fn survival_curve(hist: &IntervalHistogram, total: u64) -> Result<SurvivalCurve> {
    let horizon = hist.max_length().unwrap_or(0);
    let mut values = Vec::with_capacity(horizon as usize + 1);
    let mut k = total;
    values.push(k);
    for t in 1..=horizon {
        let n = hist.counts.get(&t).copied().unwrap_or(0);
        k = k.checked_sub(n).ok_or_else(|| {
            Error::Inconsistent(format!(
                "survival count would go negative at t = {t}: {k} left, {n} changes"
            ))
        })?;
        values.push(k);
    }
    Ok(SurvivalCurve { values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub bucket_len: i64,
    pub sensitivity: f64,
    pub min_overlap: usize,
    pub min_active_buckets: usize,
    pub smoothing_window: usize,
    /// Keep at most this many selected pairs (first in pair order).
    pub max_pairs: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bucket_len: DEFAULT_BUCKET_LEN,
            sensitivity: DEFAULT_SENSITIVITY,
            min_overlap: DEFAULT_MIN_OVERLAP,
            min_active_buckets: DEFAULT_MIN_ACTIVE_BUCKETS,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            max_pairs: None,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bucket_len <= 0 {
            return Err(Error::InvalidArgument("bucket length must be positive".into()));
        }
        if !(self.sensitivity > 0.0) {
            return Err(Error::InvalidArgument("sensitivity d must be positive".into()));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument("smoothing window must be odd".into()));
        }
        Ok(())
    }
}

/// Pairs whose joint activity spans at least `min_active_buckets` buckets.
pub fn select_pairs(store: &GraphStore, grid: &TimeGrid, min_active_buckets: usize) -> Vec<UserPair> {
    let spans: Vec<(UserId, (usize, usize))> = store
        .users()
        .filter_map(|u| Some((u, activity_span(store.user_ratings(u).ok()?, grid)?)))
        .filter(|(_, (lo, hi))| hi - lo + 1 >= min_active_buckets)
        .collect();
    let mut pairs = Vec::new();
    for (i, &(ua, (alo, ahi))) in spans.iter().enumerate() {
        for &(ub, (blo, bhi)) in &spans[i + 1..] {
            let (lo, hi) = (alo.max(blo), ahi.min(bhi));
            if lo <= hi && hi - lo + 1 >= min_active_buckets {
                if let Ok(pair) = UserPair::new(ua, ub) {
                    pairs.push(pair);
                }
            }
        }
    }
    pairs
}

/// Everything the stability stage produces for one store.
#[derive(Debug, Clone)]
pub struct StabilityAnalysis {
    pub grid: TimeGrid,
    pub series: Vec<SimilaritySeries>,
    /// Completed interval lengths, aligned with `series`.
    pub intervals: Vec<Vec<u32>>,
    pub histogram: IntervalHistogram,
    pub smoothed: Vec<(u32, f64)>,
    /// Survival of the observed intervals: `k(0)` is the number of intervals.
    pub survival: SurvivalCurve,
}

impl StabilityAnalysis {
    pub fn pair_intervals(&self) -> impl Iterator<Item = (UserPair, &[u32])> + '_ {
        self.series
            .iter()
            .zip(&self.intervals)
            .map(|(s, i)| (s.pair(), i.as_slice()))
    }
}

pub fn analyze(store: &GraphStore, config: &AnalysisConfig) -> Result<StabilityAnalysis> {
    config.validate()?;
    let grid = TimeGrid::for_store(store, config.bucket_len)?;
    let mut pairs = select_pairs(store, &grid, config.min_active_buckets);
    if let Some(max) = config.max_pairs {
        pairs.truncate(max);
    }
    let built: Vec<(SimilaritySeries, Vec<u32>)> = pairs
        .par_iter()
        .map(|&pair| {
            let s = build_series(store, pair, &grid, config.min_overlap)?;
            let lengths = stability_intervals(s.active_values(), config.sensitivity);
            Ok((s, lengths))
        })
        .collect::<Result<_>>()?;
    let (series, intervals): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let all: Vec<u32> = intervals.iter().flatten().copied().collect();
    let histogram = histogram(&all, config.sensitivity);
    let smoothed = moving_average(&histogram, config.smoothing_window)?;
    let survival = survival_curve(&histogram, histogram.total())?;
    Ok(StabilityAnalysis {
        grid,
        series,
        intervals,
        histogram,
        smoothed,
        survival,
    })
}
