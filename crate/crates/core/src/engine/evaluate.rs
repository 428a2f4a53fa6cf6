use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::engine::predict::{top_n_in, PredictConfig, Snapshot};
use crate::error::{Error, Result};
use crate::similarity::all_pairs;
use crate::store::{GraphStore, ItemId, Rating, Timestamp, UserId};

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 4.0;
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Users the averages were taken over.
    pub users: usize,
}

/// Running sums of per-user precision and recall.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSums {
    pub precision: f64,
    pub recall: f64,
    pub users: usize,
}

impl MetricSums {
    pub fn add(&mut self, recommended: &[ItemId], relevant: &BTreeSet<ItemId>) {
        let hits = recommended.iter().filter(|i| relevant.contains(i)).count();
        if !recommended.is_empty() {
            self.precision += hits as f64 / recommended.len() as f64;
        }
        self.recall += hits as f64 / relevant.len() as f64;
        self.users += 1;
    }

    pub fn merge(&mut self, other: &MetricSums) {
        self.precision += other.precision;
        self.recall += other.recall;
        self.users += other.users;
    }

    pub fn mean(&self) -> Option<PrecisionRecall> {
        (self.users > 0).then(|| PrecisionRecall {
            precision: self.precision / self.users as f64,
            recall: self.recall / self.users as f64,
            users: self.users,
        })
    }
}

/// Items each user rated in `(from, to]` at or above `threshold` that the user
/// had not rated by `from`.
pub fn relevant_items(
    store: &GraphStore,
    from: Timestamp,
    to: Timestamp,
    threshold: f64,
) -> BTreeMap<UserId, BTreeSet<ItemId>> {
    let mut out = BTreeMap::new();
    for user in store.users() {
        let Ok(list) = store.user_ratings(user) else { continue };
        let start = list.partition_point(|e| e.timestamp <= from);
        let seen: BTreeSet<ItemId> = list[..start].iter().map(|e| e.item).collect();
        let relevant: BTreeSet<ItemId> = list[start..]
            .iter()
            .take_while(|e| e.timestamp <= to)
            .filter(|e| e.rating.value() >= threshold && !seen.contains(&e.item))
            .map(|e| e.item)
            .collect();
        if !relevant.is_empty() {
            out.insert(user, relevant);
        }
    }
    out
}

/// Scores top-`n` lists built on `snapshot` against `relevant`.
///
/// Users without a profile in the snapshot cannot be served by neighborhood
/// filtering and are skipped.
pub fn score_top_n(
    snapshot: &Snapshot,
    neighbors: impl Fn(UserId) -> Vec<(UserId, f64)>,
    relevant: &BTreeMap<UserId, BTreeSet<ItemId>>,
    n: usize,
    cfg: &PredictConfig,
) -> MetricSums {
    let mut sums = MetricSums::default();
    for (&user, items) in relevant {
        if snapshot.profile(user).is_none() {
            continue;
        }
        let recommended: Vec<ItemId> = top_n_in(snapshot, neighbors(user), user, n, cfg)
            .into_iter()
            .map(|p| p.item)
            .collect();
        sums.add(&recommended, items);
    }
    sums
}

/// Temporal hold-out evaluation: similarities and profiles from events at or
/// before `split_time`, relevance from later events rated at least
/// `relevance_threshold`.
pub fn precision_recall(
    store: &GraphStore,
    split_time: Timestamp,
    n: usize,
    relevance_threshold: f64,
    min_overlap: usize,
    cfg: &PredictConfig,
) -> Result<PrecisionRecall> {
    if n == 0 {
        return Err(Error::InvalidArgument("top-N needs n >= 1".into()));
    }
    Rating::new(relevance_threshold)
        .map_err(|_| Error::InvalidArgument(format!("relevance threshold {relevance_threshold} is off the rating scale")))?;
    let (first, last) = store
        .time_range()
        .ok_or_else(|| Error::UndefinedInput("store holds no ratings".into()))?;
    if split_time < first || split_time >= last {
        return Err(Error::InvalidArgument(format!(
            "split time {split_time} outside the log range [{first}, {last})"
        )));
    }
    let mut adjacency: HashMap<UserId, Vec<(UserId, f64)>> = HashMap::new();
    for (pair, k) in all_pairs(store, split_time, min_overlap) {
        adjacency.entry(pair.a()).or_default().push((pair.b(), k));
        adjacency.entry(pair.b()).or_default().push((pair.a(), k));
    }
    let snapshot = Snapshot::build(store, split_time);
    let relevant = relevant_items(store, split_time, Timestamp::MAX, relevance_threshold);
    score_top_n(
        &snapshot,
        |u| adjacency.get(&u).cloned().unwrap_or_default(),
        &relevant,
        n,
        cfg,
    )
    .mean()
    .ok_or_else(|| Error::UndefinedInput("no test user has a relevant item and a training profile".into()))
}
