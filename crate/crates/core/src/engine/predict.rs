use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{GraphStore, ItemId, Rating, Timestamp, UserId};

pub const DEFAULT_K_NEIGHBORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictConfig {
    pub k_neighbors: usize,
    /// Neighbors with a smaller coefficient do not contribute. Zero
    /// coefficients never contribute.
    pub min_coefficient: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            min_coefficient: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub user: UserId,
    pub item: ItemId,
    pub predicted_rating: f64,
    /// Neighbors that entered the weighted average.
    pub support: usize,
    /// Neighbors who rated the item but were left out for a coefficient below
    /// `min_coefficient`.
    pub excluded_negative: usize,
}

/// Supplies similarity neighbors of a user.
pub trait NeighborSource {
    /// `(neighbor, coefficient)` pairs, in any order.
    fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)>;
}

impl NeighborSource for GraphStore {
    fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)> {
        self.edges_of(user)
            .filter_map(|e| Some((e.pair.other(user)?, e.coefficient)))
            .collect()
    }
}

impl<F: Fn(UserId) -> Vec<(UserId, f64)>> NeighborSource for F {
    fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)> {
        self(user)
    }
}

/// A user's ratings as of some time, sorted by item, with their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub items: Vec<(ItemId, f64)>,
    pub mean: f64,
}

impl Profile {
    pub fn from_ratings(ratings: impl IntoIterator<Item = (ItemId, Rating)>) -> Option<Self> {
        let items: Vec<(ItemId, f64)> = ratings.into_iter().map(|(i, r)| (i, r.value())).collect();
        if items.is_empty() {
            return None;
        }
        let mean = items.iter().map(|p| p.1).sum::<f64>() / items.len() as f64;
        Some(Profile { items, mean })
    }

    pub fn rating(&self, item: ItemId) -> Option<f64> {
        self.items
            .binary_search_by_key(&item, |p| p.0)
            .ok()
            .map(|i| self.items[i].1)
    }

    pub fn has(&self, item: ItemId) -> bool {
        self.rating(item).is_some()
    }
}

/// Rating profiles of many users frozen at one time.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub asof: Timestamp,
    profiles: HashMap<UserId, Profile>,
}

impl Snapshot {
    pub fn build(store: &GraphStore, asof: Timestamp) -> Self {
        let users: Vec<UserId> = store.users().collect();
        Self::build_for(store, asof, &users)
    }

    pub fn build_for(store: &GraphStore, asof: Timestamp, users: &[UserId]) -> Self {
        let profiles = users
            .par_iter()
            .filter_map(|&u| {
                let ratings = store.ratings_asof(u, asof).ok()?;
                Some((u, Profile::from_ratings(ratings)?))
            })
            .collect();
        Snapshot { asof, profiles }
    }

    pub fn profile(&self, user: UserId) -> Option<&Profile> {
        self.profiles.get(&user)
    }
}

/// Eligible neighbors in rank order: coefficient descending, then user id.
fn ranked(neighbors: Vec<(UserId, f64)>, cfg: &PredictConfig) -> (Vec<(UserId, f64)>, Vec<UserId>) {
    let (mut keep, negative): (Vec<_>, Vec<_>) = neighbors
        .into_iter()
        .filter(|&(_, k)| k != 0.0)
        .partition(|&(_, k)| k >= cfg.min_coefficient);
    keep.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    (keep, negative.into_iter().map(|n| n.0).collect())
}

#[derive(Default)]
struct Blend {
    support: usize,
    weighted: f64,
    weights: f64,
}

impl Blend {
    fn add(&mut self, k: f64, deviation: f64) {
        self.support += 1;
        self.weighted += k * deviation;
        self.weights += k.abs();
    }

    fn finish(&self, base: f64) -> Option<f64> {
        if self.support == 0 || self.weights == 0.0 {
            return None;
        }
        Some((base + self.weighted / self.weights).clamp(Rating::MIN, Rating::MAX))
    }
}

/// Mean-centered weighted prediction from the `k` highest-ranked neighbors who
/// rated `item`.
pub fn predict_in(
    snapshot: &Snapshot,
    neighbors: Vec<(UserId, f64)>,
    user: UserId,
    item: ItemId,
    cfg: &PredictConfig,
) -> Option<Prediction> {
    let base = snapshot.profile(user)?.mean;
    let (ranked, negative) = ranked(neighbors, cfg);
    let mut blend = Blend::default();
    for (v, k) in ranked {
        if blend.support == cfg.k_neighbors {
            break;
        }
        if let Some(p) = snapshot.profile(v) {
            if let Some(r) = p.rating(item) {
                blend.add(k, r - p.mean);
            }
        }
    }
    let excluded_negative = negative
        .iter()
        .filter(|v| snapshot.profile(**v).is_some_and(|p| p.has(item)))
        .count();
    Some(Prediction {
        user,
        item,
        predicted_rating: blend.finish(base)?,
        support: blend.support,
        excluded_negative,
    })
}

/// Ranks items the user has not rated by predicted rating (descending, ties by
/// item id ascending) and keeps the first `n`.
pub fn top_n_in(
    snapshot: &Snapshot,
    neighbors: Vec<(UserId, f64)>,
    user: UserId,
    n: usize,
    cfg: &PredictConfig,
) -> Vec<Prediction> {
    let Some(own) = snapshot.profile(user) else {
        return Vec::new();
    };
    let (ranked, _) = ranked(neighbors, cfg);
    let mut blends: HashMap<ItemId, Blend> = HashMap::new();
    for (v, k) in ranked {
        let Some(p) = snapshot.profile(v) else { continue };
        for &(item, r) in &p.items {
            if own.has(item) {
                continue;
            }
            let blend = blends.entry(item).or_default();
            if blend.support < cfg.k_neighbors {
                blend.add(k, r - p.mean);
            }
        }
    }
    let mut scored: Vec<Prediction> = blends
        .into_iter()
        .filter_map(|(item, b)| {
            Some(Prediction {
                user,
                item,
                predicted_rating: b.finish(own.mean)?,
                support: b.support,
                excluded_negative: 0,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.predicted_rating
            .total_cmp(&a.predicted_rating)
            .then(a.item.cmp(&b.item))
    });
    scored.truncate(n);
    scored
}

fn snapshot_around(store: &GraphStore, user: UserId, neighbors: &[(UserId, f64)], asof: Timestamp) -> Snapshot {
    let users: BTreeSet<UserId> = std::iter::once(user).chain(neighbors.iter().map(|n| n.0)).collect();
    let users: Vec<UserId> = users.into_iter().collect();
    Snapshot::build_for(store, asof, &users)
}

/// Predicts `user`'s rating of `item` from the store's similarity edges.
pub fn predict(
    store: &GraphStore,
    user: UserId,
    item: ItemId,
    asof: Timestamp,
    cfg: &PredictConfig,
) -> Result<Option<Prediction>> {
    predict_with(store, store, user, item, asof, cfg)
}

pub fn predict_with<S: NeighborSource + ?Sized>(
    store: &GraphStore,
    source: &S,
    user: UserId,
    item: ItemId,
    asof: Timestamp,
    cfg: &PredictConfig,
) -> Result<Option<Prediction>> {
    if !store.contains_user(user) {
        return Err(Error::NotFound(format!("user {user}")));
    }
    let neighbors = source.neighbors(user);
    let snapshot = snapshot_around(store, user, &neighbors, asof);
    Ok(predict_in(&snapshot, neighbors, user, item, cfg))
}

/// Top-`n` recommendations from the store's similarity edges.
pub fn top_n(
    store: &GraphStore,
    user: UserId,
    asof: Timestamp,
    n: usize,
    cfg: &PredictConfig,
) -> Result<Vec<ItemId>> {
    top_n_with(store, store, user, asof, n, cfg)
}

pub fn top_n_with<S: NeighborSource + ?Sized>(
    store: &GraphStore,
    source: &S,
    user: UserId,
    asof: Timestamp,
    n: usize,
    cfg: &PredictConfig,
) -> Result<Vec<ItemId>> {
    if n == 0 {
        return Err(Error::InvalidArgument("top-N needs n >= 1".into()));
    }
    if !store.contains_user(user) {
        return Err(Error::NotFound(format!("user {user}")));
    }
    let neighbors = source.neighbors(user);
    let snapshot = snapshot_around(store, user, &neighbors, asof);
    Ok(top_n_in(&snapshot, neighbors, user, n, cfg)
        .into_iter()
        .map(|p| p.item)
        .collect())
}
