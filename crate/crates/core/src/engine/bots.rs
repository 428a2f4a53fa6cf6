//! Detection of coordinated rating accounts.
//!
//! Organic neighbors drift apart over time. Accounts driven by one script keep
//! a coefficient near 1 for as long as they are jointly active. A ring is a
//! set of at least `min_size` users in which every pair held `k ∈ [1 − ε, 1]`
//! for at least `min_duration` consecutive buckets.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::similarity::DEFAULT_MIN_OVERLAP;
use crate::stability::{build_series, select_pairs, TimeGrid};
use crate::store::{GraphStore, UserId, UserPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BotConfig {
    pub epsilon: f64,
    /// Buckets.
    pub min_duration: usize,
    pub min_size: usize,
    pub min_overlap: usize,
}

impl Default for BotConfig {
    fn default() -> Self {
        BotConfig {
            epsilon: 0.01,
            min_duration: 3,
            min_size: 3,
            min_overlap: DEFAULT_MIN_OVERLAP,
        }
    }
}

impl BotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} must lie in (0, 1)", self.epsilon)));
        }
        if self.min_duration == 0 || self.min_size < 2 || self.min_overlap < 2 {
            return Err(Error::InvalidArgument(
                "need min_duration >= 1, min_size >= 2 and min_overlap >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BotRing {
    pub members: BTreeSet<UserId>,
    /// Smallest coefficient seen on any member pair during its near-1 run.
    pub min_pairwise_k: f64,
    /// Shortest near-1 run over member pairs, in buckets.
    pub stable_duration: usize,
}

/// Longest run of consecutive present values in `[1 − ε, 1]`, with the
/// smallest value inside it. The earliest run wins ties.
fn longest_near_one(values: &[Option<f64>], epsilon: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut run: Option<(usize, f64)> = None;
    for v in values {
        run = match v {
            Some(k) if *k >= 1.0 - epsilon => Some(run.map_or((1, *k), |(n, m)| (n + 1, m.min(*k)))),
            _ => None,
        };
        if let Some((n, m)) = run {
            if best.is_none_or(|(bn, _)| n > bn) {
                best = Some((n, m));
            }
        }
    }
    best
}

/// Greedy clique cover of one connected component: seed at the smallest
/// remaining id, add every remaining id (ascending) adjacent to all members.
fn cliques(component: &BTreeSet<UserId>, adjacent: impl Fn(UserId, UserId) -> bool) -> Vec<Vec<UserId>> {
    let mut remaining = component.clone();
    let mut out = Vec::new();
    while let Some(&seed) = remaining.iter().next() {
        let mut clique = vec![seed];
        for &v in remaining.iter().skip(1) {
            if clique.iter().all(|&c| adjacent(c, v)) {
                clique.push(v);
            }
        }
        for v in &clique {
            remaining.remove(v);
        }
        out.push(clique);
    }
    out
}

/// Rings ordered by their smallest member id.
pub fn detect_bot_rings(store: &GraphStore, grid: &TimeGrid, cfg: &BotConfig) -> Result<Vec<BotRing>> {
    cfg.validate()?;
    let pairs = select_pairs(store, grid, cfg.min_duration);
    let runs: Vec<(UserPair, (usize, f64))> = pairs
        .par_iter()
        .map(|&pair| {
            let series = build_series(store, pair, grid, cfg.min_overlap)?;
            Ok(longest_near_one(series.active_values(), cfg.epsilon)
                .filter(|&(n, _)| n >= cfg.min_duration)
                .map(|run| (pair, run)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let edges: BTreeMap<UserPair, (usize, f64)> = runs.into_iter().collect();
    let mut adjacency: BTreeMap<UserId, BTreeSet<UserId>> = BTreeMap::new();
    for pair in edges.keys() {
        adjacency.entry(pair.a()).or_default().insert(pair.b());
        adjacency.entry(pair.b()).or_default().insert(pair.a());
    }

    let mut seen = BTreeSet::new();
    let mut rings = Vec::new();
    for &start in adjacency.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut component = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &adjacency[&u] {
                if seen.insert(v) {
                    component.insert(v);
                    stack.push(v);
                }
            }
        }
        if component.len() < cfg.min_size {
            continue;
        }
        let adjacent = |x: UserId, y: UserId| adjacency[&x].contains(&y);
        for clique in cliques(&component, adjacent) {
            if clique.len() < cfg.min_size {
                continue;
            }
            let mut min_k = f64::INFINITY;
            let mut duration = usize::MAX;
            for (i, &x) in clique.iter().enumerate() {
                for &y in &clique[i + 1..] {
                    let (n, m) = edges[&UserPair::new(x, y)?];
                    min_k = min_k.min(m);
                    duration = duration.min(n);
                }
            }
            rings.push(BotRing {
                members: clique.into_iter().collect(),
                min_pairwise_k: min_k,
                stable_duration: duration,
            });
        }
    }
    rings.sort_by_key(|r| r.members.iter().next().copied());
    Ok(rings)
}
