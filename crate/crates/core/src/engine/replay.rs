//! Chronological replay of a rating log under a recomputation policy.
//!
//! Each event is a user visit. The rating is applied to the store first, then
//! the policy decides whether the visiting user's similarity coefficients are
//! recomputed (cost `T_fr`) or served from cache (cost `T_ir`). Coefficients
//! are maintained incrementally through per-pair accumulators, so a
//! recomputation reads the exact current value of every pair.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::decay::fmt_sig;
use crate::engine::evaluate::{relevant_items, score_top_n, MetricSums};
use crate::engine::predict::{PredictConfig, Snapshot};
use crate::error::{Error, Result};
use crate::scheduler::{is_stale, PeriodTable, ServiceParams};
use crate::similarity::{pearson_fast, SimilarityAccumulators};
use crate::stability::TimeGrid;
use crate::store::{GraphStore, ItemId, RatingEvent, Timestamp, UserId};

pub const DEFAULT_CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Recompute on every visit.
    Always,
    /// Recompute once the given number of seconds has passed since the
    /// user's last recomputation.
    Periodic(f64),
    /// Personal period from the table, the average period in cold start.
    Adaptive(PeriodTable),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Always => "always",
            Policy::Periodic(_) => "periodic",
            Policy::Adaptive(_) => "adaptive",
        }
    }

    fn period(&self, user: UserId) -> f64 {
        match self {
            Policy::Always => 0.0,
            Policy::Periodic(p) => *p,
            Policy::Adaptive(table) => table.user_period(user),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |p: f64| !(p > 0.0);
        match self {
            Policy::Periodic(p) if !(*p >= 0.0) => {
                Err(Error::InvalidArgument(format!("period {p} must be non-negative")))
            }
            Policy::Adaptive(t) if bad(t.average_rp) || t.recount.values().any(|&p| bad(p)) => {
                Err(Error::InvalidArgument("adaptive periods must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayConfig {
    pub service: ServiceParams,
    /// Coefficient change treated as a change of the neighborhood.
    pub sensitivity: f64,
    pub min_overlap: usize,
    pub predict: PredictConfig,
    pub top_n: usize,
    pub relevance_threshold: f64,
    /// Buckets between quality checkpoints.
    pub checkpoint_every: usize,
}

impl ReplayConfig {
    pub fn new(service: ServiceParams) -> Self {
        ReplayConfig {
            service,
            sensitivity: crate::stability::DEFAULT_SENSITIVITY,
            min_overlap: crate::similarity::DEFAULT_MIN_OVERLAP,
            predict: PredictConfig::default(),
            top_n: crate::engine::evaluate::DEFAULT_TOP_N,
            relevance_threshold: crate::engine::evaluate::DEFAULT_RELEVANCE_THRESHOLD,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }

    fn validate(&self) -> Result<()> {
        self.service.validate()?;
        if !(self.sensitivity >= 0.0) || self.min_overlap < 2 || self.top_n == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument(
                "replay needs sensitivity >= 0, min_overlap >= 2, top_n >= 1 and checkpoint_every >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReplayMetrics {
    pub recompute_count: u64,
    pub served_requests: u64,
    pub cached_requests: u64,
    /// `(recomputations·T_fr + cached·T_ir) / served`.
    pub simulated_mean_service_time: f64,
    pub precision_at_n: Option<f64>,
    pub recall_at_n: Option<f64>,
    /// User evaluations pooled into precision and recall.
    pub evaluations: usize,
    /// Share of recomputations that changed no top-k coefficient by more than `d`.
    pub n_fr_fraction: f64,
    /// Share of cached serves whose top-k neighborhood was out of date.
    pub n_ir_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub time: Timestamp,
    pub recompute_count: u64,
    pub served_requests: u64,
    pub mean_service_time: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub users: usize,
    pub n_fr_fraction: f64,
    pub n_ir_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub policy: &'static str,
    pub metrics: ReplayMetrics,
    pub checkpoints: Vec<Checkpoint>,
}

impl ReplayOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "time,policy,recompute_count,served_requests,mean_service_time,precision,recall,users,n_fr,n_ir\n",
        );
        let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_default();
        for c in &self.checkpoints {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.time,
                self.policy,
                c.recompute_count,
                c.served_requests,
                fmt_sig(c.mean_service_time),
                opt(c.precision),
                opt(c.recall),
                c.users,
                fmt_sig(c.n_fr_fraction),
                fmt_sig(c.n_ir_fraction)
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let m = &self.metrics;
        let opt = |x: Option<f64>| x.map(fmt_sig).unwrap_or_else(|| "undefined".into());
        let mut out = String::new();
        let _ = writeln!(out, "[{}]", self.policy);
        let _ = writeln!(out, "recompute_count = {}", m.recompute_count);
        let _ = writeln!(out, "served_requests = {}", m.served_requests);
        let _ = writeln!(out, "cached_requests = {}", m.cached_requests);
        let _ = writeln!(out, "simulated_mean_service_time = {}", fmt_sig(m.simulated_mean_service_time));
        let _ = writeln!(out, "precision_at_n = {}", opt(m.precision_at_n));
        let _ = writeln!(out, "recall_at_n = {}", opt(m.recall_at_n));
        let _ = writeln!(out, "evaluations = {}", m.evaluations);
        let _ = writeln!(out, "n_fr_fraction = {}", fmt_sig(m.n_fr_fraction));
        let _ = writeln!(out, "n_ir_fraction = {}", fmt_sig(m.n_ir_fraction));
        out
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn pair_key(a: usize, b: usize) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    ((lo as u64) << 32) | hi as u64
}

struct Sim<'c> {
    cfg: &'c ReplayConfig,
    store: GraphStore,
    index: HashMap<UserId, usize>,
    ids: Vec<UserId>,
    current: Vec<HashMap<ItemId, f64>>,
    raters: HashMap<ItemId, Vec<usize>>,
    acc: HashMap<u64, SimilarityAccumulators>,
    partners: Vec<Vec<usize>>,
    cached: Vec<HashMap<usize, f64>>,
    last_recount: Vec<Option<Timestamp>>,
    recomputes: u64,
    served: u64,
    unneeded: u64,
    missed: u64,
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c ReplayConfig) -> Self {
        Sim {
            cfg,
            store: GraphStore::new(),
            index: HashMap::new(),
            ids: Vec::new(),
            current: Vec::new(),
            raters: HashMap::new(),
            acc: HashMap::new(),
            partners: Vec::new(),
            cached: Vec::new(),
            last_recount: Vec::new(),
            recomputes: 0,
            served: 0,
            unneeded: 0,
            missed: 0,
        }
    }

    fn user_index(&mut self, user: UserId) -> usize {
        if let Some(&i) = self.index.get(&user) {
            return i;
        }
        let i = self.ids.len();
        self.index.insert(user, i);
        self.ids.push(user);
        self.current.push(HashMap::new());
        self.partners.push(Vec::new());
        self.cached.push(HashMap::new());
        self.last_recount.push(None);
        i
    }

    fn apply(&mut self, ev: RatingEvent) -> usize {
        self.store.upsert_rating(ev);
        let u = self.user_index(ev.user);
        let r = ev.rating.value();
        let prev = self.current[u].insert(ev.item, r);
        let raters = self.raters.entry(ev.item).or_default();
        for &v in raters.iter() {
            if v == u {
                continue;
            }
            let rv = self.current[v][&ev.item];
            let orient = |x: f64| if u < v { (x, rv) } else { (rv, x) };
            let key = pair_key(u, v);
            let acc = self.acc.entry(key).or_insert_with(|| {
                self.partners[u].push(v);
                self.partners[v].push(u);
                SimilarityAccumulators::default()
            });
            if let Some(old) = prev {
                let (x, y) = orient(old);
                acc.remove(x, y);
            }
            let (x, y) = orient(r);
            acc.push(x, y);
        }
        if prev.is_none() {
            raters.push(u);
        }
        u
    }

    fn fresh(&self, u: usize, v: usize) -> Option<f64> {
        self.acc
            .get(&pair_key(u, v))
            .and_then(|a| pearson_fast(a, self.cfg.min_overlap))
    }

    fn eligible(&self, k: f64) -> bool {
        k != 0.0 && k >= self.cfg.predict.min_coefficient
    }

    fn top_k(&self, mut list: Vec<(usize, f64)>) -> Vec<usize> {
        list.retain(|&(_, k)| self.eligible(k));
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(self.ids[a.0].cmp(&self.ids[b.0])));
        list.truncate(self.cfg.predict.k_neighbors);
        list.into_iter().map(|(v, _)| v).collect()
    }

    /// True when the top-k neighborhood from the cache differs from the
    /// current one by membership or by a coefficient moving more than `d`.
    fn neighborhood_changed(&self, u: usize, fresh: &HashMap<usize, f64>) -> bool {
        let cached_top = self.top_k(self.cached[u].iter().map(|(&v, &k)| (v, k)).collect());
        let fresh_top = self.top_k(fresh.iter().map(|(&v, &k)| (v, k)).collect());
        let union: HashSet<usize> = cached_top.into_iter().chain(fresh_top).collect();
        union.into_iter().any(|v| match (self.cached[u].get(&v), fresh.get(&v)) {
            (Some(a), Some(b)) => (a - b).abs() > self.cfg.sensitivity,
            _ => true,
        })
    }

    fn visit(&mut self, u: usize, now: Timestamp, policy: &Policy) {
        self.served += 1;
        let fresh: HashMap<usize, f64> = self.partners[u]
            .iter()
            .filter_map(|&v| Some((v, self.fresh(u, v)?)))
            .collect();
        let changed = self.neighborhood_changed(u, &fresh);
        let due = match self.last_recount[u] {
            None => true,
            Some(last) => is_stale(last, policy.period(self.ids[u]), now),
        };
        if !due {
            self.missed += changed as u64;
            return;
        }
        self.recomputes += 1;
        self.unneeded += !changed as u64;
        self.last_recount[u] = Some(now);
        let old: Vec<usize> = self.cached[u].drain().map(|(v, _)| v).collect();
        for v in old {
            self.cached[v].remove(&u);
        }
        for (&v, &k) in &fresh {
            self.cached[u].insert(v, k);
            self.cached[v].insert(u, k);
        }
    }

    fn neighbors(&self, user: UserId) -> Vec<(UserId, f64)> {
        self.index
            .get(&user)
            .map(|&u| self.cached[u].iter().map(|(&v, &k)| (self.ids[v], k)).collect())
            .unwrap_or_default()
    }

    fn n_fr_fraction(&self) -> f64 {
        ratio(self.unneeded, self.recomputes)
    }

    fn n_ir_fraction(&self) -> f64 {
        ratio(self.missed, self.served - self.recomputes)
    }

    fn mean_service_time(&self) -> f64 {
        if self.served == 0 {
            return 0.0;
        }
        let cached = self.served - self.recomputes;
        let s = &self.cfg.service;
        (self.recomputes as f64 * s.t_fr + cached as f64 * s.t_ir) / self.served as f64
    }
}

/// Replays `events` (sorted by timestamp) on `grid` under `policy`.
///
/// Every `checkpoint_every` buckets the cached neighborhoods are scored by
/// precision and recall at `top_n` against items rated at or above the
/// relevance threshold during the following `checkpoint_every` buckets.
pub fn replay(events: &[RatingEvent], grid: &TimeGrid, policy: &Policy, cfg: &ReplayConfig) -> Result<ReplayOutcome> {
    cfg.validate()?;
    policy.validate()?;
    if let Some(w) = events.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::InvalidArgument(format!(
            "events out of order: timestamp {} follows {}",
            w[1].timestamp, w[0].timestamp
        )));
    }
    let full = GraphStore::from_events(events.iter().copied());
    let horizon = cfg.checkpoint_every as i64 * grid.bucket_len();
    let grid_end = grid.bucket_end(grid.bucket_count() - 1);
    let mut cuts: Vec<Timestamp> = (1..)
        .map(|j| j * cfg.checkpoint_every - 1)
        .take_while(|&b| b + 1 < grid.bucket_count())
        .map(|b| grid.bucket_end(b))
        .collect();
    cuts.reverse();

    let mut sim = Sim::new(cfg);
    let mut checkpoints = Vec::new();
    let mut pooled = MetricSums::default();
    let mut checkpoint = |sim: &Sim, c: Timestamp, checkpoints: &mut Vec<Checkpoint>| {
        let relevant = relevant_items(&full, c, (c + horizon).min(grid_end), cfg.relevance_threshold);
        let snapshot = Snapshot::build(&sim.store, c);
        let sums = score_top_n(&snapshot, |u| sim.neighbors(u), &relevant, cfg.top_n, &cfg.predict);
        pooled.merge(&sums);
        let mean = sums.mean();
        checkpoints.push(Checkpoint {
            time: c,
            recompute_count: sim.recomputes,
            served_requests: sim.served,
            mean_service_time: sim.mean_service_time(),
            precision: mean.map(|m| m.precision),
            recall: mean.map(|m| m.recall),
            users: sums.users,
            n_fr_fraction: sim.n_fr_fraction(),
            n_ir_fraction: sim.n_ir_fraction(),
        });
    };
    for ev in events {
        while cuts.last().is_some_and(|&c| ev.timestamp > c) {
            let c = cuts.pop().expect("checked non-empty");
            checkpoint(&sim, c, &mut checkpoints);
        }
        let u = sim.apply(*ev);
        sim.visit(u, ev.timestamp, policy);
    }
    while let Some(c) = cuts.pop() {
        checkpoint(&sim, c, &mut checkpoints);
    }

    let cached = sim.served - sim.recomputes;
    let mean = pooled.mean();
    Ok(ReplayOutcome {
        policy: policy.name(),
        metrics: ReplayMetrics {
            recompute_count: sim.recomputes,
            served_requests: sim.served,
            cached_requests: cached,
            simulated_mean_service_time: sim.mean_service_time(),
            precision_at_n: mean.map(|m| m.precision),
            recall_at_n: mean.map(|m| m.recall),
            evaluations: pooled.users,
            n_fr_fraction: sim.n_fr_fraction(),
            n_ir_fraction: sim.n_ir_fraction(),
        },
        checkpoints,
    })
}
