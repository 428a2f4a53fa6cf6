//! When to recompute similarity coefficients.
//!
//! Staleness is judged per edge (`now >= last_recount_time + period`). The
//! service-time model picks the longest staleness `t_cr` whose wrong-recommendation
//! probability `n₀(t) = p_b + (1 − p_b)(1 − e^(−λt))` stays within `n_cr`; mean
//! service time `T(t) = (T_fr·τ + t·T_ir)/(t + τ)` falls monotonically in `t`, so
//! `t_cr` is also the minimiser of `T` over the feasible set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::decay::{fit_exponential, fmt_sig, DecayModel};
use crate::error::{Error, Result};
use crate::stability::{histogram, survival_curve};
use crate::store::{GraphStore, SimilarityEdge, Timestamp, UserId, UserPair};

pub const DEFAULT_ACTIVITY_GROUPS: usize = 3;
pub const DEFAULT_MIN_USER_INTERVALS: usize = 5;

/// Technological and quality constants of the service-time model.
///
/// `tau_visit` is expressed in the same time unit as λ (grid buckets).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceParams {
    pub t_fr: f64,
    pub t_ir: f64,
    pub p_b: f64,
    pub n_cr: f64,
    pub tau_visit: f64,
}

impl ServiceParams {
    pub fn new(t_fr: f64, t_ir: f64, p_b: f64, n_cr: f64, tau_visit: f64) -> Result<Self> {
        let params = ServiceParams {
            t_fr,
            t_ir,
            p_b,
            n_cr,
            tau_visit,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_ir > 0.0 && self.t_ir < self.t_fr && self.t_fr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "service times must satisfy 0 < t_ir < t_fr (got t_ir = {}, t_fr = {})",
                self.t_ir, self.t_fr
            )));
        }
        if !(self.p_b >= 0.0 && self.n_cr < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "probabilities must satisfy 0 <= p_b and n_cr < 1 (got p_b = {}, n_cr = {})",
                self.p_b, self.n_cr
            )));
        }
        if self.n_cr <= self.p_b {
            return Err(Error::Infeasible(format!(
                "error budget n_cr = {} does not exceed the base error p_b = {}",
                self.n_cr, self.p_b
            )));
        }
        if !(self.tau_visit > 0.0 && self.tau_visit.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mean visit period {} must be positive",
                self.tau_visit
            )));
        }
        Ok(())
    }

    /// Probability of a coefficient staying unchanged over `t_cr`: `(1 − n_cr)/(1 − p_b)`.
    pub fn stability_level(&self) -> f64 {
        (1.0 - self.n_cr) / (1.0 - self.p_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSolution {
    pub t_cr: f64,
    pub mean_service_time: f64,
    pub load_coefficient: f64,
}

/// `now >= last + period`, the shared staleness rule for edges and users.
pub fn is_stale(last_recount_time: Timestamp, period: f64, now: Timestamp) -> bool {
    (now - last_recount_time) as f64 >= period
}

/// True once the edge's personal period (or, in cold start, the average period)
/// has elapsed since its last recomputation.
pub fn needs_recompute(edge: &SimilarityEdge, now: Timestamp) -> bool {
    let period = edge.recount_period.unwrap_or(edge.average_rp);
    is_stale(edge.last_recount_time, period, now)
}

/// `n₀(t) = p_b + (1 − p_b)(1 − e^(−λt))`.
pub fn recommendation_error(lambda: f64, p_b: f64, t: f64) -> f64 {
    p_b + (1.0 - p_b) * -(-lambda * t).exp_m1()
}

/// Largest `t` with `recommendation_error(λ, p_b, t) <= n_cr`.
pub fn critical_time(lambda: f64, p_b: f64, n_cr: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("decay rate {lambda} must be positive")));
    }
    if !(0.0..1.0).contains(&p_b) || n_cr >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_b < n_cr < 1 (got p_b = {p_b}, n_cr = {n_cr})"
        )));
    }
    if n_cr <= p_b {
        return Err(Error::Infeasible(format!(
            "error budget n_cr = {n_cr} does not exceed the base error p_b = {p_b}"
        )));
    }
    Ok(-(-(n_cr - p_b) / (1.0 - p_b)).ln_1p() / lambda)
}

/// `T(t) = (T_fr·τ + t·T_ir)/(t + τ)`.
pub fn mean_service_time(params: &ServiceParams, t_cr: f64) -> f64 {
    if t_cr.is_infinite() {
        return params.t_ir;
    }
    (params.t_fr * params.tau_visit + t_cr * params.t_ir) / (t_cr + params.tau_visit)
}

pub fn load_coefficient(mean_service_time: f64, t_fr: f64) -> f64 {
    mean_service_time / t_fr
}

pub fn optimize(params: &ServiceParams, lambda: f64) -> Result<ScheduleSolution> {
    params.validate()?;
    let t_cr = critical_time(lambda, params.p_b, params.n_cr)?;
    let t = mean_service_time(params, t_cr);
    Ok(ScheduleSolution {
        t_cr,
        mean_service_time: t,
        load_coefficient: load_coefficient(t, params.t_fr),
    })
}

/// Human-readable schedule report; `bucket_len` converts bucket units to seconds.
pub fn schedule_report(params: &ServiceParams, lambda: f64, sol: &ScheduleSolution, bucket_len: i64) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: f64| {
        let _ = writeln!(out, "{k} = {}", fmt_sig(v));
    };
    kv("lambda", lambda);
    kv("t_fr", params.t_fr);
    kv("t_ir", params.t_ir);
    kv("p_b", params.p_b);
    kv("n_cr", params.n_cr);
    kv("tau_visit", params.tau_visit);
    kv("t_cr", sol.t_cr);
    kv("mean_service_time", sol.mean_service_time);
    kv("load_coefficient", sol.load_coefficient);
    kv("visits_per_period", sol.t_cr / params.tau_visit);
    let _ = writeln!(out, "bucket_len_seconds = {bucket_len}");
    let _ = writeln!(out, "t_cr_seconds = {}", fmt_sig(sol.t_cr * bucket_len as f64));
    out
}

/// Assigns activity-quantile groups (0 = least active) by rating count.
pub fn activity_groups(store: &GraphStore, groups: usize) -> BTreeMap<UserId, usize> {
    let mut users: Vec<(usize, UserId)> = store
        .users()
        .map(|u| (store.user_ratings(u).map_or(0, <[_]>::len), u))
        .collect();
    users.sort();
    let n = users.len();
    let groups = groups.max(1);
    users
        .into_iter()
        .enumerate()
        .map(|(rank, (_, u))| (u, rank * groups / n.max(1)))
        .collect()
}

/// Decay rate fitted to the survival of a set of interval lengths.
pub fn fit_interval_lambda(lengths: &[u32]) -> Result<f64> {
    let h = histogram(lengths, 0.0);
    let curve = survival_curve(&h, h.total())?;
    Ok(fit_exponential(&curve.points())?.lambda)
}

/// Per-user decay rates for users with enough observed intervals.
///
/// Intervals of each pair count for both members. Users are pooled by activity
/// group and the group's survival fit supplies the rate; a user below
/// `min_intervals` observations of their own stays in cold start (no entry).
pub fn group_lambdas<'a>(
    store: &GraphStore,
    pair_intervals: impl IntoIterator<Item = (UserPair, &'a [u32])>,
    groups: usize,
    min_intervals: usize,
) -> BTreeMap<UserId, f64> {
    let membership = activity_groups(store, groups);
    let mut per_user: BTreeMap<UserId, usize> = BTreeMap::new();
    let mut per_group: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (pair, lengths) in pair_intervals {
        if lengths.is_empty() {
            continue;
        }
        let mut touched = BTreeSet::new();
        for u in [pair.a(), pair.b()] {
            *per_user.entry(u).or_default() += lengths.len();
            if let Some(&g) = membership.get(&u) {
                touched.insert(g);
            }
        }
        for g in touched {
            per_group.entry(g).or_default().extend_from_slice(lengths);
        }
    }
    let rates: BTreeMap<usize, f64> = per_group
        .into_iter()
        .filter(|(_, l)| l.len() >= min_intervals)
        .filter_map(|(g, l)| Some((g, fit_interval_lambda(&l).ok()?)))
        .collect();
    per_user
        .into_iter()
        .filter(|&(_, count)| count >= min_intervals)
        .filter_map(|(u, _)| Some((u, *rates.get(membership.get(&u)?)?)))
        .collect()
}

/// Recomputation periods in seconds: a population-wide fallback plus personal
/// periods for users whose own decay rate is known.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodTable {
    pub average_rp: f64,
    pub recount: BTreeMap<UserId, f64>,
}

impl PeriodTable {
    /// Periods are `stable_horizon(p_st)` of each rate, converted to seconds
    /// with `bucket_len`.
    pub fn new(
        lambda_global: f64,
        per_user_lambdas: Option<&BTreeMap<UserId, f64>>,
        p_st: f64,
        bucket_len: i64,
    ) -> Result<Self> {
        let seconds = |lambda: f64| -> Result<f64> {
            Ok(DecayModel::with_lambda(lambda)?.stable_horizon(p_st)? * bucket_len as f64)
        };
        let average_rp = seconds(lambda_global)?;
        if !(average_rp > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "p_st = {p_st} yields a non-positive average period"
            )));
        }
        let recount = per_user_lambdas
            .into_iter()
            .flatten()
            .map(|(&u, &l)| Ok((u, seconds(l)?)))
            .collect::<Result<_>>()?;
        Ok(PeriodTable { average_rp, recount })
    }

    pub fn uniform(average_rp: f64) -> Self {
        PeriodTable {
            average_rp,
            recount: BTreeMap::new(),
        }
    }

    /// The user's personal period, or the average one during cold start.
    pub fn user_period(&self, user: UserId) -> f64 {
        self.recount.get(&user).copied().unwrap_or(self.average_rp)
    }

    /// Personal period of a pair: the shorter of its members' known periods.
    pub fn pair_period(&self, pair: UserPair) -> Option<f64> {
        [pair.a(), pair.b()]
            .iter()
            .filter_map(|u| self.recount.get(u).copied())
            .reduce(f64::min)
    }
}

/// Sets `average_rp` on every edge from the global rate and `recount_period`
/// from per-user rates where known (the faster-changing member wins for a pair).
pub fn assign_periods(
    store: &mut GraphStore,
    lambda_global: f64,
    per_user_lambdas: Option<&BTreeMap<UserId, f64>>,
    p_st: f64,
    bucket_len: i64,
) -> Result<PeriodTable> {
    let table = PeriodTable::new(lambda_global, per_user_lambdas, p_st, bucket_len)?;
    for edge in store.edges_mut() {
        edge.average_rp = table.average_rp;
        edge.recount_period = table.pair_period(edge.pair);
    }
    Ok(table)
}
