//! Synthetic rating logs shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Normal};

use recount::ingest::{parse_ratings, ParseMode};
use recount::store::{GraphStore, RatingEvent, Timestamp};

/// 1996-03-29, the first day of the MovieLens logs.
pub const ML_START: Timestamp = 828_057_600;
/// 2018-09-24.
pub const ML_END: Timestamp = 1_537_799_250;

#[derive(Debug, Clone)]
pub struct LogSpec {
    pub users: usize,
    pub items: usize,
    /// Median ratings per user before the floor of 20 is added.
    pub median_ratings: f64,
    pub start: Timestamp,
    pub end: Timestamp,
    /// Share of users who rate in a single day.
    pub one_day_share: f64,
    /// Scale of taste drift across a user's window.
    pub drift: f64,
    pub dims: usize,
    pub seed: u64,
}

impl LogSpec {
    /// About 610 users and 100k ratings over 22 years.
    pub fn movielens_small() -> Self {
        LogSpec {
            users: 610,
            items: 9_000,
            median_ratings: 75.0,
            start: ML_START,
            end: ML_END,
            one_day_share: 0.3,
            drift: 1.0,
            dims: 6,
            seed: 20_180_924,
        }
    }
}

fn half_star(x: f64) -> f64 {
    ((x * 2.0).round() / 2.0).clamp(0.5, 5.0)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dims: usize, sd: f64) -> Vec<f64> {
    let n = Normal::new(0.0, sd).unwrap();
    (0..dims).map(|_| n.sample(rng)).collect()
}

/// Latent-factor ratings with Zipf item popularity, per-user activity windows,
/// session bursts and linear taste drift. Sorted by time.
pub fn movielens_like(spec: &LogSpec) -> Vec<RatingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let item_sd = 1.0 / (spec.dims as f64).sqrt();
    let items: Vec<(Vec<f64>, f64)> = (0..spec.items)
        .map(|_| {
            let q = gaussian_vec(&mut rng, spec.dims, item_sd);
            let b = Normal::new(0.0, 0.45).unwrap().sample(&mut rng);
            (q, b)
        })
        .collect();
    let popularity = WeightedIndex::new((0..spec.items).map(|r| 1.0 / (r as f64 + 10.0).powf(0.9))).unwrap();
    let counts = LogNormal::new(spec.median_ratings.ln(), 1.1).unwrap();
    let noise = Normal::new(0.0, 0.55).unwrap();
    let day = 86_400;
    let mut events = Vec::new();
    for u in 0..spec.users {
        let user = u as u64 + 1;
        let n = (20 + counts.sample(&mut rng) as usize).min(spec.items / 3);
        let first = rng.gen_range(spec.start..spec.end - day);
        let span = if rng.gen_bool(spec.one_day_share) {
            day
        } else {
            let hi = ((spec.end - first) as f64).max(day as f64 * 2.0);
            (day as f64 * (hi / day as f64).powf(rng.gen::<f64>())) as i64
        };
        let sessions = 1 + n / 25;
        let mut starts: Vec<Timestamp> = (0..sessions).map(|_| first + rng.gen_range(0..span.max(1))).collect();
        starts.sort_unstable();
        let p0 = gaussian_vec(&mut rng, spec.dims, 0.8);
        let delta = gaussian_vec(&mut rng, spec.dims, 0.8);
        let bias = Normal::new(0.0, 0.4).unwrap().sample(&mut rng);
        let mut seen = HashSet::new();
        let mut clock: Vec<Timestamp> = starts.clone();
        for _ in 0..n {
            let item = loop {
                let i = popularity.sample(&mut rng);
                if seen.insert(i) {
                    break i;
                }
            };
            let s = rng.gen_range(0..sessions);
            clock[s] += rng.gen_range(5..180);
            let t = clock[s].min(spec.end);
            let frac = (t - first) as f64 / span.max(1) as f64;
            let (q, b) = &items[item];
            let affinity: f64 = (0..spec.dims)
                .map(|d| (p0[d] + spec.drift * frac * delta[d]) * q[d])
                .sum();
            let r = half_star(3.5 + bias + b + affinity + noise.sample(&mut rng));
            events.push(RatingEvent::new(user, item as u64 + 1, r, t).unwrap());
        }
    }
    events.sort_by_key(|e| (e.timestamp, e.user, e.item));
    events
}

/// The real dataset when `RECOUNT_MOVIELENS` names a ratings file, else the
/// synthetic stand-in. The flag says which one was used.
pub fn desk_dataset() -> (Vec<RatingEvent>, bool) {
    if let Ok(path) = std::env::var("RECOUNT_MOVIELENS") {
        if Path::new(&path).is_file() {
            let file = std::fs::File::open(&path).unwrap();
            let (mut events, _) = parse_ratings(std::io::BufReader::new(file), ParseMode::Lenient).unwrap();
            events.sort_by_key(|e| (e.timestamp, e.user, e.item));
            return (events, true);
        }
    }
    (movielens_like(&LogSpec::movielens_small()), false)
}

/// Visits arrive per user as a Poisson process with mean gap `tau_seconds`;
/// every visit rates a fresh random item. Sorted by time.
pub fn stationary_log(users: u64, visits_per_user: usize, tau_seconds: f64, items: u64, seed: u64) -> Vec<RatingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(1.0 / tau_seconds).unwrap();
    let mut events = Vec::new();
    for user in 1..=users {
        let mut t = 0.0;
        for _ in 0..visits_per_user {
            t += gap.sample(&mut rng);
            let item = rng.gen_range(1..=items);
            let r = rng.gen_range(1..=10) as f64 / 2.0;
            events.push(RatingEvent::new(user, item, r, t as Timestamp).unwrap());
        }
    }
    events.sort_by_key(|e| (e.timestamp, e.user, e.item));
    events
}

/// Users with diverse tastes who each rate `per_bucket` items in every one of
/// `buckets` buckets, drawn from a shared pool so overlaps grow quickly.
pub fn organic_fixture(users: u64, buckets: i64, bucket_len: i64, per_bucket: usize, seed: u64) -> Vec<RatingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = 4;
    let pool = 150usize;
    let items: Vec<Vec<f64>> = (0..pool).map(|_| gaussian_vec(&mut rng, dims, 0.6)).collect();
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut events = Vec::new();
    for user in 1..=users {
        let p = gaussian_vec(&mut rng, dims, 1.0);
        let mut order: Vec<usize> = (0..pool).collect();
        order.shuffle(&mut rng);
        let mut next = order.into_iter();
        for b in 0..buckets {
            for j in 0..per_bucket {
                let Some(i) = next.next() else { break };
                let affinity: f64 = p.iter().zip(&items[i]).map(|(a, c)| a * c).sum();
                let r = half_star(3.0 + affinity + noise.sample(&mut rng));
                let t = b * bucket_len + rng.gen_range(0..bucket_len / 2) + j as i64;
                events.push(RatingEvent::new(user, i as u64 + 1, r, t).unwrap());
            }
        }
    }
    events.sort_by_key(|e| (e.timestamp, e.user, e.item));
    events
}

/// Accounts `members` rate the same items identically, `per_bucket` items in
/// each of `buckets` buckets, a few seconds apart.
pub fn bot_ring(members: &[u64], buckets: i64, bucket_len: i64, per_bucket: u64, seed: u64) -> Vec<RatingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for b in 0..buckets {
        for j in 0..per_bucket {
            let item = (b as u64 * per_bucket + j) % 150 + 1;
            let r = rng.gen_range(1..=10) as f64 / 2.0;
            let t = b * bucket_len + bucket_len / 2 + 10 * j as i64;
            for (k, &m) in members.iter().enumerate() {
                events.push(RatingEvent::new(m, item, r, t + k as i64).unwrap());
            }
        }
    }
    events
}

pub fn store_of(events: &[RatingEvent]) -> GraphStore {
    GraphStore::from_events(events.iter().copied())
}
