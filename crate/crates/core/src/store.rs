//! In-memory user/item graph with rating edges and user-user similarity edges.
//!
//! Users and items are vertices. Each rating is a directed `user -> item` edge
//! carrying the rating value and its timestamp; similarity edges connect two
//! users, ignore direction, and carry the recomputation metadata used by the
//! scheduler (`recount_period`, `average_rp`, `last_recount_time`).
//!
//! The store is single-writer: every mutation takes `&mut self`. A shared
//! `&GraphStore` is an immutable snapshot and may be handed to parallel workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// First timestamp present in MovieLens logs (1996-07-28).
pub const MOVIELENS_EPOCH: Timestamp = 838_512_000;

/// Marker written for an absent `recount_period`.
pub const ABSENT_MARKER: &str = "∅";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A half-star rating in `{0.5, 1.0, ..., 5.0}`, stored as a count of half stars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rating(u8);

impl Rating {
    pub const MIN: f64 = 0.5;
    pub const MAX: f64 = 5.0;

    pub fn new(value: f64) -> Result<Self> {
        let halves = value * 2.0;
        if !value.is_finite() || halves.fract() != 0.0 || !(1.0..=10.0).contains(&halves) {
            return Err(Error::Domain(format!(
                "rating {value} is not a half-star value in [0.5, 5.0]"
            )));
        }
        Ok(Rating(halves as u8))
    }

    pub fn from_half_stars(halves: u8) -> Result<Self> {
        if (1..=10).contains(&halves) {
            Ok(Rating(halves))
        } else {
            Err(Error::Domain(format!("{halves} half stars is out of range")))
        }
    }

    pub fn half_stars(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.value())
    }
}

impl FromStr for Rating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let value: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("rating {s:?} is not a number")))?;
        Rating::new(value)
    }
}

/// One timestamped `(user, item, rating)` action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingEvent {
    pub user: UserId,
    pub item: ItemId,
    pub rating: Rating,
    pub timestamp: Timestamp,
}

impl RatingEvent {
    pub fn new(user: u64, item: u64, rating: f64, timestamp: Timestamp) -> Result<Self> {
        if timestamp < 0 {
            return Err(Error::Domain(format!("negative timestamp {timestamp}")));
        }
        Ok(RatingEvent {
            user: UserId(user),
            item: ItemId(item),
            rating: Rating::new(rating)?,
            timestamp,
        })
    }
}

/// An unordered pair of distinct users, canonicalised so that `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserPair {
    a: UserId,
    b: UserId,
}

impl UserPair {
    pub fn new(x: UserId, y: UserId) -> Result<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Ok(UserPair { a: x, b: y }),
            std::cmp::Ordering::Greater => Ok(UserPair { a: y, b: x }),
            std::cmp::Ordering::Equal => Err(Error::InvalidArgument(format!(
                "a user pair needs two distinct users, got {x} twice"
            ))),
        }
    }

    pub fn a(&self) -> UserId {
        self.a
    }

    pub fn b(&self) -> UserId {
        self.b
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.a == user || self.b == user
    }

    /// The member that is not `user`, if `user` belongs to the pair.
    pub fn other(&self, user: UserId) -> Option<UserId> {
        if self.a == user {
            Some(self.b)
        } else if self.b == user {
            Some(self.a)
        } else {
            None
        }
    }
}

impl fmt::Display for UserPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

/// Similarity relationship between two users plus its recomputation metadata.
///
/// Durations are in seconds. `recount_period` is `None` while the pair is in
/// cold start and `average_rp` governs instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityEdge {
    pub pair: UserPair,
    pub coefficient: f64,
    pub recount_period: Option<f64>,
    pub average_rp: f64,
    pub last_recount_time: Timestamp,
}

impl SimilarityEdge {
    pub fn new(
        pair: UserPair,
        coefficient: f64,
        recount_period: Option<f64>,
        average_rp: f64,
        last_recount_time: Timestamp,
    ) -> Result<Self> {
        let edge = SimilarityEdge {
            pair,
            coefficient,
            recount_period,
            average_rp,
            last_recount_time,
        };
        edge.validate()?;
        Ok(edge)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.coefficient) {
            return Err(Error::Domain(format!(
                "coefficient {} of {} outside [-1, 1]",
                self.coefficient, self.pair
            )));
        }
        if self.average_rp.is_nan() || self.average_rp <= 0.0 {
            return Err(Error::Domain(format!(
                "average_rp {} of {} must be positive",
                self.average_rp, self.pair
            )));
        }
        if let Some(p) = self.recount_period {
            if p.is_nan() || p < 0.0 {
                return Err(Error::Domain(format!(
                    "recount_period {p} of {} must be non-negative",
                    self.pair
                )));
            }
        }
        Ok(())
    }
}

/// A rating as stored on a user's time-ordered list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatedEntry {
    pub item: ItemId,
    pub rating: Rating,
    pub timestamp: Timestamp,
}

impl RatedEntry {
    fn key(&self) -> (Timestamp, ItemId) {
        (self.timestamp, self.item)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphStore {
    users: BTreeSet<UserId>,
    items: BTreeSet<ItemId>,
    ratings: BTreeMap<UserId, Vec<RatedEntry>>,
    similarities: BTreeMap<UserPair, SimilarityEdge>,
    adjacency: BTreeMap<UserId, BTreeSet<UserId>>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events<I: IntoIterator<Item = RatingEvent>>(events: I) -> Self {
        let mut store = GraphStore::new();
        for ev in events {
            store.upsert_rating(ev);
        }
        store
    }

    /// Inserts a rating, creating the user and item vertices when needed.
    ///
    /// Re-ratings are appended, not replaced; [`ratings_asof`](Self::ratings_asof)
    /// resolves them with latest-wins semantics. Equal `(timestamp, item)` keys keep
    /// insertion order.
    pub fn upsert_rating(&mut self, ev: RatingEvent) {
        self.users.insert(ev.user);
        self.items.insert(ev.item);
        let entry = RatedEntry {
            item: ev.item,
            rating: ev.rating,
            timestamp: ev.timestamp,
        };
        let list = self.ratings.entry(ev.user).or_default();
        let at = list.partition_point(|e| e.key() <= entry.key());
        list.insert(at, entry);
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.iter().copied()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().copied()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_ratings(&self) -> usize {
        self.ratings.values().map(Vec::len).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.similarities.len()
    }

    pub fn contains_user(&self, user: UserId) -> bool {
        self.users.contains(&user)
    }

    /// The user's full rating history, ordered by `(timestamp, item)`.
    pub fn user_ratings(&self, user: UserId) -> Result<&[RatedEntry]> {
        self.ratings
            .get(&user)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("user {user}")))
    }

    /// Latest rating per item among the user's ratings with `timestamp <= t`.
    pub fn ratings_asof(&self, user: UserId, t: Timestamp) -> Result<BTreeMap<ItemId, Rating>> {
        let list = self.user_ratings(user)?;
        let end = list.partition_point(|e| e.timestamp <= t);
        Ok(list[..end].iter().map(|e| (e.item, e.rating)).collect())
    }

    /// Earliest and latest rating timestamps in the store.
    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let mut range: Option<(Timestamp, Timestamp)> = None;
        for list in self.ratings.values() {
            if let (Some(first), Some(last)) = (list.first(), list.last()) {
                range = Some(match range {
                    None => (first.timestamp, last.timestamp),
                    Some((lo, hi)) => (lo.min(first.timestamp), hi.max(last.timestamp)),
                });
            }
        }
        range
    }

    /// All rating events ordered by `(timestamp, user)`, preserving per-user order.
    pub fn events_chronological(&self) -> Vec<RatingEvent> {
        let mut events: Vec<RatingEvent> = self
            .ratings
            .iter()
            .flat_map(|(&user, list)| {
                list.iter().map(move |e| RatingEvent {
                    user,
                    item: e.item,
                    rating: e.rating,
                    timestamp: e.timestamp,
                })
            })
            .collect();
        events.sort_by_key(|e| (e.timestamp, e.user));
        events
    }

    pub fn get_edge(&self, pair: UserPair) -> Option<&SimilarityEdge> {
        self.similarities.get(&pair)
    }

    pub fn put_edge(&mut self, edge: SimilarityEdge) {
        let pair = edge.pair;
        self.adjacency.entry(pair.a()).or_default().insert(pair.b());
        self.adjacency.entry(pair.b()).or_default().insert(pair.a());
        self.similarities.insert(pair, edge);
    }

    pub fn remove_edge(&mut self, pair: UserPair) -> Option<SimilarityEdge> {
        let removed = self.similarities.remove(&pair);
        if removed.is_some() {
            for (u, v) in [(pair.a(), pair.b()), (pair.b(), pair.a())] {
                if let Some(set) = self.adjacency.get_mut(&u) {
                    set.remove(&v);
                    if set.is_empty() {
                        self.adjacency.remove(&u);
                    }
                }
            }
        }
        removed
    }

    pub fn edges(&self) -> impl Iterator<Item = &SimilarityEdge> + '_ {
        self.similarities.values()
    }

    pub fn edges_mut(&mut self) -> impl Iterator<Item = &mut SimilarityEdge> + '_ {
        self.similarities.values_mut()
    }

    /// Similarity edges incident to `user`, ordered by the other user's id.
    pub fn edges_of(&self, user: UserId) -> impl Iterator<Item = &SimilarityEdge> + '_ {
        self.adjacency
            .get(&user)
            .into_iter()
            .flatten()
            .filter_map(move |&v| {
                UserPair::new(user, v)
                    .ok()
                    .and_then(|p| self.similarities.get(&p))
            })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(&tmp, e))?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(out);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Writes the record file: ratings (users ascending, then time order),
    /// similarity edges (pair order), then an `E,<records>` trailer.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut records = 0usize;
        for (user, list) in &self.ratings {
            for e in list {
                writeln!(out, "R,{},{},{},{}", user, e.item, e.rating, e.timestamp)?;
                records += 1;
            }
        }
        for edge in self.similarities.values() {
            let period = match edge.recount_period {
                Some(p) => p.to_string(),
                None => ABSENT_MARKER.to_string(),
            };
            writeln!(
                out,
                "S,{},{},{},{},{},{}",
                edge.pair.a(),
                edge.pair.b(),
                edge.coefficient,
                period,
                edge.average_rp,
                edge.last_recount_time
            )?;
            records += 1;
        }
        writeln!(out, "E,{records}")
    }

    /// Parses a record file. Either the whole file is valid and a store is
    /// returned, or the first defect is reported with its line number.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut store = GraphStore::new();
        let mut records = 0usize;
        let mut trailer_seen = false;
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let perr = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            if trailer_seen {
                return Err(perr("content after end-of-file trailer".into()));
            }
            let fields: Vec<&str> = line.split(',').collect();
            match fields.first().copied() {
                Some("R") if fields.len() == 5 => {
                    let ev = RatingEvent {
                        user: UserId(parse_field(fields[1], "user", lineno)?),
                        item: ItemId(parse_field(fields[2], "item", lineno)?),
                        rating: fields[3].parse().map_err(|e: Error| perr(e.to_string()))?,
                        timestamp: parse_field(fields[4], "timestamp", lineno)?,
                    };
                    if ev.timestamp < 0 {
                        return Err(perr(format!("negative timestamp {}", ev.timestamp)));
                    }
                    store.upsert_rating(ev);
                    records += 1;
                }
                Some("S") if fields.len() == 7 => {
                    let a = UserId(parse_field(fields[1], "userA", lineno)?);
                    let b = UserId(parse_field(fields[2], "userB", lineno)?);
                    let pair = UserPair::new(a, b).map_err(|e| perr(e.to_string()))?;
                    let recount_period = match fields[4] {
                        "" | ABSENT_MARKER => None,
                        s => Some(parse_field(s, "recount_period", lineno)?),
                    };
                    let edge = SimilarityEdge::new(
                        pair,
                        parse_field(fields[3], "coefficient", lineno)?,
                        recount_period,
                        parse_field(fields[5], "average_rp", lineno)?,
                        parse_field(fields[6], "last_recount_time", lineno)?,
                    )
                    .map_err(|e| perr(e.to_string()))?;
                    store.put_edge(edge);
                    records += 1;
                }
                Some("E") if fields.len() == 2 => {
                    let expected: usize = parse_field(fields[1], "record count", lineno)?;
                    if expected != records {
                        return Err(perr(format!(
                            "trailer announces {expected} records but {records} were read"
                        )));
                    }
                    trailer_seen = true;
                }
                _ => return Err(perr(format!("malformed record {line:?}"))),
            }
        }
        if !trailer_seen {
            return Err(Error::Parse {
                line: records + 1,
                message: "missing end-of-file trailer (truncated file?)".into(),
            });
        }
        Ok(store)
    }
}

fn parse_field<T: FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {s:?}"),
    })
}
