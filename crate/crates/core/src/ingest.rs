//! MovieLens-style rating log parsing (`userId,movieId,rating,timestamp`).

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::store::{ItemId, Rating, RatingEvent, Timestamp, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Any malformed line aborts parsing with its line number.
    Strict,
    /// Malformed lines are counted as rejected and skipped.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub first_timestamp: Option<Timestamp>,
    pub last_timestamp: Option<Timestamp>,
}

impl IngestReport {
    fn record(&mut self, ts: Timestamp) {
        self.accepted += 1;
        self.first_timestamp = Some(self.first_timestamp.map_or(ts, |f| f.min(ts)));
        self.last_timestamp = Some(self.last_timestamp.map_or(ts, |l| l.max(ts)));
    }
}

/// Streaming parser over a rating log.
///
/// The first non-blank line is treated as a header when its first field is not
/// numeric. Blank lines are ignored and do not count as data lines.
pub struct RatingReader<R> {
    lines: std::io::Lines<R>,
    mode: ParseMode,
    lineno: usize,
    seen_first: bool,
    report: IngestReport,
    failed: bool,
}

impl<R: BufRead> RatingReader<R> {
    pub fn new(input: R, mode: ParseMode) -> Self {
        RatingReader {
            lines: input.lines(),
            mode,
            lineno: 0,
            seen_first: false,
            report: IngestReport::default(),
            failed: false,
        }
    }

    pub fn report(&self) -> IngestReport {
        self.report
    }
}

impl<R: BufRead> Iterator for RatingReader<R> {
    type Item = Result<RatingEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::Parse {
                        line: self.lineno + 1,
                        message: e.to_string(),
                    }));
                }
            };
            self.lineno += 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !self.seen_first {
                self.seen_first = true;
                if is_header(line) {
                    continue;
                }
            }
            match parse_line(line) {
                Ok(ev) => {
                    self.report.record(ev.timestamp);
                    return Some(Ok(ev));
                }
                Err(message) => match self.mode {
                    ParseMode::Lenient => self.report.rejected += 1,
                    ParseMode::Strict => {
                        self.failed = true;
                        return Some(Err(match message {
                            LineError::Domain(m) => Error::Domain(format!("line {}: {m}", self.lineno)),
                            LineError::Syntax(m) => Error::Parse {
                                line: self.lineno,
                                message: m,
                            },
                        }));
                    }
                },
            }
        }
    }
}

/// Parses a whole log into memory.
pub fn parse_ratings<R: BufRead>(input: R, mode: ParseMode) -> Result<(Vec<RatingEvent>, IngestReport)> {
    let mut reader = RatingReader::new(input, mode);
    let events = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((events, reader.report()))
}

/// Writes events back in the MovieLens layout, header included.
pub fn write_ratings_csv<W: Write>(out: &mut W, events: &[RatingEvent]) -> std::io::Result<()> {
    writeln!(out, "userId,movieId,rating,timestamp")?;
    for ev in events {
        writeln!(out, "{},{},{},{}", ev.user, ev.item, ev.rating, ev.timestamp)?;
    }
    Ok(())
}

enum LineError {
    Domain(String),
    Syntax(String),
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains("::") {
        line.split("::").collect()
    } else if line.contains('\t') {
        line.split('\t').collect()
    } else {
        line.split(',').collect()
    }
}

fn is_header(line: &str) -> bool {
    split_fields(line)
        .first()
        .is_some_and(|f| f.trim().parse::<u64>().is_err())
}

fn parse_line(line: &str) -> std::result::Result<RatingEvent, LineError> {
    let fields = split_fields(line);
    if fields.len() != 4 {
        return Err(LineError::Syntax(format!("expected 4 fields, found {}", fields.len())));
    }
    let num = |s: &str, what: &str| -> std::result::Result<u64, LineError> {
        s.trim()
            .parse::<u64>()
            .map_err(|_| LineError::Syntax(format!("invalid {what} {s:?}")))
    };
    let user = num(fields[0], "userId")?;
    let item = num(fields[1], "movieId")?;
    let value: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| LineError::Syntax(format!("invalid rating {:?}", fields[2])))?;
    let rating = Rating::new(value).map_err(|e| LineError::Domain(e.to_string()))?;
    let timestamp: Timestamp = fields[3]
        .trim()
        .parse()
        .map_err(|_| LineError::Syntax(format!("invalid timestamp {:?}", fields[3])))?;
    if timestamp < 0 {
        return Err(LineError::Domain(format!("negative timestamp {timestamp}")));
    }
    Ok(RatingEvent {
        user: UserId(user),
        item: ItemId(item),
        rating,
        timestamp,
    })
}
