//! Plain-text artifacts: CSV tables for plotting and the fit input reader.

use std::io::{self, Read, Write};

use crate::decay::fmt_sig;
use crate::engine::BotRing;
use crate::error::{Error, Result};
use crate::stability::{IntervalHistogram, StabilityAnalysis, SurvivalCurve};

/// One row per analysed pair, one column per grid bucket (`k@<bucket end>`).
/// Cells outside the pair's joint activity or without a defined coefficient
/// are empty.
pub fn write_table1<W: Write>(out: &mut W, analysis: &StabilityAnalysis) -> io::Result<()> {
    let grid = &analysis.grid;
    write!(out, "userId1,userId2")?;
    for b in 0..grid.bucket_count() {
        write!(out, ",k@{}", grid.bucket_end(b))?;
    }
    writeln!(out)?;
    let mut line = String::new();
    for s in &analysis.series {
        line.clear();
        line.push_str(&format!("{},{}", s.pair().a(), s.pair().b()));
        for b in 0..grid.bucket_count() {
            line.push(',');
            if let Some(k) = s.value(b) {
                line.push_str(&fmt_sig(k));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// `n,count,p` with `p = count / total`.
pub fn histogram_csv(hist: &IntervalHistogram) -> String {
    let total = hist.total();
    let mut out = String::from("n,count,p\n");
    for (&n, &c) in &hist.counts {
        out.push_str(&format!("{n},{c},{}\n", fmt_sig(c as f64 / total as f64)));
    }
    out
}

pub fn smoothed_csv(points: &[(u32, f64)]) -> String {
    let mut out = String::from("n,smoothed\n");
    for &(n, v) in points {
        out.push_str(&format!("{n},{}\n", fmt_sig(v)));
    }
    out
}

pub fn survival_csv(curve: &SurvivalCurve) -> String {
    let mut out = String::from("t,k\n");
    for (t, k) in curve.values.iter().enumerate() {
        out.push_str(&format!("{t},{k}\n"));
    }
    out
}

/// `ring,members,min_pairwise_k,stable_duration`, members joined by `;`.
pub fn rings_csv(rings: &[BotRing]) -> String {
    let mut out = String::from("ring,members,min_pairwise_k,stable_duration\n");
    for (i, r) in rings.iter().enumerate() {
        let members: Vec<String> = r.members.iter().map(|u| u.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            members.join(";"),
            fmt_sig(r.min_pairwise_k),
            r.stable_duration
        ));
    }
    out
}

/// Reads `(t, N)` from the first two columns of a headered CSV.
pub fn read_points<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |j: usize| -> Result<f64> {
            let raw = record.get(j).ok_or_else(|| Error::Parse {
                line,
                message: "expected at least two columns".into(),
            })?;
            raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {raw:?}"),
            })
        };
        points.push((field(0)?, field(1)?));
    }
    Ok(points)
}
