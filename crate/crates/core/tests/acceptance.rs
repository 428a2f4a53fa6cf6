//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use recount::decay::{fit_exponential, fit_pareto, DecayModel};
use recount::engine::{detect_bot_rings, replay, BotConfig, Policy, ReplayConfig};
use recount::ingest::write_ratings_csv;
use recount::scheduler::{
    critical_time, group_lambdas, mean_service_time, optimize, recommendation_error, PeriodTable, ServiceParams,
};
use recount::similarity::{pearson_definitional, pearson_fast, PairVectors};
use recount::stability::{analyze, build_series, AnalysisConfig, StabilityAnalysis, TimeGrid};
use recount::store::{GraphStore, UserId, UserPair};

const SIMILARITY_TOL: f64 = 1e-12;
const SIMILARITY_BUDGET: Duration = Duration::from_secs(1);
const NOISELESS_TOL: f64 = 1e-9;
const NOISY_RELATIVE: f64 = 0.05;
const NOISY_MIN_SEEDS: usize = 95;
const BRUTE_FORCE_TOL: f64 = 1e-6;
const DECAY_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-9;
/// One unit in the last quoted digit of the worked example.
const WORKED_TOL: f64 = 1e-3;
const OPTIMIZE_BUDGET: Duration = Duration::from_secs(1);
const SERVICE_RELATIVE: f64 = 0.10;
const SERVICE_BUDGET: Duration = Duration::from_secs(30);
const DESK_BUDGET: Duration = Duration::from_secs(300);
const QUALITY_TOL: f64 = 0.05;
const RECOMPUTE_RATIO: f64 = 0.5;
const BOT_EPSILON: f64 = 0.01;
const BOT_MIN_DURATION: usize = 3;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

fn half_star_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(1..=10)).collect()
}

/// Exact integer Pearson on half-star units; only the final division is rounded.
fn pearson_oracle(x: &[i64], y: &[i64]) -> Option<f64> {
    let n = x.len() as i64;
    if n < 3 {
        return None;
    }
    let (sx, sy) = (x.iter().sum::<i64>(), y.iter().sum::<i64>());
    let sxx: i64 = x.iter().map(|a| a * a).sum();
    let syy: i64 = y.iter().map(|a| a * a).sum();
    let sxy: i64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let (d1, d2) = (n * sxx - sx * sx, n * syy - sy * sy);
    if d1 == 0 || d2 == 0 {
        return None;
    }
    Some((n * sxy - sx * sy) as f64 / ((d1 * d2) as f64).sqrt())
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut mismatched_presence = 0;
    let mut defined = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let (hx, hy) = (half_star_vec(&mut rng, n), half_star_vec(&mut rng, n));
        let to_f = |h: &[i64]| h.iter().map(|&v| v as f64 / 2.0).collect::<Vec<_>>();
        let pv = PairVectors::from_values(&to_f(&hx), &to_f(&hy)).unwrap();
        let def = pearson_definitional(&pv, 3);
        let fast = pearson_fast(&pv.accumulators(), 3);
        let oracle = pearson_oracle(&hx, &hy);
        match (def, fast, oracle) {
            (Some(a), Some(b), Some(o)) => {
                defined += 1;
                worst = worst.max((a - b).abs()).max((a - o).abs()).max((b - o).abs());
            }
            (None, None, None) => {}
            _ => mismatched_presence += 1,
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst <= SIMILARITY_TOL && mismatched_presence == 0 && elapsed < SIMILARITY_BUDGET,
        format!(
            "max |difference| {worst:.2e} over {defined} defined pairs, {mismatched_presence} presence mismatches, {elapsed:.2?}"
        ),
    )
}

/// Sum of squared `ln N` residuals minimised by nested ternary search over wide brackets.
fn brute_force_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let sse = |lambda: f64, ln_n0: f64| -> f64 {
        points
            .iter()
            .map(|&(t, n)| {
                let r = n.ln() - (ln_n0 - lambda * t);
                r * r
            })
            .sum()
    };
    let ternary = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) <= f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        (lo + hi) / 2.0
    };
    let best_intercept = |lambda: f64| ternary(-20.0, 40.0, &|a| sse(lambda, a));
    let lambda = ternary(-5.0, 5.0, &|l| sse(l, best_intercept(l)));
    (lambda, best_intercept(lambda))
}

fn criterion_2() -> Verdict {
    let mut worst_exact: f64 = 0.0;
    for &(n0, lambda) in &[(100.0, 0.1), (366.72, 0.046), (80.0, 0.17), (5.0e4, 1.3), (2.0, 0.001)] {
        let pts: Vec<(f64, f64)> = (0..=20).map(|t| (t as f64, n0 * (-lambda * t as f64).exp())).collect();
        let m = fit_exponential(&pts).unwrap();
        worst_exact = worst_exact
            .max((m.lambda - lambda).abs())
            .max((m.n0 - n0).abs() / n0);
    }
    let (n0, lambda) = (366.72, 0.046);
    let mut within = 0;
    let mut worst_brute: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = Normal::new(0.0f64, 0.05).unwrap();
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|t| {
                let t = t as f64;
                (t, n0 * (-lambda * t).exp() * noise.sample(&mut rng).exp())
            })
            .collect();
        let m = fit_exponential(&pts).unwrap();
        if ((m.lambda - lambda) / lambda).abs() <= NOISY_RELATIVE {
            within += 1;
        }
        if seed < 10 {
            let (bl, ba) = brute_force_fit(&pts);
            worst_brute = worst_brute.max((bl - m.lambda).abs()).max((ba - m.n0.ln()).abs());
        }
    }
    Verdict::new(
        worst_exact <= NOISELESS_TOL && within >= NOISY_MIN_SEEDS && worst_brute <= BRUTE_FORCE_TOL,
        format!(
            "noiseless error {worst_exact:.2e}, noisy seeds within 5%: {within}/100, OLS vs brute force {worst_brute:.2e}"
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.gen_range(-4.0..=1.0));
        let m = DecayModel::with_lambda(lambda).unwrap();
        let t = rng.gen_range(0.0..5.0) / lambda;
        let p = rng.gen_range(1e-6..=1.0);
        let q = rng.gen_range(0.0..1.0 - 1e-6);
        let errors = [
            m.p_change(m.half_life()) - 0.5,
            m.q_stable(m.mean_lifetime()) - (-1.0f64).exp(),
            m.p_change(t) + m.q_stable(t) - 1.0,
            m.q_stable(m.stable_horizon(p).unwrap()) - p,
            m.p_change(m.change_horizon(q).unwrap()) - q,
        ];
        worst = errors.iter().fold(worst, |w, e| w.max(e.abs()));
    }
    Verdict::new(worst <= DECAY_TOL, format!("max identity error {worst:.2e} over 1000 random rates"))
}

fn bisect_critical(lambda: f64, p_b: f64, n_cr: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while recommendation_error(lambda, p_b, hi) < n_cr {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if recommendation_error(lambda, p_b, mid) <= n_cr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_round_trip: f64 = 0.0;
    let mut scan_violations = 0;
    for _ in 0..100 {
        let t_fr = rng.gen_range(0.5..10.0);
        let t_ir = t_fr * rng.gen_range(0.01..0.99);
        let p_b = rng.gen_range(0.0..0.5);
        let n_cr = rng.gen_range(p_b + 1e-3..0.99);
        let tau = rng.gen_range(0.1..10.0);
        let lambda = 10f64.powf(rng.gen_range(-3.0..0.0));
        let params = ServiceParams::new(t_fr, t_ir, p_b, n_cr, tau).unwrap();
        let sol = optimize(&params, lambda).unwrap();
        worst_round_trip = worst_round_trip.max((recommendation_error(lambda, p_b, sol.t_cr) - n_cr).abs());
        for i in 0..=1000 {
            let t = sol.t_cr * i as f64 / 1000.0;
            if mean_service_time(&params, t) < sol.mean_service_time - 1e-12 {
                scan_violations += 1;
            }
        }
        if recommendation_error(lambda, p_b, sol.t_cr * (1.0 + 1e-6)) <= n_cr {
            scan_violations += 1;
        }
    }
    let worked = ServiceParams::new(1.0, 0.1, 0.1, 0.2, 1.0).unwrap();
    let sol = optimize(&worked, 0.046).unwrap();
    let root = bisect_critical(0.046, 0.1, 0.2);
    let direct = critical_time(0.046, 0.1, 0.2).unwrap();
    let worked_ok = (sol.t_cr - 2.560).abs() <= WORKED_TOL
        && (sol.load_coefficient - 0.353).abs() <= WORKED_TOL
        && (root - direct).abs() <= ROUND_TRIP_TOL;
    let elapsed = start.elapsed();
    Verdict::new(
        worst_round_trip <= ROUND_TRIP_TOL && scan_violations == 0 && worked_ok && elapsed < OPTIMIZE_BUDGET,
        format!(
            "round trip {worst_round_trip:.2e}, scan violations {scan_violations}, worked t_cr {:.6} (bisection {root:.6}) K_lc {:.6}, {elapsed:.2?}",
            sol.t_cr, sol.load_coefficient
        ),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let bucket_len = 1000;
    let lambda = 0.05;
    let p_b = 0.1;
    // budget chosen so that t_cr = 10 visits
    let n_cr = recommendation_error(lambda, p_b, 10.0);
    let params = ServiceParams::new(1.0, 0.1, p_b, n_cr, 1.0).unwrap();
    let sol = optimize(&params, lambda).unwrap();
    let formula = (1.0 + 10.0 * 0.1) / 11.0;
    let table = PeriodTable::new(lambda, None, params.stability_level(), bucket_len).unwrap();
    let events = common::stationary_log(50, 100, bucket_len as f64, 400, 5);
    let grid = TimeGrid::covering(0, events.last().unwrap().timestamp, bucket_len).unwrap();
    let out = replay(&events, &grid, &Policy::Adaptive(table), &ReplayConfig::new(params)).unwrap();
    let measured = out.metrics.simulated_mean_service_time;
    let relative = (measured - sol.mean_service_time).abs() / sol.mean_service_time;
    let elapsed = start.elapsed();
    Verdict::new(
        (sol.t_cr - 10.0).abs() < 1e-9
            && (sol.mean_service_time - formula).abs() < 1e-12
            && sol.mean_service_time <= 0.5
            && relative <= SERVICE_RELATIVE
            && elapsed < SERVICE_BUDGET,
        format!(
            "model T = {:.4} T_fr, replay T = {measured:.4} T_fr on {} events (relative gap {:.1}%), {elapsed:.2?}",
            sol.mean_service_time,
            events.len(),
            relative * 100.0
        ),
    )
}

fn non_increasing(values: &[u64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

fn criterion_6(store: &GraphStore) -> (Verdict, Option<(StabilityAnalysis, f64)>) {
    let start = Instant::now();
    let analysis = match analyze(store, &AnalysisConfig::default()) {
        Ok(a) => a,
        Err(e) => return (Verdict::new(false, format!("analysis failed: {e}")), None),
    };
    let smoothed: Vec<(f64, f64)> = analysis.smoothed.iter().map(|&(n, v)| (n as f64, v)).collect();
    let quarter = (smoothed.len() / 4).max(1);
    let head: f64 = smoothed[..quarter].iter().map(|p| p.1).sum::<f64>() / quarter as f64;
    let tail: f64 = smoothed[smoothed.len() - quarter..].iter().map(|p| p.1).sum::<f64>() / quarter as f64;
    let exp = fit_exponential(&smoothed);
    let par = fit_pareto(&smoothed);
    let survival = fit_exponential(&analysis.survival.points());
    let elapsed = start.elapsed();
    let (Ok(exp), Ok(par), Ok(surv)) = (exp, par, survival) else {
        return (Verdict::new(false, "a fit did not converge"), None);
    };
    let pass = head > tail
        && exp.lambda > 0.0
        && non_increasing(&analysis.survival.values)
        && surv.lambda > 0.0
        && elapsed < DESK_BUDGET;
    let detail = format!(
        "{} intervals from {} pairs; histogram head {head:.1} > tail {tail:.2}; residual_std exponential {:.3} vs pareto {:.3}; survival lambda {:.4} (tau {:.1} buckets); {elapsed:.2?}",
        analysis.histogram.total(),
        analysis.series.len(),
        exp.residual_std,
        par.residual_std,
        surv.lambda,
        surv.mean_lifetime()
    );
    let lambda = surv.lambda;
    (Verdict::new(pass, detail), Some((analysis, lambda)))
}

fn criterion_7(store: &GraphStore, events: &[recount::store::RatingEvent], analysis: &StabilityAnalysis, lambda: f64) -> Verdict {
    let start = Instant::now();
    let params = ServiceParams::new(1.0, 0.1, 0.1, 0.2, 1.0).unwrap();
    let per_user = group_lambdas(store, analysis.pair_intervals(), 3, 5);
    let table = PeriodTable::new(lambda, Some(&per_user), params.stability_level(), analysis.grid.bucket_len()).unwrap();
    let cfg = ReplayConfig::new(params);
    let always = replay(events, &analysis.grid, &Policy::Always, &cfg).unwrap().metrics;
    let adaptive = replay(events, &analysis.grid, &Policy::Adaptive(table), &cfg).unwrap().metrics;
    let (Some(pa), Some(ra), Some(pd), Some(rd)) = (
        always.precision_at_n,
        always.recall_at_n,
        adaptive.precision_at_n,
        adaptive.recall_at_n,
    ) else {
        return Verdict::new(false, "precision/recall undefined: no evaluable users");
    };
    let elapsed = start.elapsed();
    let ratio = adaptive.recompute_count as f64 / always.recompute_count as f64;
    Verdict::new(
        (pa - pd).abs() <= QUALITY_TOL && (ra - rd).abs() <= QUALITY_TOL && ratio <= RECOMPUTE_RATIO && elapsed < DESK_BUDGET,
        format!(
            "precision@10 {pa:.4} vs {pd:.4}, recall@10 {ra:.4} vs {rd:.4} over {} evaluations; recomputes {} vs {} ({:.1}%); service time {:.3} vs {:.3}; {elapsed:.2?}",
            always.evaluations,
            always.recompute_count,
            adaptive.recompute_count,
            ratio * 100.0,
            always.simulated_mean_service_time,
            adaptive.simulated_mean_service_time
        ),
    )
}

fn criterion_8() -> Verdict {
    let bucket_len = 1000;
    let organic = common::organic_fixture(40, 20, bucket_len, 7, 8);
    let members = [9001u64, 9002, 9003, 9004];
    let mut infected = organic.clone();
    infected.extend(common::bot_ring(&members, 12, bucket_len, 4, 88));
    let cfg = BotConfig {
        epsilon: BOT_EPSILON,
        min_duration: BOT_MIN_DURATION,
        ..BotConfig::default()
    };
    let clean_store = common::store_of(&organic);
    let clean = detect_bot_rings(&clean_store, &TimeGrid::for_store(&clean_store, bucket_len).unwrap(), &cfg).unwrap();
    let store = common::store_of(&infected);
    let grid = TimeGrid::for_store(&store, bucket_len).unwrap();
    let rings = detect_bot_rings(&store, &grid, &cfg).unwrap();
    let expected: BTreeSet<UserId> = members.iter().map(|&m| UserId(m)).collect();
    let exact = rings.len() == 1 && rings[0].members == expected;
    // every reported pair must show the claimed run in its own series
    let sound = rings.iter().all(|ring| {
        let ids: Vec<UserId> = ring.members.iter().copied().collect();
        ids.iter().enumerate().all(|(i, &a)| {
            ids[i + 1..].iter().all(|&b| {
                let s = build_series(&store, UserPair::new(a, b).unwrap(), &grid, cfg.min_overlap).unwrap();
                s.active_values()
                    .split(|v| !v.is_some_and(|k| (1.0 - BOT_EPSILON..=1.0).contains(&k)))
                    .any(|run| run.len() >= ring.stable_duration)
            })
        })
    });
    Verdict::new(
        exact && sound && clean.is_empty(),
        format!(
            "infected fixture: {} ring(s) {:?}; organic fixture: {} ring(s)",
            rings.len(),
            rings.iter().map(|r| r.members.iter().map(|u| u.0).collect::<Vec<_>>()).collect::<Vec<_>>(),
            clean.len()
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let ratings = work.path().join("ratings.csv");
    let mut events = common::organic_fixture(12, 10, 1000, 6, 9);
    events.extend(common::bot_ring(&[501, 502, 503], 8, 1000, 4, 99));
    events.sort_by_key(|e| (e.timestamp, e.user, e.item));
    let mut buf = Vec::new();
    write_ratings_csv(&mut buf, &events).unwrap();
    fs::write(&ratings, buf).unwrap();
    let ratings_arg = ratings.to_string_lossy().into_owned();
    let commands: Vec<Vec<&str>> = vec![
        vec!["ingest", &ratings_arg],
        vec!["stability", "--bucket-len", "1000", "--min-active-buckets", "3"],
        vec!["fit"],
        vec!["schedule", "--bucket-len", "1000", "--min-active-buckets", "3"],
        vec!["simulate", "--bucket-len", "1000", "--min-active-buckets", "3", "--checkpoint-every", "2"],
        vec!["detect-bots", "--bucket-len", "1000"],
    ];
    let run_all = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let _ = fs::remove_dir_all(&out);
        let mut outputs = Vec::new();
        for args in &commands {
            let o = Command::new(env!("CARGO_BIN_EXE_recount"))
                .args(args)
                .env("RECOUNT_OUT_DIR", &out)
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
            }
            outputs.push((args[0].to_string(), o.stdout));
            outputs.extend(snapshot(&out).into_iter().map(|(n, b)| (format!("{}:{n}", args[0]), b)));
        }
        Ok(outputs)
    };
    let (first, second) = match (run_all(), run_all()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Verdict::new(false, e),
    };
    let differing: Vec<&String> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| &a.0)
        .collect();
    let identical = first.len() == second.len() && differing.is_empty();

    let store_path = out.join("store.rcs");
    let loaded = GraphStore::load(&store_path).unwrap();
    let copy = work.path().join("copy.rcs");
    loaded.save(&copy).unwrap();
    let reloaded = GraphStore::load(&copy).unwrap();
    let (lo, hi) = loaded.time_range().unwrap();
    let observational = loaded == reloaded
        && fs::read(&store_path).unwrap() == fs::read(&copy).unwrap()
        && loaded.num_edges() > 0
        && loaded.users().all(|u| {
            [lo, (lo + hi) / 2, hi]
                .iter()
                .all(|&t| loaded.ratings_asof(u, t).unwrap() == reloaded.ratings_asof(u, t).unwrap())
        })
        && loaded.edges().all(|e| reloaded.get_edge(e.pair) == Some(e));
    Verdict::new(
        identical && observational,
        format!(
            "{} artifacts compared across reruns, differing: {differing:?}; store round trip with {} ratings and {} edges {}",
            first.len(),
            loaded.num_ratings(),
            loaded.num_edges(),
            if observational { "identical" } else { "differs" }
        ),
    )
}

fn main() {
    let mut verdicts: Vec<(u32, &str, Verdict)> = vec![
        (1, "similarity equivalence", criterion_1()),
        (2, "regression exactness", criterion_2()),
        (3, "decay identities", criterion_3()),
        (4, "optimization correctness", criterion_4()),
        (5, "service-time halving", criterion_5()),
    ];
    let (events, real) = common::desk_dataset();
    eprintln!(
        "desk dataset: {} ({} ratings)",
        if real { "RECOUNT_MOVIELENS file" } else { "synthetic MovieLens-like log" },
        events.len()
    );
    let store = common::store_of(&events);
    let (v6, analysis) = criterion_6(&store);
    verdicts.push((6, "qualitative experiment reproduction", v6));
    let v7 = match &analysis {
        Some((a, lambda)) => criterion_7(&store, &events, a, *lambda),
        None => Verdict::new(false, "no stability analysis to schedule from"),
    };
    verdicts.push((7, "precision/recall stability", v7));
    verdicts.push((8, "bot-ring detection", criterion_8()));
    verdicts.push((9, "determinism and persistence", criterion_9()));

    let mut failed = 0;
    for (id, name, v) in &verdicts {
        println!("{} criterion {id} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
