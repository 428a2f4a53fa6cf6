mod common;

use recount::decay::fit_exponential;
use recount::engine::{replay, Policy, ReplayConfig};
use recount::scheduler::{assign_periods, needs_recompute, optimize, PeriodTable, ServiceParams};
use recount::similarity::all_pairs;
use recount::stability::{analyze, AnalysisConfig, TimeGrid};
use recount::store::SimilarityEdge;

const BUCKET: i64 = 1000;

fn params() -> ServiceParams {
    ServiceParams::new(1.0, 0.1, 0.1, 0.2, 1.0).unwrap()
}

fn fixture() -> (Vec<recount::store::RatingEvent>, TimeGrid) {
    let events = common::organic_fixture(24, 20, BUCKET, 6, 5);
    let store = common::store_of(&events);
    let grid = TimeGrid::for_store(&store, BUCKET).unwrap();
    (events, grid)
}

#[test]
fn adaptive_saves_work_on_steady_tastes() {
    let (events, grid) = fixture();
    let mut cfg = ReplayConfig::new(params());
    cfg.checkpoint_every = 4;
    let always = replay(&events, &grid, &Policy::Always, &cfg).unwrap();
    let adaptive = replay(&events, &grid, &Policy::Adaptive(PeriodTable::uniform(3.0 * BUCKET as f64)), &cfg).unwrap();
    let (a, b) = (always.metrics, adaptive.metrics);
    assert!(b.recompute_count < a.recompute_count / 2, "{} vs {}", b.recompute_count, a.recompute_count);
    assert!(b.simulated_mean_service_time < a.simulated_mean_service_time);
    let (pa, pb) = (a.precision_at_n.unwrap(), b.precision_at_n.unwrap());
    assert!((pa - pb).abs() <= 0.05, "precision {pa} vs {pb}");
}

#[test]
fn service_time_is_the_weighted_mix() {
    let (events, grid) = fixture();
    let cfg = ReplayConfig::new(params());
    for policy in [Policy::Always, Policy::Periodic(2500.0), Policy::Adaptive(PeriodTable::uniform(7000.0))] {
        let m = replay(&events, &grid, &policy, &cfg).unwrap().metrics;
        assert_eq!(m.served_requests, events.len() as u64);
        assert_eq!(m.recompute_count + m.cached_requests, m.served_requests);
        let expected = (m.recompute_count as f64 * 1.0 + m.cached_requests as f64 * 0.1) / m.served_requests as f64;
        assert!((m.simulated_mean_service_time - expected).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&m.n_fr_fraction) && (0.0..=1.0).contains(&m.n_ir_fraction));
    }
}

#[test]
fn replay_is_deterministic() {
    let (events, grid) = fixture();
    let cfg = ReplayConfig::new(params());
    let policy = Policy::Periodic(1500.0);
    let first = replay(&events, &grid, &policy, &cfg).unwrap();
    let second = replay(&events, &grid, &policy, &cfg).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.csv(), second.csv());
}

#[test]
fn analysis_feeds_the_schedule() {
    let (events, _) = fixture();
    let mut store = common::store_of(&events);
    let analysis = analyze(
        &store,
        &AnalysisConfig {
            bucket_len: BUCKET,
            min_active_buckets: 5,
            ..AnalysisConfig::default()
        },
    )
    .unwrap();
    assert!(analysis.histogram.total() > 0);
    let fit = fit_exponential(&analysis.survival.points()).unwrap();
    assert!(fit.lambda > 0.0);
    let p = params();
    let sol = optimize(&p, fit.lambda).unwrap();
    assert!(sol.t_cr > 0.0 && sol.mean_service_time < p.t_fr);

    let (_, last) = store.time_range().unwrap();
    for (pair, k) in all_pairs(&store, last, 3) {
        store.put_edge(SimilarityEdge::new(pair, k, None, 1.0, last).unwrap());
    }
    let table = assign_periods(&mut store, fit.lambda, None, p.stability_level(), BUCKET).unwrap();
    let expected = fit.stable_horizon(p.stability_level()).unwrap() * BUCKET as f64;
    assert!((table.average_rp - expected).abs() < 1e-9 * expected);
    // with p_st tied to the error budget the period equals the critical time
    assert!((table.average_rp - sol.t_cr * BUCKET as f64).abs() < 1e-6 * table.average_rp);
    let edge = *store.edges().next().unwrap();
    let due = last + table.average_rp.ceil() as i64;
    assert!(!needs_recompute(&edge, due - 1));
    assert!(needs_recompute(&edge, due));
}
