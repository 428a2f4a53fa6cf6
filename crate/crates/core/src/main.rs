use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use recount::config::ConfigFile;
use recount::decay::{fmt_sig, FitComparison};
use recount::engine::predict::DEFAULT_K_NEIGHBORS;
use recount::engine::replay::DEFAULT_CHECKPOINT_EVERY;
use recount::engine::{detect_bot_rings, replay, BotConfig, Policy, PredictConfig, ReplayConfig};
use recount::ingest::{parse_ratings, ParseMode};
use recount::report;
use recount::scheduler::{
    assign_periods, group_lambdas, optimize, schedule_report, PeriodTable, ServiceParams, DEFAULT_ACTIVITY_GROUPS,
    DEFAULT_MIN_USER_INTERVALS,
};
use recount::similarity::{all_pairs, DEFAULT_MIN_OVERLAP};
use recount::stability::{
    analyze, AnalysisConfig, TimeGrid, DEFAULT_BUCKET_LEN, DEFAULT_MIN_ACTIVE_BUCKETS, DEFAULT_SENSITIVITY,
    DEFAULT_SMOOTHING_WINDOW,
};
use recount::store::{GraphStore, SimilarityEdge, UserId};
use recount::{Error, Result};

const STORE_FILE: &str = "store.rcs";

#[derive(Parser)]
#[command(name = "recount", version, about = "Similarity stability analysis and recomputation scheduling")]
struct Cli {
    /// Directory for every artifact.
    #[arg(long, global = true, env = "RECOUNT_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Parameter file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a ratings file into a store.
    Ingest {
        /// MovieLens-style ratings file (`,`, tab or `::` separated).
        input: Option<PathBuf>,
        #[command(flatten)]
        store: StoreArg,
        /// Fail on the first malformed row instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Coefficient series, interval histogram and survival curve.
    Stability {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Exponential and Pareto fits of `(t, N)` points.
    Fit {
        /// Headered CSV with t and N in the first two columns (default: survival.csv).
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Optimal staleness and per-edge recomputation periods.
    Schedule {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        service: ServiceArgs,
        #[command(flatten)]
        groups: GroupArgs,
    },
    /// Replay the store's rating log under recomputation policies.
    Simulate {
        #[command(flatten)]
        store: StoreArg,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        service: ServiceArgs,
        #[command(flatten)]
        groups: GroupArgs,
        #[arg(long, value_enum, default_value_t = PolicyArg::All)]
        policy: PolicyArg,
        /// Period of the periodic policy in seconds (default: the average period).
        #[arg(long)]
        period: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
        checkpoint_every: usize,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, default_value_t = 4.0)]
        relevance_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
        k_neighbors: usize,
    },
    /// Groups of users whose coefficients stay near 1.
    DetectBots {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        bucket_len: Option<i64>,
        #[arg(long)]
        min_overlap: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Buckets.
        #[arg(long, default_value_t = 3)]
        min_duration: usize,
        #[arg(long, default_value_t = 3)]
        min_size: usize,
    },
}

#[derive(Args)]
struct StoreArg {
    /// Store file (default: <out-dir>/store.rcs).
    #[arg(long = "store")]
    path: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Bucket length in seconds.
    #[arg(long)]
    bucket_len: Option<i64>,
    /// Sensitivity of the stability criterion.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    min_overlap: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MIN_ACTIVE_BUCKETS)]
    min_active_buckets: usize,
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Args)]
struct ServiceArgs {
    #[arg(long)]
    t_fr: Option<f64>,
    #[arg(long)]
    t_ir: Option<f64>,
    #[arg(long)]
    p_b: Option<f64>,
    #[arg(long)]
    n_cr: Option<f64>,
    /// Mean time between a user's visits, in buckets.
    #[arg(long)]
    tau_visit: Option<f64>,
    /// Stability probability for periods (default: (1 − n_cr)/(1 − p_b)).
    #[arg(long)]
    p_st: Option<f64>,
    /// Decay rate per bucket (default: the exponential row of fit.csv).
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct GroupArgs {
    /// Activity groups for personal periods; 0 keeps every edge in cold start.
    #[arg(long, default_value_t = DEFAULT_ACTIVITY_GROUPS)]
    groups: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_USER_INTERVALS)]
    min_user_intervals: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Always,
    Periodic,
    Adaptive,
    All,
}

struct Ctx {
    out_dir: PathBuf,
    file: ConfigFile,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn store_path(&self, arg: &StoreArg) -> PathBuf {
        arg.path.clone().unwrap_or_else(|| self.out(STORE_FILE))
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.out(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn analysis(&self, g: &GridArgs) -> AnalysisConfig {
        AnalysisConfig {
            bucket_len: g.bucket_len.or(self.file.bucket_len).unwrap_or(DEFAULT_BUCKET_LEN),
            sensitivity: g.d.or(self.file.d).unwrap_or(DEFAULT_SENSITIVITY),
            min_overlap: g.min_overlap.or(self.file.min_overlap).unwrap_or(DEFAULT_MIN_OVERLAP),
            min_active_buckets: g.min_active_buckets,
            smoothing_window: g.window.or(self.file.smoothing_window).unwrap_or(DEFAULT_SMOOTHING_WINDOW),
            max_pairs: g.max_pairs,
        }
    }

    fn service(&self, s: &ServiceArgs) -> Result<ServiceParams> {
        let f = &self.file;
        ServiceParams::new(
            s.t_fr.or(f.t_fr).unwrap_or(1.0),
            s.t_ir.or(f.t_ir).unwrap_or(0.1),
            s.p_b.or(f.p_b).unwrap_or(0.1),
            s.n_cr.or(f.n_cr).unwrap_or(0.2),
            s.tau_visit.or(f.tau_visit).unwrap_or(1.0),
        )
    }

    fn p_st(&self, s: &ServiceArgs, params: &ServiceParams) -> f64 {
        s.p_st.or(self.file.p_st).unwrap_or_else(|| params.stability_level())
    }

    fn lambda(&self, s: &ServiceArgs) -> Result<f64> {
        if let Some(l) = s.lambda.or(self.file.lambda) {
            return Ok(l);
        }
        let path = self.out("fit.csv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .find_map(|l| l.strip_prefix("exponential,"))
            .and_then(|rest| rest.split(',').nth(1)?.parse().ok())
            .ok_or_else(|| Error::InsufficientData(format!("{} holds no exponential fit", path.display())))
    }

    fn per_user_lambdas(&self, store: &GraphStore, grid: &GridArgs, groups: &GroupArgs) -> Result<Option<BTreeMap<UserId, f64>>> {
        if groups.groups == 0 {
            return Ok(None);
        }
        let analysis = analyze(store, &self.analysis(grid))?;
        Ok(Some(group_lambdas(
            store,
            analysis.pair_intervals(),
            groups.groups,
            groups.min_user_intervals,
        )))
    }
}

fn cmd_ingest(ctx: &Ctx, input: Option<PathBuf>, store: &StoreArg, strict: bool) -> Result<()> {
    let input = input
        .or_else(|| ctx.file.dataset_path.clone())
        .ok_or_else(|| Error::InvalidArgument("no ratings file given".into()))?;
    let file = fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
    let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
    let (events, rep) = parse_ratings(BufReader::new(file), mode)?;
    let store_path = ctx.store_path(store);
    GraphStore::from_events(events).save(&store_path)?;
    let span = |t: Option<i64>| t.map_or_else(|| "none".to_string(), |t| t.to_string());
    println!("accepted = {}", rep.accepted);
    println!("rejected = {}", rep.rejected);
    println!("first_timestamp = {}", span(rep.first_timestamp));
    println!("last_timestamp = {}", span(rep.last_timestamp));
    println!("store = {}", store_path.display());
    Ok(())
}

fn cmd_stability(ctx: &Ctx, store: &StoreArg, grid: &GridArgs) -> Result<()> {
    let s = GraphStore::load(ctx.store_path(store))?;
    let analysis = analyze(&s, &ctx.analysis(grid))?;
    let path = ctx.out("table1.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    report::write_table1(&mut out, &analysis)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&path, e))?;
    ctx.write("histogram.csv", &report::histogram_csv(&analysis.histogram))?;
    ctx.write("histogram_smoothed.csv", &report::smoothed_csv(&analysis.smoothed))?;
    ctx.write("survival.csv", &report::survival_csv(&analysis.survival))?;
    println!("buckets = {}", analysis.grid.bucket_count());
    println!("pairs = {}", analysis.series.len());
    println!("intervals = {}", analysis.histogram.total());
    Ok(())
}

fn cmd_fit(ctx: &Ctx, points: Option<PathBuf>) -> Result<()> {
    let path = points.unwrap_or_else(|| ctx.out("survival.csv"));
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let pts = report::read_points(BufReader::new(file))?;
    let cmp = FitComparison::new(&pts);
    if let Err(e) = &cmp.exponential {
        return Err(Error::InsufficientData(format!("exponential fit failed: {e}")));
    }
    let text = cmp.report();
    ctx.write("fit.txt", &text)?;
    ctx.write("fit.csv", &cmp.csv())?;
    print!("{text}");
    Ok(())
}

fn cmd_schedule(ctx: &Ctx, store: &StoreArg, grid: &GridArgs, service: &ServiceArgs, groups: &GroupArgs) -> Result<()> {
    let params = ctx.service(service)?;
    let lambda = ctx.lambda(service)?;
    let sol = optimize(&params, lambda)?;
    let store_path = ctx.store_path(store);
    let mut s = GraphStore::load(&store_path)?;
    let (_, last) = s
        .time_range()
        .ok_or_else(|| Error::InsufficientData("store holds no ratings".into()))?;
    let p_st = ctx.p_st(service, &params);
    let per_user = ctx.per_user_lambdas(&s, grid, groups)?;
    let analysis = ctx.analysis(grid);
    for (pair, k) in all_pairs(&s, last, analysis.min_overlap) {
        s.put_edge(SimilarityEdge::new(pair, k, None, 1.0, last)?);
    }
    let table = assign_periods(&mut s, lambda, per_user.as_ref(), p_st, analysis.bucket_len)?;
    s.save(&store_path)?;
    let mut text = schedule_report(&params, lambda, &sol, analysis.bucket_len);
    text.push_str(&format!("p_st = {}\n", fmt_sig(p_st)));
    text.push_str(&format!("average_rp_seconds = {}\n", fmt_sig(table.average_rp)));
    text.push_str(&format!("users_with_recount_period = {}\n", table.recount.len()));
    text.push_str(&format!("edges = {}\n", s.num_edges()));
    ctx.write("schedule.txt", &text)?;
    print!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Ctx,
    store: &StoreArg,
    grid: &GridArgs,
    service: &ServiceArgs,
    groups: &GroupArgs,
    policy: PolicyArg,
    period: Option<f64>,
    cfg: ReplayConfig,
) -> Result<()> {
    let s = GraphStore::load(ctx.store_path(store))?;
    let analysis = ctx.analysis(grid);
    let time_grid = TimeGrid::for_store(&s, analysis.bucket_len)?;
    let events = s.events_chronological();
    let params = ctx.service(service)?;
    let cfg = ReplayConfig {
        service: params,
        sensitivity: analysis.sensitivity,
        min_overlap: analysis.min_overlap,
        ..cfg
    };
    let needs_table = match policy {
        PolicyArg::Always => false,
        PolicyArg::Periodic => period.is_none(),
        PolicyArg::Adaptive | PolicyArg::All => true,
    };
    let table = if needs_table {
        let per_user = ctx.per_user_lambdas(&s, grid, groups)?;
        let p_st = ctx.p_st(service, &params);
        Some(PeriodTable::new(ctx.lambda(service)?, per_user.as_ref(), p_st, analysis.bucket_len)?)
    } else {
        None
    };
    let periodic = || Policy::Periodic(period.or(table.as_ref().map(|t| t.average_rp)).unwrap_or(0.0));
    let adaptive = || Policy::Adaptive(table.clone().expect("table built for adaptive"));
    let policies = match policy {
        PolicyArg::Always => vec![Policy::Always],
        PolicyArg::Periodic => vec![periodic()],
        PolicyArg::Adaptive => vec![adaptive()],
        PolicyArg::All => vec![Policy::Always, periodic(), adaptive()],
    };
    let mut csv = String::new();
    let mut summary = String::new();
    for p in &policies {
        let outcome = replay(&events, &time_grid, p, &cfg)?;
        let rows = outcome.csv();
        let skip = if csv.is_empty() { 0 } else { 1 };
        for line in rows.lines().skip(skip) {
            csv.push_str(line);
            csv.push('\n');
        }
        if !summary.is_empty() {
            summary.push('\n');
        }
        summary.push_str(&outcome.summary());
    }
    ctx.write("simulate.csv", &csv)?;
    ctx.write("simulate.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_detect_bots(
    ctx: &Ctx,
    store: &StoreArg,
    bucket_len: Option<i64>,
    min_overlap: Option<usize>,
    cfg: BotConfig,
) -> Result<()> {
    cfg.validate()?;
    let s = GraphStore::load(ctx.store_path(store))?;
    let bucket_len = bucket_len.or(ctx.file.bucket_len).unwrap_or(DEFAULT_BUCKET_LEN);
    let grid = TimeGrid::for_store(&s, bucket_len)?;
    let cfg = BotConfig {
        min_overlap: min_overlap.or(ctx.file.min_overlap).unwrap_or(DEFAULT_MIN_OVERLAP),
        ..cfg
    };
    let rings = detect_bot_rings(&s, &grid, &cfg)?;
    let csv = report::rings_csv(&rings);
    ctx.write("bots.csv", &csv)?;
    println!("rings = {}", rings.len());
    for line in csv.lines().skip(1) {
        println!("{line}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let out_dir = cli
        .out_dir
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("recount-out"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ctx = Ctx { out_dir, file };
    match cli.command {
        Command::Ingest { input, store, strict } => cmd_ingest(&ctx, input, &store, strict),
        Command::Stability { store, grid } => cmd_stability(&ctx, &store, &grid),
        Command::Fit { points } => cmd_fit(&ctx, points),
        Command::Schedule {
            store,
            grid,
            service,
            groups,
        } => cmd_schedule(&ctx, &store, &grid, &service, &groups),
        Command::Simulate {
            store,
            grid,
            service,
            groups,
            policy,
            period,
            checkpoint_every,
            top_n,
            relevance_threshold,
            k_neighbors,
        } => {
            let cfg = ReplayConfig {
                predict: PredictConfig {
                    k_neighbors,
                    ..PredictConfig::default()
                },
                top_n,
                relevance_threshold,
                checkpoint_every,
                ..ReplayConfig::new(ctx.service(&service)?)
            };
            cmd_simulate(&ctx, &store, &grid, &service, &groups, policy, period, cfg)
        }
        Command::DetectBots {
            store,
            bucket_len,
            min_overlap,
            epsilon,
            min_duration,
            min_size,
        } => cmd_detect_bots(
            &ctx,
            &store,
            bucket_len,
            min_overlap,
            BotConfig {
                epsilon,
                min_duration,
                min_size,
                min_overlap: DEFAULT_MIN_OVERLAP,
            },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
