//! Desk-scale reproduction of the two-trader HARA example, the `ω†` batches
//! and the KL-divergence sweep over `γ`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use mumarket_core::equilibrium::solve_pareto;
use mumarket_core::formulas::{hara_approx_price, risk_adjusted_wealth, wealth_weighted_price};
use mumarket_core::metrics::{delta_x, kld};
use mumarket_core::trading::{
    convergence_report, run, Agent, Market, RunOptions, TradingSequence, DEFAULT_MAX_ROUNDS,
};
use mumarket_core::{Result, SimplexVector, UtilitySpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::generator::{GammaSpec, RandomMarketSpec};

/// Solver settings shared by every simulation of a reproduction.
#[derive(Debug, Clone, Copy)]
pub struct ReproOptions {
    pub run: RunOptions,
    pub max_rounds: u64,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions {
            run: RunOptions::default(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

/// Maps `f` over `items` on a pool capped by `MUMARKET_THREADS`; output order
/// follows input order.
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    let threads = std::env::var("MUMARKET_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
        Err(_) => items.into_iter().map(f).collect(),
    }
}

fn simplex(v: [f64; 3]) -> SimplexVector {
    SimplexVector::new(v.to_vec()).expect("valid simplex")
}

fn fmt_list(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, ",{v}");
    }
}

// ---------------------------------------------------------------------------
// two-trader example

/// Resolutions of the market maker's belief tried by `table2`.
pub const TABLE2_THETAS: [[f64; 3]; 4] = [
    [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    [0.5, 0.25, 0.25],
    [0.4, 0.4, 0.2],
    [0.25, 0.5, 0.25],
];

/// Published rows: `(W1, W2, γ, S1 price, S1 utilities, S2 price, S2 utilities)`.
pub type PublishedRow = (f64, f64, f64, [f64; 3], [f64; 2], [f64; 3], [f64; 2]);

pub const TABLE2_PUBLISHED: [PublishedRow; 4] = [
    (10.0, 10.0, 0.5, [0.401, 0.189, 0.410], [4.977, 5.144], [0.401, 0.189, 0.410], [4.975, 5.146]),
    (8.0, 12.0, 0.5, [0.260, 0.202, 0.538], [5.147, 5.898], [0.263, 0.205, 0.533], [5.187, 5.864]),
    (10.0, 10.0, 0.7, [0.443, 0.167, 0.391], [5.908, 6.345], [0.442, 0.167, 0.391], [5.922, 6.333]),
    (8.0, 12.0, 0.7, [0.534, 0.142, 0.324], [5.440, 6.777], [0.532, 0.142, 0.326], [5.526, 6.706]),
];

/// Two HARA traders with beliefs `(0.2, 0.2, 0.6)` and `(0.6, 0.1, 0.3)`
/// against a market maker with `a = 1`, `b = 0.8`, `W0 = 1`.
pub fn example_market(theta: [f64; 3], w1: f64, w2: f64, gamma: f64) -> Result<Market> {
    let trader = |belief, w| -> Result<Agent> {
        Ok(Agent {
            utility: UtilitySpec::hara(simplex(belief), 1.0, 0.0, gamma)?,
            initial_wealth: w,
        })
    };
    Market::new(
        Agent {
            utility: UtilitySpec::hara(SimplexVector::from_weights(theta.to_vec())?, 1.0, 0.8, gamma)?,
            initial_wealth: 1.0,
        },
        vec![trader([0.2, 0.2, 0.6], w1)?, trader([0.6, 0.1, 0.3], w2)?],
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleRow {
    pub theta: [f64; 3],
    pub row: usize,
    pub w1: f64,
    pub w2: f64,
    pub gamma: f64,
    /// `"S1"` starts with trader 1, `"S2"` with trader 2.
    pub sequence: &'static str,
    pub price: Vec<f64>,
    pub utilities: Vec<f64>,
    pub converged: bool,
    pub rounds: u64,
    pub max_kkt_residual: f64,
    pub price_error: f64,
    pub utility_error: f64,
}

/// Runs every published row under both sequences for each `theta`.
pub fn table2(thetas: &[[f64; 3]], opts: &ReproOptions) -> Result<Vec<ExampleRow>> {
    let mut jobs = Vec::new();
    for &theta in thetas {
        for row in 0..TABLE2_PUBLISHED.len() {
            for s in 0..2 {
                jobs.push((theta, row, s));
            }
        }
    }
    par_map(jobs, |(theta, row, s)| {
        let (w1, w2, gamma, p1, v1, p2, v2) = TABLE2_PUBLISHED[row];
        let market = example_market(theta, w1, w2, gamma)?;
        let (name, order, published_p, published_v) = if s == 0 {
            ("S1", vec![1, 2], p1, v1)
        } else {
            ("S2", vec![2, 1], p2, v2)
        };
        let seq = TradingSequence::round_robin(order).with_max_rounds(opts.max_rounds);
        let traj = run(&market, &seq, &opts.run)?;
        let price = traj.final_price(&market)?.as_slice().to_vec();
        let utilities = market
            .traders
            .iter()
            .zip(&traj.final_state.traders)
            .map(|(t, x)| t.utility.value(x))
            .collect::<Result<Vec<_>>>()?;
        let report = convergence_report(&market, &traj)?;
        Ok(ExampleRow {
            theta,
            row: row + 1,
            w1,
            w2,
            gamma,
            sequence: name,
            price_error: max_abs_diff(&price, &published_p),
            utility_error: max_abs_diff(&utilities, &published_v),
            price,
            utilities,
            converged: traj.converged,
            rounds: traj.rounds_used,
            max_kkt_residual: report.max_kkt_residual,
        })
    })
    .into_iter()
    .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn table2_csv(rows: &[ExampleRow]) -> String {
    let mut out = String::from(
        "theta_1,theta_2,theta_3,row,W1,W2,gamma,sequence,p_1,p_2,p_3,V_1,V_2,converged,rounds,max_kkt,price_abs_err,utility_abs_err\n",
    );
    for r in rows {
        let _ = write!(out, "{},{},{},{},{},{},{},{}", r.theta[0], r.theta[1], r.theta[2], r.row, r.w1, r.w2, r.gamma, r.sequence);
        fmt_list(&mut out, &r.price);
        fmt_list(&mut out, &r.utilities);
        let _ = writeln!(
            out,
            ",{},{},{},{},{}",
            r.converged, r.rounds, r.max_kkt_residual, r.price_error, r.utility_error
        );
    }
    out
}

/// The `theta` whose row-1 `S1` price is closest to the published one.
pub fn best_fit(rows: &[ExampleRow]) -> Option<&ExampleRow> {
    rows.iter()
        .filter(|r| r.row == 1 && r.sequence == "S1")
        .min_by(|a, b| a.price_error.total_cmp(&b.price_error))
}

// ---------------------------------------------------------------------------
// random-market batches

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchSetup {
    pub traders: usize,
    pub alpha: f64,
    pub gamma_m: GammaSpec,
    pub gamma_t: GammaSpec,
    /// Published `(D, mean δx, Var δx)`.
    pub published: (f64, f64, f64),
}

const fn setup(traders: usize, alpha: f64, gm: f64, gt: GammaSpec, published: (f64, f64, f64)) -> BatchSetup {
    BatchSetup {
        traders,
        alpha,
        gamma_m: GammaSpec::Fixed(gm),
        gamma_t: gt,
        published,
    }
}

pub const TABLE3_ROWS: [BatchSetup; 10] = [
    setup(10, 0.1, 0.3, GammaSpec::Fixed(0.3), (3.68e-5, 0.0487, 1.56e-4)),
    setup(10, 0.5, 0.3, GammaSpec::Fixed(0.3), (2.86e-5, 0.0512, 4.09e-4)),
    setup(10, 0.3, 0.3, GammaSpec::Fixed(0.3), (1.08e-5, 0.0437, 1.90e-4)),
    setup(10, 0.3, -0.2, GammaSpec::Fixed(-0.2), (1.70e-6, 0.0166, 1.49e-5)),
    setup(10, 0.3, -0.2, GammaSpec::Fixed(0.5), (1.57e-5, 0.1055, 2.31e-4)),
    setup(10, 0.3, -0.2, GammaSpec::Fixed(-0.5), (4.00e-7, 0.0184, 2.28e-5)),
    setup(10, 0.3, -0.2, GammaSpec::Range([0.2, 0.8]), (1.60e-4, 0.1886, 3.95e-3)),
    setup(10, 0.3, -0.2, GammaSpec::Range([-0.8, -0.2]), (1.20e-6, 0.0164, 1.88e-5)),
    setup(100, 0.3, -0.2, GammaSpec::Range([-0.8, -0.2]), (8.00e-7, 0.0186, 2.90e-4)),
    setup(100, 0.3, -0.2, GammaSpec::Range([0.2, 0.8]), (2.12e-5, 0.2998, 5.00e-3)),
];

/// Outcome of one simulated random market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub converged: bool,
    pub rounds: u64,
    /// `D(p_sim, p†)`
    pub kld_dagger: f64,
    pub delta_x: f64,
    /// `D(p_sim, p̂)` for the risk-adjusted power mean.
    pub kld_hara: f64,
    /// `D(p_sim, p̄)` for the wealth-weighted mean.
    pub kld_baseline: f64,
}

/// Simulates one generated market under a random arrival sequence and compares
/// it with the `ω†` Pareto solution and both price formulas.
pub fn evaluate(spec: &RandomMarketSpec, opts: &ReproOptions) -> Result<RunMetrics> {
    let g = spec.generate()?;
    let seq = TradingSequence::random(g.sequence_seed).with_max_rounds(opts.max_rounds);
    let traj = run(&g.market, &seq, &opts.run)?;
    let p_sim = traj.final_price(&g.market)?;
    let dagger = solve_pareto(&g.market, &g.omega_dagger()?)?;
    let w_hat0 = risk_adjusted_wealth(spec.maker_wealth, 1.0, spec.maker_b, g.gamma_m);
    let hat = hara_approx_price(&spec.maker_belief, &g.beliefs, w_hat0, &g.wealth, g.gamma_m)?;
    let bar = wealth_weighted_price(&spec.maker_belief, &g.beliefs, spec.maker_wealth, &g.wealth)?;
    Ok(RunMetrics {
        converged: traj.converged,
        rounds: traj.rounds_used,
        kld_dagger: kld(&p_sim, &dagger.price)?,
        delta_x: delta_x(&traj.final_state.traders, &dagger.x_star)?,
        kld_hara: kld(&p_sim, &hat)?,
        kld_baseline: kld(&p_sim, &bar)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub non_converged: usize,
    pub mean_kld_dagger: f64,
    pub mean_delta_x: f64,
    /// Sample variance of `δx`.
    pub var_delta_x: f64,
    pub mean_kld_hara: f64,
    pub mean_kld_baseline: f64,
    #[serde(skip)]
    pub elapsed: Duration,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(metrics: &[RunMetrics], elapsed: Duration) -> BatchSummary {
    let dx: Vec<f64> = metrics.iter().map(|m| m.delta_x).collect();
    let mdx = mean(&dx);
    let var = if dx.len() > 1 {
        dx.iter().map(|d| (d - mdx).powi(2)).sum::<f64>() / (dx.len() - 1) as f64
    } else {
        0.0
    };
    BatchSummary {
        runs: metrics.len(),
        non_converged: metrics.iter().filter(|m| !m.converged).count(),
        mean_kld_dagger: mean(&metrics.iter().map(|m| m.kld_dagger).collect::<Vec<_>>()),
        mean_delta_x: mdx,
        var_delta_x: var,
        mean_kld_hara: mean(&metrics.iter().map(|m| m.kld_hara).collect::<Vec<_>>()),
        mean_kld_baseline: mean(&metrics.iter().map(|m| m.kld_baseline).collect::<Vec<_>>()),
        elapsed,
    }
}

/// Runs `runs` markets drawn from `make(seed)` with seeds `base, base+1, …`.
pub fn batch<F>(runs: usize, base_seed: u64, opts: &ReproOptions, make: F) -> Result<BatchSummary>
where
    F: Fn(u64) -> RandomMarketSpec + Sync + Send,
{
    let start = Instant::now();
    let metrics: Vec<RunMetrics> = par_map((0..runs as u64).collect(), |r| {
        evaluate(&make(base_seed.wrapping_add(r)), opts)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(summarize(&metrics, start.elapsed()))
}

pub fn table3_row(setup: &BatchSetup, runs: usize, seed: u64, opts: &ReproOptions) -> Result<BatchSummary> {
    batch(runs, seed, opts, |s| {
        RandomMarketSpec::grouped(setup.traders, setup.alpha, setup.gamma_m, setup.gamma_t, s)
    })
}

pub fn table3(rows: &[BatchSetup], runs: usize, seed: u64, opts: &ReproOptions) -> Result<Vec<BatchSummary>> {
    rows.iter()
        .enumerate()
        .map(|(k, s)| table3_row(s, runs, seed.wrapping_add(1_000_003 * k as u64), opts))
        .collect()
}

pub fn table3_csv(rows: &[BatchSetup], summaries: &[BatchSummary]) -> String {
    let mut out = String::from(
        "J,alpha,gamma_M,gamma_T,runs,non_converged,D_mean,delta_x_mean,delta_x_var,published_D,published_delta_x_mean,published_delta_x_var\n",
    );
    for (s, b) in rows.iter().zip(summaries) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:e},{},{:e},{:e},{},{:e}",
            s.traders,
            s.alpha,
            gamma_label(&s.gamma_m),
            gamma_label(&s.gamma_t),
            b.runs,
            b.non_converged,
            b.mean_kld_dagger,
            b.mean_delta_x,
            b.var_delta_x,
            s.published.0,
            s.published.1,
            s.published.2
        );
    }
    out
}

fn gamma_label(g: &GammaSpec) -> String {
    match g {
        GammaSpec::Fixed(v) => v.to_string(),
        GammaSpec::Range([lo, hi]) => format!("[{lo} {hi}]"),
    }
}

// ---------------------------------------------------------------------------
// γ sweep

/// `γ = −1.0, −0.9, …, 0.9`
pub fn fig2_gammas() -> Vec<f64> {
    (0..20).map(|k| (k as f64 - 10.0) / 10.0).collect()
}

/// Market for the sweep: the batch setup with `J = 10`, `α = 0.3`, a common
/// `γ` and market-maker wealth 2. With `spread > 0` trader risk parameters
/// are drawn from `[γ − spread, γ + spread]` instead.
pub fn fig2_spec(gamma: f64, spread: f64, seed: u64) -> RandomMarketSpec {
    let gamma_t = if spread > 0.0 {
        GammaSpec::Range([gamma - spread, (gamma + spread).min(0.99)])
    } else {
        GammaSpec::Fixed(gamma)
    };
    let mut spec = RandomMarketSpec::grouped(10, 0.3, GammaSpec::Fixed(gamma), gamma_t, seed);
    spec.maker_wealth = 2.0;
    spec
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub fixed: BatchSummary,
    pub random: BatchSummary,
}

pub fn fig2(gammas: &[f64], runs: usize, seed: u64, opts: &ReproOptions) -> Result<Vec<SweepPoint>> {
    gammas
        .iter()
        .enumerate()
        .map(|(k, &gamma)| {
            let base = seed.wrapping_add(1_000_003 * k as u64);
            Ok(SweepPoint {
                gamma,
                fixed: batch(runs, base, opts, |s| fig2_spec(gamma, 0.0, s))?,
                random: batch(runs, base, opts, |s| fig2_spec(gamma, 0.1, s))?,
            })
        })
        .collect()
}

pub fn fig2_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "gamma,kld_hara,kld_baseline,kld_hara_random_gamma,kld_baseline_random_gamma,non_converged\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{}",
            p.gamma,
            p.fixed.mean_kld_hara,
            p.fixed.mean_kld_baseline,
            p.random.mean_kld_hara,
            p.random.mean_kld_baseline,
            p.fixed.non_converged + p.random.non_converged
        );
    }
    out
}
