//! Acceptance checks run by `mumarket verify` and the `acceptance` test target.
//!
//! Every check is deterministic for a given seed. Check 10 is informational:
//! it reports whether the published two-trader example can be matched but
//! never fails the suite.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use mumarket_core::equilibrium::{
    aggregate_penalty_price, risk_measure_equilibrium, solve_pareto, StationaryKind,
};
use mumarket_core::formulas::{dual_power_mean_price, exp_limiting_price, exp_price_update, power_mean_price};
use mumarket_core::pricing::{
    certainty_equivalent, cost_function_value, induced_scoring_rule, instantaneous_price, price_order,
};
use mumarket_core::rng::SplitMix64;
use mumarket_core::trading::{
    convergence_report, run, Agent, Market, RunOptions, Trajectory, TradingSequence,
};
use mumarket_core::{
    MarketError, MarketState, PenaltySpec, Result, SimplexVector, TradeDelta, UtilitySpec, WealthVector,
};
use serde::Serialize;

use crate::generator::{GammaSpec, RandomMarketSpec};
use crate::oracle::{maximize_on_simplex, OracleOptions};
use crate::reproduce::{self, ReproOptions, TABLE2_PUBLISHED, TABLE2_THETAS, TABLE3_ROWS};

pub const CHECK_COUNT: u8 = 11;

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub run: RunOptions,
}

impl VerifyOptions {
    fn repro(&self) -> ReproOptions {
        ReproOptions {
            run: self.run,
            ..ReproOptions::default()
        }
    }
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 20_240_601,
            run: RunOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    /// Non-binding checks are reported but never fail the suite.
    pub binding: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn status(&self) -> &'static str {
        match (self.passed, self.binding) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FLAG",
        }
    }
}

pub fn name(id: u8) -> &'static str {
    match id {
        1 => "exponential closed-form limit",
        2 => "one-step exponential update",
        3 => "sequence invariance",
        4 => "Pareto optimality of limits",
        5 => "risk-measure aggregation",
        6 => "power-penalty aggregation form",
        7 => "conservation and utility preservation",
        8 => "instantaneous price vs finite differences",
        9 => "mechanism equivalence",
        10 => "two-trader example reproduction",
        11 => "weighting heuristic and price formula quality",
        _ => "unknown",
    }
}

/// Outcome of one check before timing and labels are attached.
struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

pub fn check(id: u8, opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = match id {
        1 => check_exp_limit(opts),
        2 => check_exp_update(opts),
        3 => check_sequence_invariance(opts),
        4 => check_pareto(opts),
        5 => check_aggregation(opts),
        6 => check_power_forms(opts),
        7 => check_conservation(opts),
        8 => check_instantaneous(opts),
        9 => check_mechanism(opts),
        10 => check_example(opts),
        11 => check_heuristics(opts),
        _ => Err(MarketError::InvalidInput(format!("no check {id}"))),
    };
    let (passed, detail) = match outcome {
        Ok(v) => (v.passed, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        id,
        name: name(id),
        passed,
        binding: id != 10,
        detail,
        elapsed: start.elapsed(),
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    (1..=CHECK_COUNT).map(|id| check(id, opts)).collect()
}

pub fn all_binding_pass(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed || !r.binding)
}

pub fn table(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(
            out,
            "{:>2}  {:<4}  {:<46} {:>8.2}s  {}",
            r.id,
            r.status(),
            r.name,
            r.elapsed.as_secs_f64(),
            r.detail
        );
    }
    out
}

// ---------------------------------------------------------------------------
// instance generators

fn belief(rng: &mut SplitMix64, n: usize) -> SimplexVector {
    SimplexVector::from_weights((0..n).map(|_| rng.uniform(0.05, 1.0)).collect())
        .expect("positive weights")
}

struct ExpMarket {
    market: Market,
    theta: SimplexVector,
    beta: f64,
    beliefs: Vec<SimplexVector>,
    alphas: Vec<f64>,
}

fn exp_market(rng: &mut SplitMix64, n: usize, j: usize) -> Result<ExpMarket> {
    let theta = belief(rng, n);
    let beta = rng.uniform(0.2, 5.0);
    let maker = Agent {
        utility: UtilitySpec::exponential(theta.clone(), beta)?,
        initial_wealth: rng.uniform(1.0, 10.0),
    };
    let mut traders = Vec::new();
    let (mut beliefs, mut alphas) = (Vec::new(), Vec::new());
    for _ in 0..j {
        let b = belief(rng, n);
        let a = rng.uniform(0.2, 5.0);
        traders.push(Agent {
            utility: UtilitySpec::exponential(b.clone(), a)?,
            initial_wealth: rng.uniform(1.0, 10.0),
        });
        beliefs.push(b);
        alphas.push(a);
    }
    Ok(ExpMarket {
        market: Market::new(maker, traders)?,
        theta,
        beta,
        beliefs,
        alphas,
    })
}

/// The twenty markets of checks 1 and 2.
fn exp_suite(seed: u64) -> Result<Vec<ExpMarket>> {
    let mut rng = SplitMix64::new(seed);
    (0..20)
        .map(|_| {
            let n = 2 + rng.index(4);
            let j = 1 + rng.index(10);
            exp_market(&mut rng, n, j)
        })
        .collect()
}

/// Relative-entropy market maker and traders, returned with the matching
/// exponential risk parameters.
fn entropy_market(rng: &mut SplitMix64, n: usize, j: usize) -> Result<ExpMarket> {
    let theta = belief(rng, n);
    let beta = rng.uniform(0.2, 5.0);
    let maker = Agent {
        utility: UtilitySpec::risk_measure(PenaltySpec::relative_entropy(theta.clone(), beta)?)?,
        initial_wealth: rng.uniform(1.0, 10.0),
    };
    let mut traders = Vec::new();
    let (mut beliefs, mut alphas) = (Vec::new(), Vec::new());
    for _ in 0..j {
        let b = belief(rng, n);
        let a = rng.uniform(0.2, 5.0);
        traders.push(Agent {
            utility: UtilitySpec::risk_measure(PenaltySpec::relative_entropy(b.clone(), a)?)?,
            initial_wealth: rng.uniform(1.0, 10.0),
        });
        beliefs.push(b);
        alphas.push(a);
    }
    Ok(ExpMarket {
        market: Market::new(maker, traders)?,
        theta,
        beta,
        beliefs,
        alphas,
    })
}

fn crra_market(rng: &mut SplitMix64, n: usize, j: usize, gamma: f64) -> Result<Market> {
    let maker = Agent {
        utility: UtilitySpec::crra(belief(rng, n), gamma)?,
        initial_wealth: rng.uniform(1.0, 10.0),
    };
    let traders = (0..j)
        .map(|_| {
            Ok(Agent {
                utility: UtilitySpec::crra(belief(rng, n), gamma)?,
                initial_wealth: rng.uniform(1.0, 10.0),
            })
        })
        .collect::<Result<_>>()?;
    Market::new(maker, traders)
}

/// Separable markets and sequences used by the Pareto and conservation checks.
fn separable_suite(seed: u64) -> Result<Vec<(String, Market, TradingSequence)>> {
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    let mut out = Vec::new();
    for (k, m) in exp_suite(seed)?.into_iter().enumerate().take(10) {
        let j = m.market.traders.len();
        out.push((format!("exponential #{}", k + 1), m.market, TradingSequence::identity(j)));
    }
    for (row, (w1, w2, gamma, ..)) in TABLE2_PUBLISHED.iter().enumerate() {
        let market = reproduce::example_market(TABLE2_THETAS[0], *w1, *w2, *gamma)?;
        out.push((format!("two-trader row {} S1", row + 1), market.clone(), TradingSequence::identity(2)));
        out.push((format!("two-trader row {} S2", row + 1), market, TradingSequence::reversed(2)));
    }
    for (k, gamma) in [0.3, 0.6].into_iter().enumerate() {
        let market = crra_market(&mut rng, 3, 4, gamma)?;
        out.push((format!("crra #{}", k + 1), market, TradingSequence::random(rng.next_u64())));
    }
    for (k, (gm, gt)) in [(0.3, GammaSpec::Fixed(0.3)), (-0.2, GammaSpec::Range([-0.8, -0.2]))]
        .into_iter()
        .enumerate()
    {
        let g = RandomMarketSpec::grouped(10, 0.3, GammaSpec::Fixed(gm), gt, seed.wrapping_add(k as u64))
            .generate()?;
        out.push((format!("random hara #{}", k + 1), g.market, TradingSequence::random(g.sequence_seed)));
    }
    Ok(out)
}

fn entropy_suite(seed: u64) -> Result<Vec<ExpMarket>> {
    let mut rng = SplitMix64::new(seed ^ 0xe7);
    vec![(3, 3), (4, 2)]
        .into_iter()
        .map(|(n, j)| entropy_market(&mut rng, n, j))
        .collect()
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 1, 2

fn check_exp_limit(opts: &VerifyOptions) -> Result<Verdict> {
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    let mut unconverged = 0;
    for m in exp_suite(opts.seed)? {
        let start = Instant::now();
        let traj = run(&m.market, &TradingSequence::identity(m.alphas.len()), &opts.run)?;
        slowest = slowest.max(start.elapsed());
        unconverged += usize::from(!traj.converged);
        let expected = exp_limiting_price(&m.theta, m.beta, &m.beliefs, &m.alphas)?;
        worst = worst.max(traj.final_price(&m.market)?.max_abs_diff(&expected));
    }
    verdict(
        unconverged == 0 && worst <= 1e-6 && slowest < Duration::from_secs(1),
        format!(
            "20 markets, max price error {worst:.2e} (tol 1e-6), slowest run {:.1} ms, {unconverged} unconverged",
            slowest.as_secs_f64() * 1e3
        ),
    )
}

/// Replays a trajectory, yielding `(state before, snapshot)` for every step.
fn replay<'a>(
    market: &Market,
    traj: &'a Trajectory,
) -> Result<Vec<(MarketState, &'a mumarket_core::trading::Snapshot)>> {
    let mut state = market.initial_state()?;
    let mut out = Vec::with_capacity(traj.snapshots.len());
    for s in &traj.snapshots {
        let next = state.apply_trade(s.trader, &TradeDelta::new(s.z.clone())?)?;
        out.push((state, s));
        state = next;
    }
    Ok(out)
}

fn check_exp_update(opts: &VerifyOptions) -> Result<Verdict> {
    let mut worst = 0.0f64;
    let mut trades = 0usize;
    for m in exp_suite(opts.seed)? {
        let traj = run(&m.market, &TradingSequence::identity(m.alphas.len()), &opts.run)?;
        for (before, snap) in replay(&m.market, &traj)? {
            let p = instantaneous_price(&m.market.maker.utility, &before.maker)?;
            let j = snap.trader;
            let expected = exp_price_update(&p, &before.traders[j], &m.beliefs[j], m.alphas[j], m.beta)?;
            worst = worst.max(diff(&snap.price, expected.as_slice()));
            trades += 1;
        }
    }
    verdict(
        worst <= 1e-10,
        format!("{trades} trades, max deviation {worst:.2e} (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------------------
// 3

fn sequences(j: usize, seed: u64) -> Vec<(String, TradingSequence)> {
    let mut v = vec![
        ("round robin".to_string(), TradingSequence::identity(j)),
        ("reversed".to_string(), TradingSequence::reversed(j)),
    ];
    for k in 1..=3 {
        let s = seed.wrapping_add(k);
        v.push((format!("random {s}"), TradingSequence::random(s)));
    }
    v
}

fn price_spread(market: &Market, seed: u64, run_opts: &RunOptions) -> Result<f64> {
    let prices = sequences(market.traders.len(), seed)
        .into_iter()
        .map(|(_, seq)| run(market, &seq, run_opts)?.final_price(market))
        .collect::<Result<Vec<_>>>()?;
    Ok(prices
        .iter()
        .flat_map(|a| prices.iter().map(move |b| a.max_abs_diff(b)))
        .fold(0.0, f64::max))
}

fn check_sequence_invariance(opts: &VerifyOptions) -> Result<Verdict> {
    let mut rng = SplitMix64::new(opts.seed ^ 0x3);
    let exp = [exp_market(&mut rng, 3, 4)?, exp_market(&mut rng, 4, 6)?];
    let mut worst_exp = 0.0f64;
    for m in &exp {
        worst_exp = worst_exp.max(price_spread(&m.market, opts.seed, &opts.run)?);
    }
    let mut worst_rm = 0.0f64;
    for m in entropy_suite(opts.seed)? {
        worst_rm = worst_rm.max(price_spread(&m.market, opts.seed, &opts.run)?);
    }
    verdict(
        worst_exp <= 1e-6 && worst_rm <= 1e-6,
        format!(
            "5 sequences each; exponential spread {worst_exp:.2e}, relative-entropy spread {worst_rm:.2e} (tol 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4

fn check_pareto(opts: &VerifyOptions) -> Result<Verdict> {
    let mut worst_kkt = 0.0f64;
    let mut worst_alloc = 0.0f64;
    let mut runs = 0;
    let mut skipped = 0;
    for (_, market, seq) in separable_suite(opts.seed)? {
        let traj = run(&market, &seq, &opts.run)?;
        if !traj.converged {
            skipped += 1;
            continue;
        }
        runs += 1;
        let report = convergence_report(&market, &traj)?;
        worst_kkt = worst_kkt.max(report.max_kkt_residual);
        let omega: Vec<f64> = report.zetas.iter().map(|z| 1.0 / z).collect();
        let sol = solve_pareto(&market, &omega)?;
        for (a, b) in sol.x_star.iter().zip(&traj.final_state.traders) {
            worst_alloc = worst_alloc.max(diff(a.as_slice(), b.as_slice()));
        }
    }
    // Risk-measure limits are Pareto optimal only up to cash transfers.
    let mut worst_cash = 0.0f64;
    for m in entropy_suite(opts.seed)? {
        let traj = run(&m.market, &TradingSequence::identity(m.alphas.len()), &opts.run)?;
        if !traj.converged {
            skipped += 1;
            continue;
        }
        runs += 1;
        worst_kkt = worst_kkt.max(convergence_report(&m.market, &traj)?.max_kkt_residual);
        let eq = risk_measure_equilibrium(&m.market)?;
        for (a, b) in eq.x_star.iter().zip(&traj.final_state.traders) {
            let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
            let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            worst_cash = worst_cash.max(hi - lo);
        }
    }
    verdict(
        skipped == 0 && worst_kkt <= 1e-7 && worst_alloc <= 1e-6 && worst_cash <= 1e-6,
        format!(
            "{runs} converged runs ({skipped} not converged); max KKT residual {worst_kkt:.2e} (tol 1e-7), \
             allocation error {worst_alloc:.2e}, risk-measure error modulo cash {worst_cash:.2e} (tol 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5, 6

fn check_aggregation(opts: &VerifyOptions) -> Result<Verdict> {
    let mut rng = SplitMix64::new(opts.seed ^ 0x5);
    let (mut worst_agg, mut worst_exp) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let n = 2 + rng.index(4);
        let j = 1 + rng.index(6);
        let m = entropy_market(&mut rng, n, j)?;
        let eq = risk_measure_equilibrium(&m.market)?;
        let penalties: Vec<PenaltySpec> = std::iter::once(&m.market.maker)
            .chain(&m.market.traders)
            .map(|a| match &a.utility {
                UtilitySpec::RiskMeasure { penalty } => penalty.clone(),
                _ => unreachable!("entropy markets hold risk-measure agents"),
            })
            .collect();
        let agg = aggregate_penalty_price(&penalties)?;
        let geo = exp_limiting_price(&m.theta, m.beta, &m.beliefs, &m.alphas)?;
        worst_agg = worst_agg.max(eq.price.max_abs_diff(&agg.price));
        worst_exp = worst_exp.max(eq.price.max_abs_diff(&geo));
    }
    verdict(
        worst_agg <= 1e-7 && worst_exp <= 1e-6,
        format!(
            "10 instances; vs penalty aggregation {worst_agg:.2e} (tol 1e-7), vs geometric mean {worst_exp:.2e} (tol 1e-6)"
        ),
    )
}

fn check_power_forms(opts: &VerifyOptions) -> Result<Verdict> {
    let mut rng = SplitMix64::new(opts.seed ^ 0x6);
    let (mut err_plain, mut err_dual) = (0.0f64, 0.0f64);
    let mut kinds = Vec::new();
    let mut instances = 0;
    for gamma in [-1.0, -0.5, 0.5] {
        for _ in 0..3 {
            let n = 3 + rng.index(2);
            let theta = belief(&mut rng, n);
            let beliefs: Vec<SimplexVector> = (0..3).map(|_| belief(&mut rng, n)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.uniform(0.5, 2.0)).collect();
            let all: Vec<&SimplexVector> = std::iter::once(&theta).chain(&beliefs).collect();
            // Σ_k (h_k/γ) Σ_i q_i^γ b_{k,i}^{1−γ}, straight from the definition
            let objective = |q: &[f64]| -> f64 {
                all.iter()
                    .zip(&h)
                    .map(|(b, hk)| {
                        hk / gamma * q.iter().zip(b.iter()).map(|(qi, bi)| qi.powf(gamma) * bi.powf(1.0 - gamma)).sum::<f64>()
                    })
                    .sum()
            };
            let best = maximize_on_simplex(objective, n, &OracleOptions::default());
            let plain = power_mean_price(&theta, &beliefs, &h, gamma)?;
            let dual = dual_power_mean_price(&theta, &beliefs, &h, gamma)?;
            err_plain = err_plain.max(diff(&best.q, plain.as_slice()));
            err_dual = err_dual.max(diff(&best.q, dual.as_slice()));
            let penalties = all
                .iter()
                .zip(&h)
                .map(|(b, hk)| PenaltySpec::power((*b).clone(), gamma, *hk))
                .collect::<Result<Vec<_>>>()?;
            kinds.push(aggregate_penalty_price(&penalties)?.kind);
            instances += 1;
        }
    }
    let matching = match (err_dual <= 1e-6, err_plain <= 1e-6) {
        (true, true) => "both forms",
        (true, false) => "dual_power_mean_price (exponent 1−γ inside, 1/(1−γ) outside)",
        (false, true) => "power_mean_price (exponent 1/(1−γ) inside, 1−γ outside)",
        (false, false) => "neither form",
    };
    let all_max = kinds.iter().all(|k| *k == StationaryKind::Maximum);
    verdict(
        err_dual <= 1e-6 || err_plain <= 1e-6,
        format!(
            "{instances} instances at gamma -1, -0.5, 0.5; brute-force optimum matches {matching}; \
             dual_power_mean_price error {err_dual:.2e}, power_mean_price error {err_plain:.2e}; \
             stationary point is {} of the penalty sum",
            if all_max { "a maximum" } else { "not always a maximum" }
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn check_conservation(opts: &VerifyOptions) -> Result<Verdict> {
    let mut markets: Vec<(Market, TradingSequence)> = separable_suite(opts.seed)?
        .into_iter()
        .map(|(_, m, s)| (m, s))
        .collect();
    for m in entropy_suite(opts.seed)? {
        let j = m.alphas.len();
        markets.push((m.market, TradingSequence::random(opts.seed.wrapping_add(j as u64))));
    }
    let (mut worst_wealth, mut worst_util) = (0.0f64, 0.0f64);
    let mut snapshots = 0;
    for (market, seq) in &markets {
        let traj = run(market, seq, &opts.run)?;
        let target = market.maker_target()?;
        for (before, snap) in replay(market, &traj)? {
            let after = before.apply_trade(snap.trader, &TradeDelta::new(snap.z.clone())?)?;
            worst_wealth = worst_wealth.max(after.total_wealth_residual());
            let u = market.maker.utility.value(&after.maker)?;
            worst_util = worst_util
                .max((u - target).abs())
                .max((snap.market_utility - target).abs());
            snapshots += 1;
        }
    }
    verdict(
        worst_wealth <= 1e-9 && worst_util <= 1e-9,
        format!(
            "{} runs, {snapshots} snapshots; max wealth residual {worst_wealth:.2e}, max |U - U0| {worst_util:.2e} (tol 1e-9)",
            markets.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8, 9

/// One utility of every family with random parameters on `n` outcomes.
fn family_samples(rng: &mut SplitMix64, n: usize) -> Result<Vec<UtilitySpec>> {
    Ok(vec![
        UtilitySpec::exponential(belief(rng, n), rng.uniform(0.2, 3.0))?,
        UtilitySpec::hara(belief(rng, n), rng.uniform(0.5, 2.0), rng.uniform(0.0, 1.0), rng.uniform(-1.0, 0.9))?,
        UtilitySpec::crra(belief(rng, n), rng.uniform(0.1, 0.9))?,
        UtilitySpec::risk_measure(PenaltySpec::relative_entropy(belief(rng, n), rng.uniform(0.2, 3.0))?)?,
        UtilitySpec::composite_entropic_log(belief(rng, n), rng.uniform(0.2, 3.0), rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0))?,
    ])
}

const FAMILIES: [&str; 5] = ["exponential", "hara", "crra", "risk_measure", "composite_entropic_log"];

fn check_instantaneous(opts: &VerifyOptions) -> Result<Verdict> {
    let mut rng = SplitMix64::new(opts.seed ^ 0x8);
    let eps = 1e-6;
    let mut worst = [0.0f64; 5];
    for _ in 0..100 {
        let n = 2 + rng.index(4);
        let scale = rng.uniform(1.0, 5.0);
        for (f, u) in family_samples(&mut rng, n)?.iter().enumerate() {
            let y = WealthVector::new((0..n).map(|_| scale * rng.uniform(0.5, 1.5)).collect())?;
            let w0 = certainty_equivalent(u, &y)?;
            let p = instantaneous_price(u, &y)?;
            for i in 0..n {
                let mut dq = vec![0.0; n];
                dq[i] = eps;
                let fd = price_order(u, &y, w0, &dq)?.delta_w / eps;
                worst[f] = worst[f].max((fd - p[i]).abs());
            }
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let per: Vec<String> = FAMILIES.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    verdict(
        max <= 1e-4,
        format!("100 states per family, eps 1e-6; max gap {} (tol 1e-4)", per.join(", ")),
    )
}

fn check_mechanism(opts: &VerifyOptions) -> Result<Verdict> {
    let mut rng = SplitMix64::new(opts.seed ^ 0x9);
    let w0 = 10.0;
    let (mut worst_tele, mut worst_shift) = (0.0f64, 0.0f64);
    let mut orders = 0;
    for _ in 0..4 {
        let n = 2 + rng.index(4);
        for u in family_samples(&mut rng, n)? {
            let mut y = WealthVector::uniform(n, w0);
            let mut q = vec![0.0; n];
            let mut cost = cost_function_value(&u, w0, &q)?;
            for _ in 0..10 {
                let dq: Vec<f64> = (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect();
                let quote = price_order(&u, &y, w0, &dq)?;
                for (a, b) in q.iter_mut().zip(&dq) {
                    *a += b;
                }
                let next = cost_function_value(&u, w0, &q)?;
                worst_tele = worst_tele.max((next - cost - quote.delta_w).abs());
                cost = next;
                y = quote.post_y;
                orders += 1;
            }
            for _ in 0..5 {
                let base: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let t = rng.uniform(-2.0, 2.0);
                let shifted: Vec<f64> = base.iter().map(|v| v + t).collect();
                let gap = cost_function_value(&u, w0, &shifted)? - cost_function_value(&u, w0, &base)? - t;
                worst_shift = worst_shift.max(gap.abs());
            }
        }
    }
    let mut violations = 0;
    let mut worst_regret = f64::NEG_INFINITY;
    for k in 0..1000 {
        let n = 2 + rng.index(4);
        let u = match k % 3 {
            0 => UtilitySpec::exponential(belief(&mut rng, n), rng.uniform(0.2, 3.0))?,
            1 => UtilitySpec::hara(belief(&mut rng, n), 1.0, rng.uniform(0.0, 1.0), rng.uniform(-1.0, 0.9))?,
            _ => UtilitySpec::crra(belief(&mut rng, n), rng.uniform(0.1, 0.9))?,
        };
        let p = belief(&mut rng, n);
        let r = belief(&mut rng, n);
        let sp = induced_scoring_rule(&u, w0, &p)?;
        let sr = induced_scoring_rule(&u, w0, &r)?;
        let truthful: f64 = p.iter().zip(&sp).map(|(a, b)| a * b).sum();
        let misreport: f64 = p.iter().zip(&sr).map(|(a, b)| a * b).sum();
        let regret = misreport - truthful;
        worst_regret = worst_regret.max(regret);
        if regret > 1e-9 * (1.0 + truthful.abs()) {
            violations += 1;
        }
    }
    verdict(
        worst_tele <= 1e-8 && worst_shift <= 1e-10 && violations == 0,
        format!(
            "{orders} sequential orders, telescoping gap {worst_tele:.2e} (tol 1e-8); translation gap {worst_shift:.2e} (tol 1e-10); \
             1000 properness samples, {violations} violations, max misreport gain {worst_regret:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 10, 11

fn check_example(opts: &VerifyOptions) -> Result<Verdict> {
    let rows = reproduce::table2(&TABLE2_THETAS, &opts.repro())?;
    let best = reproduce::best_fit(&rows).expect("row 1 present");
    let s2 = rows
        .iter()
        .find(|r| r.row == 1 && r.sequence == "S2" && r.theta == best.theta)
        .expect("S2 row present");
    let (_, _, _, _, v1, _, v2) = TABLE2_PUBLISHED[0];
    let sign = |x: f64| x.partial_cmp(&0.0);
    let asymmetry = sign(best.utilities[0] - s2.utilities[0]) == sign(v1[0] - v2[0])
        && sign(best.utilities[1] - s2.utilities[1]) == sign(v1[1] - v2[1]);
    let price_ok = best.price_error <= 0.005;
    let p = &best.price;
    verdict(
        price_ok && asymmetry,
        format!(
            "best theta ({:.3}, {:.3}, {:.3}) gives S1 price ({:.3}, {:.3}, {:.3}), error {:.4} (tol 0.005); \
             utility asymmetry sign {}; {}",
            best.theta[0], best.theta[1], best.theta[2], p[0], p[1], p[2], best.price_error,
            if asymmetry { "reproduced" } else { "not reproduced" },
            if price_ok && asymmetry { "match" } else { "open question: no candidate belief reproduces the published row" }
        ),
    )
}

fn check_heuristics(opts: &VerifyOptions) -> Result<Verdict> {
    let start = Instant::now();
    let row = reproduce::table3_row(&TABLE3_ROWS[2], 100, opts.seed, &opts.repro())?;
    let sweep = reproduce::batch(100, opts.seed, &opts.repro(), |s| reproduce::fig2_spec(-0.5, 0.0, s))?;
    let elapsed = start.elapsed();
    let passed = row.mean_delta_x <= 0.1
        && row.mean_kld_dagger <= 1e-3
        && sweep.mean_kld_hara < sweep.mean_kld_baseline
        && row.non_converged + sweep.non_converged == 0
        && elapsed < Duration::from_secs(180);
    verdict(
        passed,
        format!(
            "J=10 alpha=0.3 gamma=0.3: mean D {:.2e} (tol 1e-3), mean dx {:.4} (tol 0.1); \
             gamma=-0.5: KLD formula {:.2e} < baseline {:.2e}; {} unconverged; {:.1} s (limit 180 s)",
            row.mean_kld_dagger,
            row.mean_delta_x,
            sweep.mean_kld_hara,
            sweep.mean_kld_baseline,
            row.non_converged + sweep.non_converged,
            elapsed.as_secs_f64()
        ),
    )
}
