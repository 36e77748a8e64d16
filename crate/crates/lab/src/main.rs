use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mumarket_core::equilibrium::{aggregate_penalty_price, frontier_point, two_trader_weights};
use mumarket_core::formulas::{
    exp_limiting_price, hara_approx_price, omega_dagger, risk_adjusted_wealth, wealth_weighted_price,
};
use mumarket_core::pricing::{instantaneous_price, price_order};
use mumarket_core::trading::{convergence_report, run, SequenceKind};
use mumarket_core::{SimplexVector, UtilitySpec, WealthVector};
use mumarket_lab::config::{MarketConfig, OutputFormat};
use mumarket_lab::reproduce::{self, ReproOptions, TABLE2_THETAS, TABLE3_ROWS};
use mumarket_lab::verify::{self, VerifyOptions};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CHECKS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "mumarket", version, about = "Utility-based market maker experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trading process for a configured market.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory file; defaults to `output.path` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_format)]
        format: Option<OutputFormat>,
        /// Seed for a random arrival sequence.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_rounds: Option<u64>,
        /// Trades at or below this size count as no trade.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Quote an order against the market maker's initial position.
    Price {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated quantities, one per security.
        #[arg(long, allow_hyphen_values = true)]
        order: String,
    },
    /// Sweep Pareto weights and print trader utilities and prices as CSV.
    Frontier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 19)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a closed-form price or weight formula for a configured market.
    Formulas {
        kind: FormulaKind,
        #[arg(long)]
        config: PathBuf,
    },
    /// Regenerate a table or figure as CSV.
    Reproduce {
        target: Target,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulations per batch.
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long)]
        max_rounds: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Run the acceptance checks; exit 3 if a binding check fails.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulaKind {
    ExpLimit,
    HaraApprox,
    WealthWeighted,
    OmegaDagger,
    Aggregate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Table2,
    Table3,
    Fig2,
}

fn parse_format(s: &str) -> std::result::Result<OutputFormat, String> {
    s.parse()
}

fn load(path: &Path) -> Result<MarketConfig> {
    MarketConfig::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(
    config: &Path,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
    seed: Option<u64>,
    max_rounds: Option<u64>,
    eps: Option<f64>,
) -> Result<bool> {
    let mut cfg = load(config)?;
    if let Some(n) = max_rounds {
        cfg.sequence.max_rounds = n;
    }
    if let Some(e) = eps {
        cfg.tolerances.trade_eps = e;
    }
    if let (Some(s), SequenceKind::Random { seed }) = (seed, &mut cfg.sequence.kind) {
        *seed = s;
    }
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    let market = cfg.market()?;
    let traj = run(&market, &cfg.sequence, &cfg.run_options())?;
    let price = traj.final_price(&market)?;
    let report = convergence_report(&market, &traj)?;
    let format = format
        .or(cfg.output.as_ref().map(|o| o.format))
        .unwrap_or_default();
    let path = out.or_else(|| cfg.output.as_ref().map(|o| PathBuf::from(&o.path)));
    if let Some(path) = path {
        let text = match format {
            OutputFormat::Csv => traj.to_csv(),
            OutputFormat::Json => serde_json::to_string_pretty(&traj.to_json())?,
        };
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("converged: {}", traj.converged);
    println!("rounds_used: {}", traj.rounds_used);
    println!("final_price: {}", join(price.as_slice()));
    println!("max_kkt_residual: {:e}", report.max_kkt_residual);
    Ok(traj.converged)
}

fn price(config: &Path, order: &str) -> Result<()> {
    let cfg = load(config)?;
    let dq = order
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad order entry `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    if dq.len() != cfg.securities {
        bail!("order has {} entries, market has {} securities", dq.len(), cfg.securities);
    }
    let u = &cfg.market_maker.utility;
    let y = WealthVector::uniform(cfg.securities, cfg.market_maker.w0);
    let quote = price_order(u, &y, cfg.market_maker.w0, &dq)?;
    println!("delta_w: {}", quote.delta_w);
    println!("post_price: {}", join(instantaneous_price(u, &quote.post_y)?.as_slice()));
    Ok(())
}

fn frontier(config: &Path, points: usize, out: Option<&Path>) -> Result<()> {
    let cfg = load(config)?;
    let market = cfg.market()?;
    let j = market.traders.len();
    let weights = if j == 2 {
        two_trader_weights(points)
    } else {
        (1..=points)
            .map(|k| {
                let s = k as f64 / (points + 1) as f64;
                std::iter::once(s).chain(std::iter::repeat((1.0 - s) / (j - 1) as f64).take(j - 1)).collect()
            })
            .collect()
    };
    let rows = reproduce::par_map(weights, |w| frontier_point(&market, &w))
        .into_iter()
        .collect::<mumarket_core::Result<Vec<_>>>()?;
    let mut text = String::new();
    let header: Vec<String> = (1..=j)
        .map(|k| format!("omega_{k}"))
        .chain((1..=j).map(|k| format!("V_{k}")))
        .chain((1..=cfg.securities).map(|i| format!("p_{i}")))
        .collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for r in rows {
        let all: Vec<f64> = r.omega.iter().chain(&r.trader_utilities).chain(&r.price).cloned().collect();
        text.push_str(&join(&all));
        text.push('\n');
    }
    write_or_print(out, &text)
}

fn beliefs_of(cfg: &MarketConfig) -> (SimplexVector, Vec<SimplexVector>) {
    (
        cfg.market_maker.utility.belief().clone(),
        cfg.traders.iter().map(|t| t.utility.belief().clone()).collect(),
    )
}

fn hara_params(u: &UtilitySpec) -> Result<(f64, f64, f64)> {
    match u {
        UtilitySpec::Hara { a, b, gamma, .. } => Ok((*a, *b, *gamma)),
        other => bail!("formula needs HARA utilities, found {}", other.family_name()),
    }
}

fn formulas(kind: FormulaKind, config: &Path) -> Result<()> {
    let cfg = load(config)?;
    let values: Vec<f64> = match kind {
        FormulaKind::ExpLimit => {
            let beta = |u: &UtilitySpec| match u {
                UtilitySpec::Exponential { beta, .. } => Ok(*beta),
                other => Err(anyhow!("exp-limit needs exponential utilities, found {}", other.family_name())),
            };
            let (theta, beliefs) = beliefs_of(&cfg);
            let alphas = cfg.traders.iter().map(|t| beta(&t.utility)).collect::<Result<Vec<_>>>()?;
            exp_limiting_price(&theta, beta(&cfg.market_maker.utility)?, &beliefs, &alphas)?
                .as_slice()
                .to_vec()
        }
        FormulaKind::HaraApprox | FormulaKind::WealthWeighted => {
            let (a0, b0, gamma) = hara_params(&cfg.market_maker.utility)?;
            let (theta, beliefs) = beliefs_of(&cfg);
            let gamma = if matches!(kind, FormulaKind::WealthWeighted) { 0.0 } else { gamma };
            let w_hat = cfg
                .traders
                .iter()
                .map(|t| {
                    let (a, b, _) = hara_params(&t.utility)?;
                    Ok(risk_adjusted_wealth(t.w0, a, b, gamma))
                })
                .collect::<Result<Vec<_>>>()?;
            let w_hat0 = risk_adjusted_wealth(cfg.market_maker.w0, a0, b0, gamma);
            let p = if matches!(kind, FormulaKind::WealthWeighted) {
                wealth_weighted_price(&theta, &beliefs, w_hat0, &w_hat)?
            } else {
                hara_approx_price(&theta, &beliefs, w_hat0, &w_hat, gamma)?
            };
            p.as_slice().to_vec()
        }
        FormulaKind::OmegaDagger => cfg
            .traders
            .iter()
            .map(|t| {
                let (a, b, g) = hara_params(&t.utility)?;
                Ok(omega_dagger(&[a], &[b], &[t.w0], g)?[0])
            })
            .collect::<Result<Vec<_>>>()?,
        FormulaKind::Aggregate => {
            let penalties = std::iter::once(&cfg.market_maker.utility)
                .chain(cfg.traders.iter().map(|t| &t.utility))
                .map(|u| match u {
                    UtilitySpec::RiskMeasure { penalty } => Ok(penalty.clone()),
                    other => Err(anyhow!("aggregate needs risk-measure utilities, found {}", other.family_name())),
                })
                .collect::<Result<Vec<_>>>()?;
            let agg = aggregate_penalty_price(&penalties)?;
            println!("stationary_point: {:?}", agg.kind);
            agg.price.as_slice().to_vec()
        }
    };
    println!("{}", join(&values));
    Ok(())
}

fn reproduce_target(
    target: Target,
    out: &Path,
    seed: u64,
    runs: usize,
    max_rounds: Option<u64>,
    eps: Option<f64>,
) -> Result<()> {
    let mut opts = ReproOptions::default();
    if let Some(e) = eps {
        opts.run.trade_eps = e;
    }
    if let Some(n) = max_rounds {
        opts.max_rounds = n;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (file, text) = match target {
        Target::Table2 => {
            let rows = reproduce::table2(&TABLE2_THETAS, &opts)?;
            if let Some(best) = reproduce::best_fit(&rows) {
                println!(
                    "best theta {:?}: row 1 S1 price {} (max abs error {:.4})",
                    best.theta,
                    join(&best.price),
                    best.price_error
                );
            }
            ("table2.csv", reproduce::table2_csv(&rows))
        }
        Target::Table3 => {
            let summaries = reproduce::table3(&TABLE3_ROWS, runs, seed, &opts)?;
            for (s, b) in TABLE3_ROWS.iter().zip(&summaries) {
                println!(
                    "J={} alpha={} D={:.2e} dx={:.4} var={:.2e} ({:.1} s)",
                    s.traders,
                    s.alpha,
                    b.mean_kld_dagger,
                    b.mean_delta_x,
                    b.var_delta_x,
                    b.elapsed.as_secs_f64()
                );
            }
            ("table3.csv", reproduce::table3_csv(&TABLE3_ROWS, &summaries))
        }
        Target::Fig2 => {
            let points = reproduce::fig2(&reproduce::fig2_gammas(), runs, seed, &opts)?;
            ("fig2.csv", reproduce::fig2_csv(&points))
        }
    };
    let path = out.join(file);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<u8> = match cli.command {
        Command::Simulate {
            config,
            out,
            format,
            seed,
            max_rounds,
            eps,
        } => simulate(&config, out, format, seed, max_rounds, eps)
            .map(|converged| if converged { 0 } else { EXIT_NOT_CONVERGED }),
        Command::Price { config, order } => price(&config, &order).map(|_| 0),
        Command::Frontier { config, points, out } => frontier(&config, points, out.as_deref()).map(|_| 0),
        Command::Formulas { kind, config } => formulas(kind, &config).map(|_| 0),
        Command::Reproduce {
            target,
            out,
            seed,
            runs,
            max_rounds,
            eps,
        } => reproduce_target(target, &out, seed, runs, max_rounds, eps).map(|_| 0),
        Command::Verify { seed, eps } => {
            let mut opts = VerifyOptions::default();
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(e) = eps {
                opts.run.trade_eps = e;
            }
            let results = verify::run_all(&opts);
            print!("{}", verify::table(&results));
            Ok(if verify::all_binding_pass(&results) { 0 } else { EXIT_CHECKS_FAILED })
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
