//! The repeated trading process: traders arrive according to a sequence,
//! respond optimally, and the market maker absorbs every trade.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::pricing::instantaneous_price;
use crate::rng::SplitMix64;
use crate::trader::{best_response_with, kkt_residual, TraderOptions};
use crate::types::{MarketState, SimplexVector, WealthVector};
use crate::utility::UtilitySpec;

pub const DEFAULT_MAX_ROUNDS: u64 = 100_000;
pub const DEFAULT_TRADE_EPS: f64 = 1e-10;

/// Consecutive small draws per trader required by a random sequence.
const RANDOM_STREAK_PER_TRADER: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub utility: UtilitySpec,
    pub initial_wealth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub maker: Agent,
    pub traders: Vec<Agent>,
}

impl Market {
    pub fn new(maker: Agent, traders: Vec<Agent>) -> Result<Self> {
        let m = Market { maker, traders };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.maker.utility.outcomes();
        if self.traders.is_empty() {
            return Err(MarketError::InvalidInput("a market needs at least one trader".into()));
        }
        self.maker.utility.validate()?;
        if !(self.maker.initial_wealth > 0.0 && self.maker.initial_wealth.is_finite()) {
            return Err(MarketError::InvalidInput(format!(
                "market maker wealth must be > 0, got {}",
                self.maker.initial_wealth
            )));
        }
        for (j, t) in self.traders.iter().enumerate() {
            t.utility.validate()?;
            if t.utility.outcomes() != n {
                return Err(MarketError::InvalidInput(format!(
                    "trader {} has {} outcomes, market maker has {n}",
                    j + 1,
                    t.utility.outcomes()
                )));
            }
            if !(t.initial_wealth > 0.0 && t.initial_wealth.is_finite()) {
                return Err(MarketError::InvalidInput(format!(
                    "trader {} wealth must be > 0, got {}",
                    j + 1,
                    t.initial_wealth
                )));
            }
            if !t
                .utility
                .domain_contains(&WealthVector::uniform(n, t.initial_wealth))
            {
                return Err(MarketError::Domain(format!(
                    "trader {} starts outside its utility domain",
                    j + 1
                )));
            }
        }
        if !self
            .maker
            .utility
            .domain_contains(&WealthVector::uniform(n, self.maker.initial_wealth))
        {
            return Err(MarketError::Domain(
                "market maker starts outside its utility domain".into(),
            ));
        }
        Ok(())
    }

    pub fn outcomes(&self) -> usize {
        self.maker.utility.outcomes()
    }

    pub fn initial_state(&self) -> Result<MarketState> {
        let w: Vec<f64> = self.traders.iter().map(|t| t.initial_wealth).collect();
        MarketState::initial(self.outcomes(), self.maker.initial_wealth, &w)
    }

    /// `U(W0·e)`
    pub fn maker_target(&self) -> Result<f64> {
        self.maker.utility.value(&WealthVector::uniform(
            self.outcomes(),
            self.maker.initial_wealth,
        ))
    }
}

/// Arrival order of traders. Round-robin orders are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceKind {
    RoundRobin { order: Vec<usize> },
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingSequence {
    #[serde(flatten)]
    pub kind: SequenceKind,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
}

fn default_max_rounds() -> u64 {
    DEFAULT_MAX_ROUNDS
}

impl TradingSequence {
    pub fn round_robin(order: Vec<usize>) -> Self {
        TradingSequence {
            kind: SequenceKind::RoundRobin { order },
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    /// Traders `1..=J` in order.
    pub fn identity(traders: usize) -> Self {
        Self::round_robin((1..=traders).collect())
    }

    pub fn reversed(traders: usize) -> Self {
        Self::round_robin((1..=traders).rev().collect())
    }

    pub fn random(seed: u64) -> Self {
        TradingSequence {
            kind: SequenceKind::Random { seed },
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_max_rounds(mut self, max_rounds: u64) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn validate(&self, traders: usize) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(MarketError::InvalidInput("max_rounds must be positive".into()));
        }
        if let SequenceKind::RoundRobin { order } = &self.kind {
            let mut seen = vec![false; traders];
            for &j in order {
                if j == 0 || j > traders || seen[j - 1] {
                    return Err(MarketError::InvalidInput(format!(
                        "round-robin order {order:?} is not a permutation of 1..={traders}"
                    )));
                }
                seen[j - 1] = true;
            }
            if order.len() != traders {
                return Err(MarketError::InvalidInput(format!(
                    "round-robin order {order:?} is not a permutation of 1..={traders}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// A trade with `‖z‖∞` at or below this counts as no trade.
    pub trade_eps: f64,
    pub trader: TraderOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            trade_eps: DEFAULT_TRADE_EPS,
            trader: TraderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: u64,
    /// 0-based trader index.
    pub trader: usize,
    pub z: Vec<f64>,
    pub price: Vec<f64>,
    pub trader_utilities: Vec<f64>,
    pub market_utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_state: MarketState,
    pub converged: bool,
    /// Full sweeps (round robin) or draws divided by `J`, rounded up (random).
    pub rounds_used: u64,
    pub maker_target: f64,
}

impl Trajectory {
    pub fn final_price(&self, market: &Market) -> Result<SimplexVector> {
        instantaneous_price(&market.maker.utility, &self.final_state.maker)
    }

    pub fn to_csv(&self) -> String {
        let (n, j) = (self.final_state.outcomes(), self.final_state.trader_count());
        let mut out = String::from("t,trader");
        for prefix in ["z", "p"] {
            for i in 1..=n {
                let _ = write!(out, ",{prefix}_{i}");
            }
        }
        for k in 1..=j {
            let _ = write!(out, ",V_{k}");
        }
        out.push_str(",U\n");
        for s in &self.snapshots {
            let _ = write!(out, "{},{}", s.t, s.trader + 1);
            for v in s.z.iter().chain(&s.price).chain(&s.trader_utilities) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", s.market_utility);
        }
        out
    }

    pub fn to_json(&self) -> json::Document<'_> {
        json::Document(self)
    }
}

/// Serializable view of a trajectory whose rows mirror the CSV columns.
pub mod json {
    use serde::ser::{SerializeMap, SerializeSeq};
    use serde::{Serialize, Serializer};

    use super::{Snapshot, Trajectory};

    pub struct Document<'a>(pub &'a Trajectory);

    struct Row<'a>(&'a Snapshot);

    impl Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let mut m = s.serialize_map(Some(6))?;
            m.serialize_entry("t", &self.0.t)?;
            m.serialize_entry("trader", &(self.0.trader + 1))?;
            m.serialize_entry("z", &self.0.z)?;
            m.serialize_entry("p", &self.0.price)?;
            m.serialize_entry("V", &self.0.trader_utilities)?;
            m.serialize_entry("U", &self.0.market_utility)?;
            m.end()
        }
    }

    struct Rows<'a>(&'a [Snapshot]);

    impl Serialize for Rows<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(self.0.len()))?;
            for r in self.0 {
                seq.serialize_element(&Row(r))?;
            }
            seq.end()
        }
    }

    impl Serialize for Document<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let t = self.0;
            let mut m = s.serialize_map(Some(6))?;
            m.serialize_entry("converged", &t.converged)?;
            m.serialize_entry("rounds_used", &t.rounds_used)?;
            m.serialize_entry("maker_target", &t.maker_target)?;
            m.serialize_entry("final_maker", t.final_state.maker.as_slice())?;
            let traders: Vec<&[f64]> = t.final_state.traders.iter().map(|x| x.as_slice()).collect();
            m.serialize_entry("final_traders", &traders)?;
            m.serialize_entry("snapshots", &Rows(&t.snapshots))?;
            m.end()
        }
    }
}

/// Runs the trading process until no trader wants to trade or the round
/// budget is exhausted.
pub fn run(market: &Market, sequence: &TradingSequence, opts: &RunOptions) -> Result<Trajectory> {
    market.validate()?;
    let j_count = market.traders.len();
    sequence.validate(j_count)?;
    let maker = &market.maker.utility;
    let w0 = market.maker.initial_wealth;
    let mut state = market.initial_state()?;
    let maker_target = market.maker_target()?;
    let mut utilities: Vec<f64> = market
        .traders
        .iter()
        .zip(&state.traders)
        .map(|(a, x)| a.utility.value(x))
        .collect::<Result<_>>()?;
    let mut snapshots = Vec::new();

    let mut step = |state: &mut MarketState, j: usize| -> Result<f64> {
        let agent = &market.traders[j].utility;
        let t = state.t;
        let wrap = move |e: MarketError| MarketError::Trade {
            t,
            trader: j + 1,
            source: Box::new(e),
        };
        let br = best_response_with(
            agent,
            maker,
            &state.traders[j],
            &state.maker,
            w0,
            &opts.trader,
        )
        .map_err(wrap)?;
        let next = state.apply_trade(j, &br.z).map_err(wrap)?;
        *state = next;
        utilities[j] = agent.value(&state.traders[j]).map_err(wrap)?;
        let price = instantaneous_price(maker, &state.maker).map_err(wrap)?;
        let market_utility = maker.value(&state.maker).map_err(wrap)?;
        snapshots.push(Snapshot {
            t: state.t,
            trader: j,
            z: br.z.as_slice().to_vec(),
            price: price.as_slice().to_vec(),
            trader_utilities: utilities.clone(),
            market_utility,
        });
        Ok(br.z.max_abs())
    };

    let mut converged = false;
    let mut rounds_used = 0;
    match &sequence.kind {
        SequenceKind::RoundRobin { order } => {
            for round in 0..sequence.max_rounds {
                let mut quiet = true;
                for &j in order {
                    if step(&mut state, j - 1)? > opts.trade_eps {
                        quiet = false;
                    }
                }
                rounds_used = round + 1;
                if quiet {
                    converged = true;
                    break;
                }
            }
        }
        SequenceKind::Random { seed } => {
            let mut rng = SplitMix64::new(*seed);
            let needed = RANDOM_STREAK_PER_TRADER * j_count;
            let mut streak = 0usize;
            let mut covered = HashSet::new();
            let budget = sequence.max_rounds.saturating_mul(j_count as u64);
            let mut draws = 0u64;
            while draws < budget {
                let j = rng.index(j_count);
                draws += 1;
                if step(&mut state, j)? > opts.trade_eps {
                    streak = 0;
                    covered.clear();
                } else {
                    streak += 1;
                    covered.insert(j);
                }
                if streak >= needed && covered.len() == j_count {
                    converged = true;
                    break;
                }
            }
            rounds_used = draws.div_ceil(j_count as u64);
        }
    }
    Ok(Trajectory {
        snapshots,
        final_state: state,
        converged,
        rounds_used,
        maker_target,
    })
}

/// Stationarity diagnostics of a final allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Per trader `max_i |∇V_j − ζ_j ∇U| / ∇V_j`.
    pub kkt_residuals: Vec<f64>,
    pub zetas: Vec<f64>,
    /// Pareto weights `ω_j = 1/ζ_j`, scaled to sum to one.
    pub omega: Vec<f64>,
    /// The shared multiplier direction, `∇U(y)` normalized.
    pub price: Vec<f64>,
    pub max_kkt_residual: f64,
}

pub fn convergence_report(market: &Market, traj: &Trajectory) -> Result<ConvergenceReport> {
    let gu = market.maker.utility.gradient(&traj.final_state.maker)?;
    let total_u: f64 = gu.iter().sum();
    let mut kkt_residuals = Vec::new();
    let mut zetas = Vec::new();
    for (agent, x) in market.traders.iter().zip(&traj.final_state.traders) {
        let gv = agent.utility.gradient(x)?;
        let (r, zeta) = kkt_residual(&gv, &gu);
        kkt_residuals.push(r);
        zetas.push(zeta);
    }
    let inv: Vec<f64> = zetas.iter().map(|z| 1.0 / z).collect();
    let total: f64 = inv.iter().sum();
    Ok(ConvergenceReport {
        max_kkt_residual: kkt_residuals.iter().cloned().fold(0.0, f64::max),
        kkt_residuals,
        omega: inv.iter().map(|w| w / total).collect(),
        zetas,
        price: gu.iter().map(|g| g / total_u).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn agreement_converges_immediately() {
        let b = s(&[0.3, 0.7]);
        let market = Market::new(
            Agent {
                utility: UtilitySpec::exponential(b.clone(), 1.0).unwrap(),
                initial_wealth: 1.0,
            },
            vec![Agent {
                utility: UtilitySpec::exponential(b.clone(), 1.0).unwrap(),
                initial_wealth: 2.0,
            }],
        )
        .unwrap();
        let traj = run(&market, &TradingSequence::identity(1), &RunOptions::default()).unwrap();
        assert!(traj.converged);
        assert_eq!(traj.rounds_used, 1);
        assert_eq!(traj.snapshots.len(), 1);
        assert!(traj.final_price(&market).unwrap().max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn sequence_rejects_bad_order() {
        assert!(TradingSequence::round_robin(vec![1, 1]).validate(2).is_err());
        assert!(TradingSequence::round_robin(vec![1]).validate(2).is_err());
        assert!(TradingSequence::round_robin(vec![2, 1]).validate(2).is_ok());
    }

    #[test]
    fn csv_header_and_rows() {
        let market = Market::new(
            Agent {
                utility: UtilitySpec::exponential(s(&[0.5, 0.5]), 1.0).unwrap(),
                initial_wealth: 1.0,
            },
            vec![Agent {
                utility: UtilitySpec::exponential(s(&[0.8, 0.2]), 1.0).unwrap(),
                initial_wealth: 1.0,
            }],
        )
        .unwrap();
        let traj = run(&market, &TradingSequence::identity(1), &RunOptions::default()).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,trader,z_1,z_2,p_1,p_2,V_1,U");
        assert_eq!(lines.count(), traj.snapshots.len());
        assert!(traj.converged);
    }

    #[test]
    fn sequence_json_round_trip() {
        let seq = TradingSequence::random(42).with_max_rounds(10);
        let text = serde_json::to_string(&seq).unwrap();
        assert_eq!(text, r#"{"kind":"random","seed":42,"max_rounds":10}"#);
        let back: TradingSequence = serde_json::from_str(&text).unwrap();
        assert_eq!(back, seq);
    }
}
