//! Value types shared by every part of the market: probability vectors,
//! per-outcome wealth positions, trades and the market state.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Entries of a simplex vector must sum to one within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Inputs whose sum is off by at most this much are renormalized.
pub const SIMPLEX_RENORMALIZE_TOL: f64 = 1e-9;
/// Maximum per-entry violation of total wealth conservation.
pub const CONSERVATION_TOL: f64 = 1e-9;

/// A probability vector on the outcome simplex (beliefs and prices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(MarketError::InvalidInput(format!(
                "a simplex vector needs at least 2 outcomes, got {}",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(MarketError::InvalidInput(format!(
                "probability entries must be finite and non-negative, got {bad}"
            )));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_RENORMALIZE_TOL {
            return Err(MarketError::InvalidInput(format!(
                "probability entries must sum to 1, got {sum}"
            )));
        }
        let mut entries = entries;
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            entries.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(SimplexVector(entries))
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MarketError::InvalidInput(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(MarketError::InvalidInput("weights sum to zero".into()));
        }
        SimplexVector::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(outcomes: usize) -> Result<Self> {
        SimplexVector::new(vec![1.0 / outcomes as f64; outcomes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// True when every entry is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|p| *p > 0.0)
    }

    pub fn max_abs_diff(&self, other: &SimplexVector) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = MarketError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexVector::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Self {
        v.0
    }
}

impl Index<usize> for SimplexVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A per-outcome net wealth position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WealthVector(Vec<f64>);

impl WealthVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|w| !w.is_finite()) {
            return Err(MarketError::InvalidInput(
                "wealth entries must be finite".into(),
            ));
        }
        Ok(WealthVector(entries))
    }

    /// The riskless position `c·e`.
    pub fn uniform(outcomes: usize, c: f64) -> Self {
        WealthVector(vec![c; outcomes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// `self + c·e`
    pub fn shifted(&self, c: f64) -> WealthVector {
        WealthVector(self.0.iter().map(|w| w + c).collect())
    }

    pub fn plus(&self, delta: &[f64]) -> WealthVector {
        debug_assert_eq!(self.0.len(), delta.len());
        WealthVector(self.0.iter().zip(delta).map(|(w, d)| w + d).collect())
    }

    pub fn minus(&self, delta: &[f64]) -> WealthVector {
        debug_assert_eq!(self.0.len(), delta.len());
        WealthVector(self.0.iter().zip(delta).map(|(w, d)| w - d).collect())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

impl From<WealthVector> for Vec<f64> {
    fn from(v: WealthVector) -> Self {
        v.0
    }
}

impl TryFrom<Vec<f64>> for WealthVector {
    type Error = MarketError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        WealthVector::new(v)
    }
}

impl Index<usize> for WealthVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Change of a trader's net wealth in one trade, `z = Δq − Δw·e`.
/// The market maker's position moves by `−z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TradeDelta(Vec<f64>);

impl TradeDelta {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(MarketError::InvalidInput("trade entries must be finite".into()));
        }
        Ok(TradeDelta(z))
    }

    pub fn zero(outcomes: usize) -> Self {
        TradeDelta(vec![0.0; outcomes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl From<TradeDelta> for Vec<f64> {
    fn from(v: TradeDelta) -> Self {
        v.0
    }
}

impl TryFrom<Vec<f64>> for TradeDelta {
    type Error = MarketError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TradeDelta::new(v)
    }
}

/// Net wealth positions of the market maker and all traders at round `t`.
///
/// The positions always add up to `total_wealth·e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub t: u64,
    pub maker: WealthVector,
    pub traders: Vec<WealthVector>,
    pub total_wealth: f64,
    pub maker_initial_wealth: f64,
    pub trader_initial_wealth: Vec<f64>,
}

impl MarketState {
    /// Riskless starting positions `W0·e` and `w_{j,0}·e`.
    pub fn initial(outcomes: usize, maker_wealth: f64, trader_wealth: &[f64]) -> Result<Self> {
        if outcomes < 2 {
            return Err(MarketError::InvalidInput("need at least 2 outcomes".into()));
        }
        if !(maker_wealth.is_finite() && maker_wealth > 0.0) {
            return Err(MarketError::InvalidInput(format!(
                "market maker initial wealth must be positive, got {maker_wealth}"
            )));
        }
        if let Some(bad) = trader_wealth.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(MarketError::InvalidInput(format!(
                "trader initial wealth must be positive, got {bad}"
            )));
        }
        Ok(MarketState {
            t: 0,
            maker: WealthVector::uniform(outcomes, maker_wealth),
            traders: trader_wealth
                .iter()
                .map(|w| WealthVector::uniform(outcomes, *w))
                .collect(),
            total_wealth: maker_wealth + trader_wealth.iter().sum::<f64>(),
            maker_initial_wealth: maker_wealth,
            trader_initial_wealth: trader_wealth.to_vec(),
        })
    }

    pub fn outcomes(&self) -> usize {
        self.maker.len()
    }

    pub fn trader_count(&self) -> usize {
        self.traders.len()
    }

    /// Moves `z` from the market maker to `trader` and advances the clock.
    pub fn apply_trade(&self, trader: usize, z: &TradeDelta) -> Result<MarketState> {
        if trader >= self.traders.len() {
            return Err(MarketError::InvalidInput(format!(
                "trader index {trader} out of range (J = {})",
                self.traders.len()
            )));
        }
        if z.len() != self.outcomes() {
            return Err(MarketError::InvalidInput(format!(
                "trade has {} entries, market has {} outcomes",
                z.len(),
                self.outcomes()
            )));
        }
        let mut next = self.clone();
        next.t += 1;
        next.traders[trader] = self.traders[trader].plus(z.as_slice());
        next.maker = self.maker.minus(z.as_slice());
        let residual = next.total_wealth_residual();
        if residual > CONSERVATION_TOL {
            return Err(MarketError::Consistency(format!(
                "total wealth drifted by {residual:e} after trade at t={}",
                self.t
            )));
        }
        Ok(next)
    }

    /// Max-norm of `y + Σ x_j − w_all·e`.
    pub fn total_wealth_residual(&self) -> f64 {
        (0..self.outcomes())
            .map(|i| {
                let total = self.maker[i] + self.traders.iter().map(|x| x[i]).sum::<f64>();
                (total - self.total_wealth).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
