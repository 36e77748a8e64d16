//! Multivariate-utility prediction market maker.
//!
//! Agents hold per-outcome net wealth vectors. The market maker prices every
//! order so that its own utility stays at the initial level, traders respond
//! optimally one at a time, and the process settles at a Pareto optimal
//! allocation whose price can be compared with closed-form aggregates.

pub mod equilibrium;
pub mod error;
pub mod formulas;
pub mod metrics;
pub mod penalty;
pub mod pricing;
pub mod rng;
pub mod roots;
pub mod trader;
pub mod trading;
pub mod types;
pub mod utility;

pub use error::{MarketError, Result};
pub use penalty::PenaltySpec;
pub use types::{MarketState, SimplexVector, TradeDelta, WealthVector};
pub use utility::UtilitySpec;
