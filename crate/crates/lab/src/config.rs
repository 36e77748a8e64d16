//! JSON market configuration.
//!
//! ```json
//! {
//!   "securities": 2,
//!   "market_maker": { "utility": { "family": "exponential", "belief": [0.5, 0.5], "beta": 1.0 }, "W0": 1.0 },
//!   "traders": [{ "utility": { "family": "exponential", "belief": [0.3, 0.7], "beta": 1.0 }, "w0": 2.0 }],
//!   "sequence": { "kind": "round_robin", "order": [1] },
//!   "tolerances": { "trade_eps": 1e-10, "root_eps": 1e-12 },
//!   "output": { "path": "trajectory.csv", "format": "csv" }
//! }
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mumarket_core::trader::TraderOptions;
use mumarket_core::trading::{Agent, Market, RunOptions, TradingSequence, DEFAULT_TRADE_EPS};
use mumarket_core::UtilitySpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub securities: usize,
    pub market_maker: MakerConfig,
    pub traders: Vec<TraderConfig>,
    pub sequence: TradingSequence,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MakerConfig {
    pub utility: UtilitySpec,
    #[serde(rename = "W0")]
    pub w0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraderConfig {
    pub utility: UtilitySpec,
    pub w0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_trade_eps")]
    pub trade_eps: f64,
    /// KKT residual at which a trader declines to trade.
    #[serde(default = "default_root_eps")]
    pub root_eps: f64,
}

fn default_trade_eps() -> f64 {
    DEFAULT_TRADE_EPS
}

fn default_root_eps() -> f64 {
    TraderOptions::default().degenerate_tol
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            trade_eps: default_trade_eps(),
            root_eps: default_root_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: String,
    #[serde(default)]
    pub format: OutputFormat,
}

/// A config problem located by line/column (syntax) or field path (semantics).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn field(location: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        location: location.into(),
        message: message.to_string(),
    }
}

impl MarketConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: MarketConfig = serde_json::from_str(text).map_err(|e| {
            field(
                format!("line {} column {}", e.line(), e.column()),
                strip_position(&e.to_string()),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.securities;
        if n < 2 {
            return Err(field("securities", format!("need at least 2 outcomes, got {n}")));
        }
        let check = |path: String, u: &UtilitySpec, w: f64, wname: &str| {
            if u.outcomes() != n {
                return Err(field(
                    format!("{path}.utility"),
                    format!("belief has {} outcomes, securities is {n}", u.outcomes()),
                ));
            }
            u.validate().map_err(|e| field(format!("{path}.utility"), e))?;
            if !(w.is_finite() && w > 0.0) {
                return Err(field(format!("{path}.{wname}"), format!("must be > 0, got {w}")));
            }
            Ok(())
        };
        check("market_maker".into(), &self.market_maker.utility, self.market_maker.w0, "W0")?;
        if self.traders.is_empty() {
            return Err(field("traders", "at least one trader is required"));
        }
        for (j, t) in self.traders.iter().enumerate() {
            check(format!("traders[{j}]"), &t.utility, t.w0, "w0")?;
        }
        self.sequence
            .validate(self.traders.len())
            .map_err(|e| field("sequence", e))?;
        let tol = &self.tolerances;
        if !(tol.trade_eps.is_finite() && tol.trade_eps >= 0.0) {
            return Err(field("tolerances.trade_eps", "must be a finite non-negative number"));
        }
        if !(tol.root_eps.is_finite() && tol.root_eps > 0.0) {
            return Err(field("tolerances.root_eps", "must be a finite positive number"));
        }
        self.market().map_err(|e| field("market", e))?;
        Ok(())
    }

    pub fn market(&self) -> mumarket_core::Result<Market> {
        Market::new(
            Agent {
                utility: self.market_maker.utility.clone(),
                initial_wealth: self.market_maker.w0,
            },
            self.traders
                .iter()
                .map(|t| Agent {
                    utility: t.utility.clone(),
                    initial_wealth: t.w0,
                })
                .collect(),
        )
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            trade_eps: self.tolerances.trade_eps,
            trader: TraderOptions {
                degenerate_tol: self.tolerances.root_eps,
                ..TraderOptions::default()
            },
        }
    }
}

/// serde_json appends " at line L column C"; the location is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
  "securities": 2,
  "market_maker": { "utility": { "family": "exponential", "belief": [0.5, 0.5], "beta": 1.0 }, "W0": 1.0 },
  "traders": [{ "utility": { "family": "exponential", "belief": [0.3, 0.7], "beta": 1.0 }, "w0": 2.0 }],
  "sequence": { "kind": "round_robin", "order": [1] }
}"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = MarketConfig::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.sequence.max_rounds, mumarket_core::trading::DEFAULT_MAX_ROUNDS);
        assert!(cfg.output.is_none());
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = MarketConfig::parse(EXAMPLE).unwrap();
        let again = MarketConfig::parse(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_json(), again.to_json());
    }

    #[test]
    fn syntax_error_has_line() {
        let err = MarketConfig::parse("{\n  \"securities\": 2,\n  oops\n}").unwrap_err();
        assert!(err.location.starts_with("line 3"), "{err}");
    }

    #[test]
    fn semantic_error_has_field_path() {
        let text = EXAMPLE.replace("\"w0\": 2.0", "\"w0\": -2.0");
        let err = MarketConfig::parse(&text).unwrap_err();
        assert_eq!(err.location, "traders[0].w0");
        let text = EXAMPLE.replace("[0.3, 0.7]", "[0.2, 0.3, 0.5]");
        let err = MarketConfig::parse(&text).unwrap_err();
        assert_eq!(err.location, "traders[0].utility");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = EXAMPLE.replace("\"securities\"", "\"secs\": 1, \"securities\"");
        assert!(MarketConfig::parse(&text).is_err());
    }
}
