//! Random HARA markets with noisy grouped beliefs.

use mumarket_core::formulas::omega_dagger;
use mumarket_core::rng::SplitMix64;
use mumarket_core::trading::{Agent, Market};
use mumarket_core::{MarketError, Result, SimplexVector, UtilitySpec};
use serde::{Deserialize, Serialize};

/// A fixed risk parameter or an interval it is drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl GammaSpec {
    fn draw(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            GammaSpec::Fixed(g) => g,
            GammaSpec::Range([lo, hi]) => rng.uniform(lo, hi),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = match *self {
            GammaSpec::Fixed(g) => (g, g),
            GammaSpec::Range([lo, hi]) => (lo, hi),
        };
        if !(lo.is_finite() && lo <= hi && hi < 1.0) {
            return Err(MarketError::InvalidInput(format!(
                "{name} must lie below 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMarketSpec {
    #[serde(rename = "J")]
    pub traders: usize,
    /// Weight on the group baseline; the rest is normalized uniform noise.
    pub alpha: f64,
    /// One baseline per group; traders are split evenly, in order.
    pub baseline_beliefs: Vec<SimplexVector>,
    pub wealth_range: [f64; 2],
    pub gamma_m: GammaSpec,
    pub gamma_t: GammaSpec,
    pub seed: u64,
    pub maker_belief: SimplexVector,
    pub maker_wealth: f64,
    pub maker_b: f64,
}

/// A drawn market with the quantities the approximation formulas need.
#[derive(Debug, Clone)]
pub struct GeneratedMarket {
    pub market: Market,
    pub gamma_m: f64,
    pub gamma_t: Vec<f64>,
    pub beliefs: Vec<SimplexVector>,
    pub wealth: Vec<f64>,
    /// Seed for the random arrival sequence.
    pub sequence_seed: u64,
}

impl RandomMarketSpec {
    /// Three outcomes, two groups around `(0.6, 0.2, 0.2)` and `(0.2, 0.2, 0.6)`,
    /// wealth in `[3, 10]` and a market maker with belief `(0.3, 0.3, 0.4)`,
    /// `a = 1`, `b = 0`, `W0 = 10`.
    pub fn grouped(traders: usize, alpha: f64, gamma_m: GammaSpec, gamma_t: GammaSpec, seed: u64) -> Self {
        let s = |v: [f64; 3]| SimplexVector::new(v.to_vec()).expect("valid simplex");
        RandomMarketSpec {
            traders,
            alpha,
            baseline_beliefs: vec![s([0.6, 0.2, 0.2]), s([0.2, 0.2, 0.6])],
            wealth_range: [3.0, 10.0],
            gamma_m,
            gamma_t,
            seed,
            maker_belief: s([0.3, 0.3, 0.4]),
            maker_wealth: 10.0,
            maker_b: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.maker_belief.len();
        if self.traders == 0 {
            return Err(MarketError::InvalidInput("J must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MarketError::InvalidInput(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.baseline_beliefs.is_empty() || self.baseline_beliefs.iter().any(|b| b.len() != n) {
            return Err(MarketError::InvalidInput(format!(
                "need at least one baseline belief with {n} outcomes"
            )));
        }
        let [lo, hi] = self.wealth_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(MarketError::InvalidInput(format!(
                "wealth range must satisfy 0 < low <= high, got [{lo}, {hi}]"
            )));
        }
        self.gamma_m.validate("gamma_M")?;
        self.gamma_t.validate("gamma_T")
    }

    /// Draws in a fixed order: `γ_M`, then per trader `w0`, `ε_1..ε_I`, `γ_T`,
    /// then the sequence seed.
    pub fn generate(&self) -> Result<GeneratedMarket> {
        self.validate()?;
        let mut rng = SplitMix64::new(self.seed);
        let n = self.maker_belief.len();
        let groups = self.baseline_beliefs.len();
        let gamma_m = self.gamma_m.draw(&mut rng);
        let mut traders = Vec::with_capacity(self.traders);
        let mut gamma_t = Vec::with_capacity(self.traders);
        let mut beliefs = Vec::with_capacity(self.traders);
        let mut wealth = Vec::with_capacity(self.traders);
        for j in 0..self.traders {
            let base = &self.baseline_beliefs[j * groups / self.traders];
            let w0 = rng.uniform(self.wealth_range[0], self.wealth_range[1]);
            let eps: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let norm: f64 = eps.iter().sum();
            let belief = SimplexVector::from_weights(
                (0..n)
                    .map(|i| self.alpha * base[i] + (1.0 - self.alpha) * eps[i] / norm)
                    .collect(),
            )?;
            let g = self.gamma_t.draw(&mut rng);
            traders.push(Agent {
                utility: UtilitySpec::hara(belief.clone(), 1.0, 0.0, g)?,
                initial_wealth: w0,
            });
            gamma_t.push(g);
            beliefs.push(belief);
            wealth.push(w0);
        }
        let maker = Agent {
            utility: UtilitySpec::hara(self.maker_belief.clone(), 1.0, self.maker_b, gamma_m)?,
            initial_wealth: self.maker_wealth,
        };
        Ok(GeneratedMarket {
            market: Market::new(maker, traders)?,
            gamma_m,
            gamma_t,
            beliefs,
            wealth,
            sequence_seed: rng.next_u64(),
        })
    }
}

impl GeneratedMarket {
    /// `ω†` with each trader's own risk parameter.
    pub fn omega_dagger(&self) -> Result<Vec<f64>> {
        self.wealth
            .iter()
            .zip(&self.gamma_t)
            .map(|(w, g)| omega_dagger(&[1.0], &[0.0], &[*w], *g).map(|v| v[0]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> RandomMarketSpec {
        RandomMarketSpec::grouped(10, 0.3, GammaSpec::Fixed(0.3), GammaSpec::Range([0.2, 0.8]), seed)
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = spec(7).generate().unwrap();
        let b = spec(7).generate().unwrap();
        assert_eq!(a.market, b.market);
        assert_eq!(a.sequence_seed, b.sequence_seed);
        assert_ne!(a.market, spec(8).generate().unwrap().market);
    }

    #[test]
    fn draws_respect_ranges() {
        let g = spec(11).generate().unwrap();
        assert!(g.wealth.iter().all(|w| (3.0..=10.0).contains(w)));
        assert!(g.gamma_t.iter().all(|v| (0.2..=0.8).contains(v)));
        assert_eq!(g.gamma_m, 0.3);
    }

    #[test]
    fn alpha_one_gives_baselines() {
        let mut s = spec(3);
        s.alpha = 1.0;
        let g = s.generate().unwrap();
        assert!(g.beliefs[0].max_abs_diff(&s.baseline_beliefs[0]) < 1e-15);
        assert!(g.beliefs[9].max_abs_diff(&s.baseline_beliefs[1]) < 1e-15);
        assert!(g.beliefs[4].max_abs_diff(&s.baseline_beliefs[0]) < 1e-15);
        assert!(g.beliefs[5].max_abs_diff(&s.baseline_beliefs[1]) < 1e-15);
    }

    #[test]
    fn rejects_bad_gamma() {
        let mut s = spec(1);
        s.gamma_t = GammaSpec::Fixed(1.0);
        assert!(s.generate().is_err());
    }
}
