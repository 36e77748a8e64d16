//! Penalty functions of convex risk measures in dual form and the
//! optimizing probability of `inf_q { qᵀw + α(q) }`.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::roots::{brent, Bracket, RootOptions};
use crate::types::SimplexVector;

/// Lower probability used to open the multiplier bracket.
const BRACKET_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PenaltySpec {
    /// `α(q) = (1/β) Σ q_i ln(q_i/π_i)`
    RelativeEntropy { belief: SimplexVector, beta: f64 },
    /// `α(q) = (h/γ) Σ q_i (q_i/θ_i)^(γ−1)`; aggregation input only.
    Power {
        belief: SimplexVector,
        gamma: f64,
        h: f64,
    },
    /// `α(q) = h Σ π_i ln(q_i)`; aggregation input only.
    Log { belief: SimplexVector, h: f64 },
}

impl PenaltySpec {
    pub fn relative_entropy(belief: SimplexVector, beta: f64) -> Result<Self> {
        let p = PenaltySpec::RelativeEntropy { belief, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn power(belief: SimplexVector, gamma: f64, h: f64) -> Result<Self> {
        let p = PenaltySpec::Power { belief, gamma, h };
        p.validate()?;
        Ok(p)
    }

    pub fn log(belief: SimplexVector, h: f64) -> Result<Self> {
        let p = PenaltySpec::Log { belief, h };
        p.validate()?;
        Ok(p)
    }

    pub fn belief(&self) -> &SimplexVector {
        match self {
            PenaltySpec::RelativeEntropy { belief, .. }
            | PenaltySpec::Power { belief, .. }
            | PenaltySpec::Log { belief, .. } => belief,
        }
    }

    pub fn outcomes(&self) -> usize {
        self.belief().len()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PenaltySpec::RelativeEntropy { belief, beta } => {
                if !(beta.is_finite() && *beta > 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "relative entropy penalty needs beta > 0, got {beta}"
                    )));
                }
                if !belief.is_interior() {
                    return Err(MarketError::InvalidInput(
                        "relative entropy penalty needs a strictly positive belief".into(),
                    ));
                }
                self.check_dual_conditions()
            }
            PenaltySpec::Power { belief, gamma, h } => {
                if !(gamma.is_finite() && *gamma < 1.0 && *gamma != 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "power penalty needs gamma < 1 and gamma != 0, got {gamma}"
                    )));
                }
                if !(h.is_finite() && *h >= 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "power penalty needs h >= 0, got {h}"
                    )));
                }
                if !belief.is_interior() {
                    return Err(MarketError::InvalidInput(
                        "power penalty needs a strictly positive belief".into(),
                    ));
                }
                Ok(())
            }
            PenaltySpec::Log { h, .. } => {
                if !(h.is_finite() && *h >= 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "log penalty needs h >= 0, got {h}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Checks on a grid that every marginal is strictly increasing on
    /// (0, 1], finite at 1 and unbounded below as `q → 0`.
    pub fn check_dual_conditions(&self) -> Result<()> {
        const GRID: [f64; 14] = [
            1e-300, 1e-200, 1e-100, 1e-30, 1e-12, 1e-6, 1e-3, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0,
        ];
        for i in 0..self.outcomes() {
            let values: Vec<f64> = GRID
                .iter()
                .map(|q| self.marginal(i, *q))
                .collect::<Result<_>>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MarketError::InvalidInput(format!(
                    "penalty marginal {i} is not finite on (0, 1]"
                )));
            }
            if values.windows(2).any(|w| w[1] <= w[0]) {
                return Err(MarketError::InvalidInput(format!(
                    "penalty marginal {i} is not strictly increasing"
                )));
            }
            let unit_slope = values[13] - values[10];
            let tail_drop = values[2] - values[0];
            if !(tail_drop > 10.0 * unit_slope) {
                return Err(MarketError::InvalidInput(format!(
                    "penalty marginal {i} does not diverge to -inf at 0"
                )));
            }
        }
        Ok(())
    }

    /// True for penalties whose marginals increase (convex penalty).
    pub fn has_increasing_marginals(&self) -> bool {
        matches!(self, PenaltySpec::RelativeEntropy { .. })
    }

    /// Weight of the penalty in a sum; zero weights drop out of aggregation.
    pub(crate) fn is_inert(&self) -> bool {
        match self {
            PenaltySpec::RelativeEntropy { .. } => false,
            PenaltySpec::Power { h, .. } | PenaltySpec::Log { h, .. } => *h == 0.0,
        }
    }

    /// `α(q)`
    pub fn value(&self, q: &SimplexVector) -> Result<f64> {
        self.value_at(q.as_slice())
    }

    pub(crate) fn value_at(&self, q: &[f64]) -> Result<f64> {
        let belief = self.belief();
        if q.len() != belief.len() {
            return Err(MarketError::InvalidInput(format!(
                "penalty has {} outcomes, probability has {}",
                belief.len(),
                q.len()
            )));
        }
        let mut total = 0.0;
        for (i, &qi) in q.iter().enumerate() {
            let b = belief[i];
            total += match self {
                PenaltySpec::RelativeEntropy { beta, .. } => {
                    if qi == 0.0 {
                        0.0
                    } else {
                        qi * (qi / b).ln() / beta
                    }
                }
                PenaltySpec::Power { gamma, h, .. } => {
                    if qi <= 0.0 {
                        return Err(MarketError::Domain(format!(
                            "power penalty needs q_{i} > 0"
                        )));
                    }
                    h / gamma * qi.powf(*gamma) * b.powf(1.0 - gamma)
                }
                PenaltySpec::Log { h, .. } => {
                    if b == 0.0 || *h == 0.0 {
                        0.0
                    } else if qi <= 0.0 {
                        return Err(MarketError::Domain(format!(
                            "log penalty needs q_{i} > 0"
                        )));
                    } else {
                        h * b * qi.ln()
                    }
                }
            };
        }
        Ok(total)
    }

    /// `f_i(q_i) = ∂α/∂q_i`
    pub fn marginal(&self, i: usize, q: f64) -> Result<f64> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(MarketError::Range(format!(
                "penalty marginal needs q > 0, got {q}"
            )));
        }
        let b = self.belief()[i];
        Ok(match self {
            PenaltySpec::RelativeEntropy { beta, .. } => ((q / b).ln() + 1.0) / beta,
            PenaltySpec::Power { gamma, h, .. } => h * q.powf(gamma - 1.0) * b.powf(1.0 - gamma),
            PenaltySpec::Log { h, .. } => h * b / q,
        })
    }

    /// `f_i'(q_i)`
    pub fn marginal_derivative(&self, i: usize, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(MarketError::Range(format!(
                "penalty curvature needs q > 0, got {q}"
            )));
        }
        let b = self.belief()[i];
        Ok(match self {
            PenaltySpec::RelativeEntropy { beta, .. } => 1.0 / (beta * q),
            PenaltySpec::Power { gamma, h, .. } => {
                h * (gamma - 1.0) * q.powf(gamma - 2.0) * b.powf(1.0 - gamma)
            }
            PenaltySpec::Log { h, .. } => -h * b / (q * q),
        })
    }

    /// `f_i^{-1}(m)`
    pub fn marginal_inverse(&self, i: usize, m: f64) -> Result<f64> {
        let b = self.belief()[i];
        match self {
            PenaltySpec::RelativeEntropy { beta, .. } => Ok(b * (beta * m - 1.0).exp()),
            PenaltySpec::Power { gamma, h, .. } => {
                if !(m > 0.0) || *h == 0.0 {
                    return Err(MarketError::Range(format!(
                        "power penalty marginal takes values in (0, inf), got {m}"
                    )));
                }
                Ok((m / (h * b.powf(1.0 - gamma))).powf(1.0 / (gamma - 1.0)))
            }
            PenaltySpec::Log { h, .. } => {
                if !(m > 0.0) || *h == 0.0 || b == 0.0 {
                    return Err(MarketError::Range(format!(
                        "log penalty marginal takes values in (0, inf), got {m}"
                    )));
                }
                Ok(h * b / m)
            }
        }
    }
}

/// Optimizer of the dual representation at a wealth vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DualOptimum {
    /// Optimizing probability `q*`, which is also `∇U(w)`.
    pub q: Vec<f64>,
    /// Multiplier solving `Σ_i f_i^{-1}(λ − w_i) = 1`.
    pub lambda: f64,
    /// `inf_q { qᵀw + α(q) } = −ρ(w)`
    pub value: f64,
}

/// Solves `Σ_i f_i^{-1}(λ − w_i) = 1` for the multiplier and evaluates
/// the dual objective at the resulting probability.
pub fn dual_optimum(penalty: &PenaltySpec, w: &[f64]) -> Result<DualOptimum> {
    if !penalty.has_increasing_marginals() {
        return Err(MarketError::Unsupported(
            "risk measures are only defined for penalties with increasing marginals".into(),
        ));
    }
    let n = penalty.outcomes();
    if w.len() != n {
        return Err(MarketError::InvalidInput(format!(
            "wealth has {} entries, penalty has {n} outcomes",
            w.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, wi) in w.iter().enumerate() {
        lo = lo.min(wi + penalty.marginal(i, BRACKET_EPS)?);
        hi = hi.max(wi + penalty.marginal(i, 1.0)?);
    }
    let mass = |lambda: f64| -> f64 {
        w.iter()
            .enumerate()
            .map(|(i, wi)| penalty.marginal_inverse(i, lambda - wi).unwrap_or(f64::NAN))
            .sum::<f64>()
            - 1.0
    };
    let mut mass = mass;
    let bracket = Bracket {
        lo,
        hi,
        f_lo: mass(lo),
        f_hi: mass(hi),
    };
    let root = brent(&mut mass, bracket, &RootOptions::default(), "dual multiplier")?;
    if root.fx.abs() > 1e-12 {
        return Err(MarketError::numerical(
            "dual multiplier",
            format!("probability mass residual {:e} above 1e-12", root.fx),
        ));
    }
    let lambda = root.x;
    let mut q: Vec<f64> = w
        .iter()
        .enumerate()
        .map(|(i, wi)| penalty.marginal_inverse(i, lambda - wi))
        .collect::<Result<_>>()?;
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    let value = q.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + penalty.value_at(&q)?;
    Ok(DualOptimum { q, lambda, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> SimplexVector {
        SimplexVector::new(vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn relative_entropy_of_itself_is_zero() {
        let p = PenaltySpec::relative_entropy(half(), 1.0).unwrap();
        assert_eq!(p.value(&half()).unwrap(), 0.0);
    }

    #[test]
    fn relative_entropy_marginal_value() {
        let p = PenaltySpec::relative_entropy(half(), 2.0).unwrap();
        assert!((p.marginal(0, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_contributes_nothing() {
        let p = PenaltySpec::relative_entropy(half(), 1.0).unwrap();
        let q = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        assert!((p.value(&q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(p.marginal(1, 0.0), Err(MarketError::Range(_))));
    }

    #[test]
    fn power_and_log_fail_dual_conditions() {
        let p = PenaltySpec::power(half(), 0.5, 1.0).unwrap();
        assert!(p.check_dual_conditions().is_err());
        let l = PenaltySpec::log(half(), 1.0).unwrap();
        assert!(l.check_dual_conditions().is_err());
        assert!(dual_optimum(&l, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn marginal_round_trips() {
        let belief = SimplexVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let pens = [
            PenaltySpec::relative_entropy(belief.clone(), 1.7).unwrap(),
            PenaltySpec::power(belief.clone(), -0.5, 2.0).unwrap(),
            PenaltySpec::power(belief.clone(), 0.4, 0.5).unwrap(),
            PenaltySpec::log(belief, 1.5).unwrap(),
        ];
        for p in &pens {
            for k in 1..=100 {
                let q = k as f64 / 100.0;
                for i in 0..3 {
                    let back = p.marginal_inverse(i, p.marginal(i, q).unwrap()).unwrap();
                    assert!((back - q).abs() < 1e-12 * q.max(1.0), "{p:?} q={q} back={back}");
                }
            }
        }
    }

    #[test]
    fn dual_optimum_matches_entropic_closed_form() {
        let p = PenaltySpec::relative_entropy(half(), 1.0).unwrap();
        let opt = dual_optimum(&p, &[1.0, 2.0]).unwrap();
        let closed = -(0.5 * (-1f64).exp() + 0.5 * (-2f64).exp()).ln();
        assert!((opt.value - closed).abs() < 1e-12);
        assert!((opt.value - 1.3799).abs() < 1e-4);
        let sum: f64 = opt.q.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }
}
