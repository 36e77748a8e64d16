//! Multivariate utility functions over per-outcome net wealth.

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::penalty::{dual_optimum, PenaltySpec};
use crate::types::{SimplexVector, WealthVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilitySpec {
    /// `U(w) = −(1/β) Σ θ_i e^{−β w_i}`
    Exponential { belief: SimplexVector, beta: f64 },
    /// `U(w) = ((1−γ)/γ) Σ θ_i (a w_i/(1−γ) + b)^γ`, and `Σ θ_i ln(a w_i + b)` at `γ = 0`.
    Hara {
        belief: SimplexVector,
        a: f64,
        b: f64,
        gamma: f64,
    },
    /// `U(w) = Σ θ_i w_i^γ`
    Crra { belief: SimplexVector, gamma: f64 },
    /// `U(w) = −ρ(w) = inf_q { qᵀw + α(q) }`
    RiskMeasure { penalty: PenaltySpec },
    /// `U(y) = −(1/β) ln Σ θ_i e^{−β y_i} + η Σ θ_i ln(y_i + B)`
    CompositeEntropicLog {
        belief: SimplexVector,
        beta: f64,
        eta: f64,
        #[serde(rename = "B")]
        offset: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(MarketError::InvalidInput(format!("{name} must be > 0, got {v}")))
    }
}

fn interior(belief: &SimplexVector) -> Result<()> {
    if belief.is_interior() {
        Ok(())
    } else {
        Err(MarketError::InvalidInput(
            "utility beliefs must be strictly positive".into(),
        ))
    }
}

impl UtilitySpec {
    pub fn exponential(belief: SimplexVector, beta: f64) -> Result<Self> {
        let u = UtilitySpec::Exponential { belief, beta };
        u.validate()?;
        Ok(u)
    }

    pub fn hara(belief: SimplexVector, a: f64, b: f64, gamma: f64) -> Result<Self> {
        let u = UtilitySpec::Hara {
            belief,
            a,
            b,
            gamma,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn crra(belief: SimplexVector, gamma: f64) -> Result<Self> {
        let u = UtilitySpec::Crra { belief, gamma };
        u.validate()?;
        Ok(u)
    }

    pub fn risk_measure(penalty: PenaltySpec) -> Result<Self> {
        let u = UtilitySpec::RiskMeasure { penalty };
        u.validate()?;
        Ok(u)
    }

    pub fn composite_entropic_log(
        belief: SimplexVector,
        beta: f64,
        eta: f64,
        offset: f64,
    ) -> Result<Self> {
        let u = UtilitySpec::CompositeEntropicLog {
            belief,
            beta,
            eta,
            offset,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            UtilitySpec::Exponential { belief, beta } => {
                interior(belief)?;
                positive("beta", *beta)
            }
            UtilitySpec::Hara {
                belief,
                a,
                b,
                gamma,
            } => {
                interior(belief)?;
                positive("a", *a)?;
                if !(b.is_finite() && *b >= 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "b must be >= 0, got {b}"
                    )));
                }
                if !(gamma.is_finite() && *gamma < 1.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "HARA gamma must be < 1, got {gamma}"
                    )));
                }
                Ok(())
            }
            UtilitySpec::Crra { belief, gamma } => {
                interior(belief)?;
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "CRRA gamma must lie in (0, 1), got {gamma}"
                    )));
                }
                Ok(())
            }
            UtilitySpec::RiskMeasure { penalty } => {
                penalty.validate()?;
                if !penalty.has_increasing_marginals() {
                    return Err(MarketError::InvalidInput(
                        "risk-measure utilities need a relative entropy penalty; power and log \
                         penalties are aggregation inputs only"
                            .into(),
                    ));
                }
                Ok(())
            }
            UtilitySpec::CompositeEntropicLog {
                belief,
                beta,
                eta,
                offset,
            } => {
                interior(belief)?;
                positive("beta", *beta)?;
                if !(eta.is_finite() && *eta >= 0.0) {
                    return Err(MarketError::InvalidInput(format!(
                        "eta must be >= 0, got {eta}"
                    )));
                }
                if !offset.is_finite() {
                    return Err(MarketError::InvalidInput("B must be finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            UtilitySpec::Exponential { .. } => "exponential",
            UtilitySpec::Hara { .. } => "hara",
            UtilitySpec::Crra { .. } => "crra",
            UtilitySpec::RiskMeasure { .. } => "risk_measure",
            UtilitySpec::CompositeEntropicLog { .. } => "composite_entropic_log",
        }
    }

    pub fn belief(&self) -> &SimplexVector {
        match self {
            UtilitySpec::Exponential { belief, .. }
            | UtilitySpec::Hara { belief, .. }
            | UtilitySpec::Crra { belief, .. }
            | UtilitySpec::CompositeEntropicLog { belief, .. } => belief,
            UtilitySpec::RiskMeasure { penalty } => penalty.belief(),
        }
    }

    pub fn outcomes(&self) -> usize {
        self.belief().len()
    }

    /// Expected-utility families, `U(w) = Σ_i u_i(w_i)`.
    pub fn is_separable(&self) -> bool {
        matches!(
            self,
            UtilitySpec::Exponential { .. } | UtilitySpec::Hara { .. } | UtilitySpec::Crra { .. }
        )
    }

    /// Open lower bound of coordinate `i` of the domain (`−∞` if none).
    pub fn coord_lower_bound(&self, _i: usize) -> f64 {
        match self {
            UtilitySpec::Exponential { .. } | UtilitySpec::RiskMeasure { .. } => f64::NEG_INFINITY,
            UtilitySpec::Hara { a, b, gamma, .. } => -b * (1.0 - gamma) / a,
            UtilitySpec::Crra { .. } => 0.0,
            UtilitySpec::CompositeEntropicLog { eta, offset, .. } => {
                if *eta > 0.0 {
                    -offset
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn domain_contains(&self, w: &WealthVector) -> bool {
        self.domain_contains_slice(w.as_slice())
    }

    pub(crate) fn domain_contains_slice(&self, w: &[f64]) -> bool {
        w.len() == self.outcomes()
            && w.iter()
                .enumerate()
                .all(|(i, wi)| wi.is_finite() && *wi > self.coord_lower_bound(i))
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.outcomes() {
            return Err(MarketError::InvalidInput(format!(
                "wealth has {} entries, utility has {} outcomes",
                w.len(),
                self.outcomes()
            )));
        }
        if !self.domain_contains_slice(w) {
            return Err(MarketError::Domain(format!(
                "{w:?} is outside the domain of the {} utility",
                self.family_name()
            )));
        }
        Ok(())
    }

    pub fn value(&self, w: &WealthVector) -> Result<f64> {
        self.value_at(w.as_slice())
    }

    pub fn value_at(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        Ok(match self {
            UtilitySpec::RiskMeasure { penalty } => dual_optimum(penalty, w)?.value,
            UtilitySpec::CompositeEntropicLog {
                belief,
                beta,
                eta,
                offset,
            } => {
                let m = w.iter().cloned().fold(f64::INFINITY, f64::min);
                let s: f64 = belief
                    .iter()
                    .zip(w)
                    .map(|(t, wi)| t * (-beta * (wi - m)).exp())
                    .sum();
                let entropic = m - s.ln() / beta;
                let log_part: f64 = if *eta > 0.0 {
                    belief.iter().zip(w).map(|(t, wi)| t * (wi + offset).ln()).sum()
                } else {
                    0.0
                };
                entropic + eta * log_part
            }
            _ => (0..w.len()).map(|i| self.coord_value(i, w[i])).sum(),
        })
    }

    /// Per-coordinate term of a separable utility (no domain check).
    fn coord_value(&self, i: usize, w: f64) -> f64 {
        match self {
            UtilitySpec::Exponential { belief, beta } => -belief[i] * (-beta * w).exp() / beta,
            UtilitySpec::Hara {
                belief,
                a,
                b,
                gamma,
            } => {
                if *gamma == 0.0 {
                    belief[i] * (a * w + b).ln()
                } else {
                    let s = a * w / (1.0 - gamma) + b;
                    (1.0 - gamma) / gamma * belief[i] * s.powf(*gamma)
                }
            }
            UtilitySpec::Crra { belief, gamma } => belief[i] * w.powf(*gamma),
            _ => f64::NAN,
        }
    }

    pub fn gradient(&self, w: &WealthVector) -> Result<Vec<f64>> {
        self.gradient_at(w.as_slice())
    }

    pub fn gradient_at(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let g: Vec<f64> = match self {
            UtilitySpec::RiskMeasure { penalty } => dual_optimum(penalty, w)?.q,
            UtilitySpec::CompositeEntropicLog {
                belief,
                beta,
                eta,
                offset,
            } => {
                let m = w.iter().cloned().fold(f64::INFINITY, f64::min);
                let terms: Vec<f64> = belief
                    .iter()
                    .zip(w)
                    .map(|(t, wi)| t * (-beta * (wi - m)).exp())
                    .collect();
                let s: f64 = terms.iter().sum();
                terms
                    .iter()
                    .zip(belief.iter().zip(w))
                    .map(|(e, (t, wi))| {
                        e / s + if *eta > 0.0 { eta * t / (wi + offset) } else { 0.0 }
                    })
                    .collect()
            }
            _ => (0..w.len())
                .map(|i| self.log_marginal_unchecked(i, w[i]).exp())
                .collect(),
        };
        if g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MarketError::Domain(format!(
                "gradient of the {} utility is not finite at {w:?}",
                self.family_name()
            )));
        }
        Ok(g)
    }

    fn separable_only(&self, what: &str) -> Result<()> {
        if self.is_separable() {
            Ok(())
        } else {
            Err(MarketError::Unsupported(format!(
                "{what} is only available for separable utilities, not {}",
                self.family_name()
            )))
        }
    }

    /// `∂U/∂w_i` as a function of `w_i` alone.
    pub fn marginal(&self, i: usize, w: f64) -> Result<f64> {
        Ok(self.log_marginal(i, w)?.exp())
    }

    /// `ln ∂U/∂w_i`, evaluated without overflow.
    pub fn log_marginal(&self, i: usize, w: f64) -> Result<f64> {
        self.separable_only("a per-coordinate marginal")?;
        if !(w.is_finite() && w > self.coord_lower_bound(i)) {
            return Err(MarketError::Domain(format!(
                "w_{i} = {w} is outside the domain of the {} utility",
                self.family_name()
            )));
        }
        Ok(self.log_marginal_unchecked(i, w))
    }

    pub(crate) fn log_marginal_unchecked(&self, i: usize, w: f64) -> f64 {
        match self {
            UtilitySpec::Exponential { belief, beta } => belief[i].ln() - beta * w,
            UtilitySpec::Hara {
                belief,
                a,
                b,
                gamma,
            } => {
                let s = a * w / (1.0 - gamma) + b;
                belief[i].ln() + a.ln() + (gamma - 1.0) * s.ln()
            }
            UtilitySpec::Crra { belief, gamma } => {
                gamma.ln() + belief[i].ln() + (gamma - 1.0) * w.ln()
            }
            _ => f64::NAN,
        }
    }

    /// `d/dw_i ln ∂U/∂w_i`, always negative for the separable families.
    pub(crate) fn log_marginal_slope(&self, _i: usize, w: f64) -> f64 {
        match self {
            UtilitySpec::Exponential { beta, .. } => -beta,
            UtilitySpec::Hara { a, b, gamma, .. } => {
                let s = a * w / (1.0 - gamma) + b;
                -a / s
            }
            UtilitySpec::Crra { gamma, .. } => (gamma - 1.0) / w,
            _ => f64::NAN,
        }
    }

    /// The `w_i` at which `∂U/∂w_i = m`.
    pub fn inverse_marginal(&self, i: usize, m: f64) -> Result<f64> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(MarketError::Range(format!(
                "marginal utility {m} is outside (0, inf)"
            )));
        }
        self.inverse_log_marginal(i, m.ln())
    }

    /// The `w_i` at which `ln ∂U/∂w_i = lm`.
    pub fn inverse_log_marginal(&self, i: usize, lm: f64) -> Result<f64> {
        self.separable_only("the inverse marginal")?;
        if !lm.is_finite() {
            return Err(MarketError::Range(format!(
                "log marginal utility {lm} is not finite"
            )));
        }
        let w = match self {
            UtilitySpec::Exponential { belief, beta } => (belief[i].ln() - lm) / beta,
            UtilitySpec::Hara {
                belief,
                a,
                b,
                gamma,
            } => {
                let s = ((lm - belief[i].ln() - a.ln()) / (gamma - 1.0)).exp();
                (1.0 - gamma) / a * (s - b)
            }
            UtilitySpec::Crra { belief, gamma } => {
                ((lm - gamma.ln() - belief[i].ln()) / (gamma - 1.0)).exp()
            }
            _ => unreachable!(),
        };
        if !w.is_finite() || w <= self.coord_lower_bound(i) {
            return Err(MarketError::Range(format!(
                "log marginal utility {lm} has no finite preimage in coordinate {i}"
            )));
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exponential_at_origin() {
        let u = UtilitySpec::exponential(s(&[0.5, 0.5]), 1.0).unwrap();
        assert_eq!(u.value_at(&[0.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn crra_value() {
        let u = UtilitySpec::crra(s(&[0.5, 0.5]), 0.5).unwrap();
        assert!((u.value_at(&[4.0, 9.0]).unwrap() - 2.5).abs() < 1e-15);
        assert!((u.inverse_marginal(0, 0.125).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_inverse_marginal() {
        let u = UtilitySpec::exponential(s(&[0.5, 0.5]), 1.0).unwrap();
        let w = u.inverse_marginal(0, 0.5 * (-2f64).exp()).unwrap();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn domain_membership() {
        let h = UtilitySpec::hara(s(&[0.2, 0.3, 0.5]), 1.0, 0.8, 0.5).unwrap();
        assert!(!h.domain_contains_slice(&[-1.5, 0.0, 0.0]));
        assert!(h.domain_contains_slice(&[-0.3, 0.0, 0.0]));
        let e = UtilitySpec::exponential(s(&[0.5, 0.5]), 2.0).unwrap();
        assert!(e.domain_contains_slice(&[-1e6, 1e6]));
        let c = UtilitySpec::crra(s(&[0.5, 0.5]), 0.5).unwrap();
        assert!(!c.domain_contains_slice(&[0.0, 1.0]));
        assert!(matches!(c.value_at(&[0.0, 1.0]), Err(MarketError::Domain(_))));
    }

    #[test]
    fn entropic_risk_measure_value() {
        let p = PenaltySpec::relative_entropy(s(&[0.5, 0.5]), 1.0).unwrap();
        let u = UtilitySpec::risk_measure(p).unwrap();
        let expected = -(0.5 * (-1f64).exp() + 0.5 * (-2f64).exp()).ln();
        assert!((u.value_at(&[1.0, 2.0]).unwrap() - expected).abs() < 1e-12);
        let g = u.gradient_at(&[1.0, 2.0]).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_power_penalty_agent() {
        let p = PenaltySpec::power(s(&[0.5, 0.5]), 0.5, 1.0).unwrap();
        assert!(UtilitySpec::risk_measure(p).is_err());
    }

    #[test]
    fn hara_log_limit_is_continuous() {
        let b = s(&[0.3, 0.7]);
        let w = [2.0, 3.0];
        let log = UtilitySpec::hara(b.clone(), 1.5, 0.2, 0.0).unwrap();
        let near = UtilitySpec::hara(b, 1.5, 0.2, 1e-7).unwrap();
        let gl = log.gradient_at(&w).unwrap();
        let gn = near.gradient_at(&w).unwrap();
        for (x, y) in gl.iter().zip(&gn) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn composite_has_no_inverse_marginal() {
        let u = UtilitySpec::composite_entropic_log(s(&[0.5, 0.5]), 1.0, 0.5, 2.0).unwrap();
        assert!(matches!(
            u.inverse_marginal(0, 0.3),
            Err(MarketError::Unsupported(_))
        ));
        assert!(u.value_at(&[1.0, -1.0]).unwrap().is_finite());
        assert!(!u.domain_contains_slice(&[1.0, -2.5]));
    }

    #[test]
    fn json_encoding_is_tagged() {
        let u = UtilitySpec::hara(s(&[0.5, 0.5]), 1.0, 0.0, 0.5).unwrap();
        let text = serde_json::to_string(&u).unwrap();
        assert!(text.contains("\"family\":\"hara\""));
        let back: UtilitySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, u);
        let c: UtilitySpec = serde_json::from_str(
            r#"{"family":"composite_entropic_log","belief":[0.5,0.5],"beta":1,"eta":0,"B":1}"#,
        )
        .unwrap();
        assert_eq!(c.family_name(), "composite_entropic_log");
    }
}
