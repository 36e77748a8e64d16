//! Utility-preserving order pricing, instantaneous prices, the equivalent
//! cost function and the induced scoring rule.

use serde::Serialize;

use crate::error::{MarketError, Result};
use crate::roots::{find_root, RootOptions, UNBOUNDED};
use crate::types::{SimplexVector, WealthVector};
use crate::utility::UtilitySpec;

/// Charge for an order and the market maker's resulting position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Quote {
    pub delta_w: f64,
    pub post_y: WealthVector,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Smallest `w` with `U(base + w·e) ≥ target`.
pub(crate) fn min_cash(u: &UtilitySpec, base: &[f64], target: f64, context: &str) -> Result<f64> {
    let lower = base
        .iter()
        .enumerate()
        .map(|(i, b)| u.coord_lower_bound(i) - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut point = base.to_vec();
    let mut g = |w: f64| -> f64 {
        for (p, b) in point.iter_mut().zip(base) {
            *p = b + w;
        }
        match u.value_at(&point) {
            Ok(v) => v - target,
            Err(MarketError::Domain(_)) => f64::NEG_INFINITY,
            Err(_) => f64::NAN,
        }
    };
    if lower.is_finite() {
        let edge = lower + 1e-12 * (1.0 + lower.abs());
        if g(edge) > 0.0 {
            return Err(MarketError::Domain(format!(
                "no charge keeps the position inside the domain while binding; the infimum {lower} lies on the boundary"
            )));
        }
    }
    let span = sup_norm(base) + 1.0;
    let root = find_root(
        g,
        -span,
        span,
        (lower, f64::INFINITY),
        &RootOptions::default(),
        context,
    )?;
    if !root.x.is_finite() {
        return Err(MarketError::numerical(
            context,
            "required payment is unbounded",
        ));
    }
    Ok(root.x)
}

/// Lowest charge for the bundle `dq` that keeps `U` at `U(W0·e)`.
pub fn price_order(u: &UtilitySpec, y: &WealthVector, w0: f64, dq: &[f64]) -> Result<Quote> {
    if dq.len() != y.len() || dq.len() != u.outcomes() {
        return Err(MarketError::InvalidInput(format!(
            "order has {} entries, market has {} outcomes",
            dq.len(),
            u.outcomes()
        )));
    }
    if dq.iter().any(|v| !v.is_finite()) {
        return Err(MarketError::InvalidInput("order entries must be finite".into()));
    }
    let target = u.value(&WealthVector::uniform(y.len(), w0))?;
    let base: Vec<f64> = y.iter().zip(dq).map(|(a, b)| a - b).collect();
    let delta_w = min_cash(u, &base, target, "order pricing")?;
    let post_y = WealthVector::new(base.iter().map(|b| b + delta_w).collect())?;
    Ok(Quote { delta_w, post_y })
}

/// Normalized gradient of `U` at the market maker's position.
pub fn instantaneous_price(u: &UtilitySpec, y: &WealthVector) -> Result<SimplexVector> {
    let g = u.gradient(y)?;
    let total: f64 = g.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(MarketError::Domain(format!(
            "gradient at {:?} cannot be normalized",
            y.as_slice()
        )));
    }
    SimplexVector::new(g.iter().map(|v| v / total).collect())
}

/// `C_U(q) = min { W : U(W·e − q) ≥ U(W0·e) }`
pub fn cost_function_value(u: &UtilitySpec, w0: f64, q: &[f64]) -> Result<f64> {
    if q.len() != u.outcomes() {
        return Err(MarketError::InvalidInput(format!(
            "quantity vector has {} entries, utility has {} outcomes",
            q.len(),
            u.outcomes()
        )));
    }
    let target = u.value(&WealthVector::uniform(q.len(), w0))?;
    let base: Vec<f64> = q.iter().map(|v| -v).collect();
    min_cash(u, &base, target, "cost function")
}

/// Uniform wealth `w` with `U(w·e) = U(y)`.
pub fn certainty_equivalent(u: &UtilitySpec, y: &WealthVector) -> Result<f64> {
    let level = u.value(y)?;
    min_cash(u, &vec![0.0; y.len()], level, "certainty equivalent")
}

/// `S(p) = −argmin { pᵀy : U(y) ≥ U(W0·e) }` for strictly concave
/// separable utilities.
pub fn induced_scoring_rule(u: &UtilitySpec, w0: f64, p: &SimplexVector) -> Result<Vec<f64>> {
    if !u.is_separable() {
        return Err(MarketError::Unsupported(format!(
            "scoring rule needs a separable utility, not {}",
            u.family_name()
        )));
    }
    if p.len() != u.outcomes() {
        return Err(MarketError::InvalidInput(format!(
            "price has {} entries, utility has {} outcomes",
            p.len(),
            u.outcomes()
        )));
    }
    if !p.is_interior() {
        return Err(MarketError::Domain(
            "scoring rule is only defined at interior prices".into(),
        ));
    }
    let target = u.value(&WealthVector::uniform(p.len(), w0))?;
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let position = |ln_nu: f64| -> Result<Vec<f64>> {
        log_p
            .iter()
            .enumerate()
            .map(|(i, lp)| u.inverse_log_marginal(i, lp - ln_nu))
            .collect()
    };
    let residual = |ln_nu: f64| -> f64 {
        match position(ln_nu) {
            Ok(y) => u.value_at(&y).map_or(f64::NAN, |v| v - target),
            // positions run off the bottom of the domain for small multipliers
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let start = u
        .log_marginal(0, w0)
        .map(|lm| log_p[0] - lm)
        .unwrap_or(0.0);
    let root = find_root(
        residual,
        start - 1.0,
        start + 1.0,
        UNBOUNDED,
        &RootOptions::default(),
        "scoring rule multiplier",
    )?;
    Ok(position(root.x)?.iter().map(|v| -v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_half() -> UtilitySpec {
        UtilitySpec::exponential(SimplexVector::new(vec![0.5, 0.5]).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn zero_order_is_free() {
        let y = WealthVector::uniform(2, 1.0);
        let q = price_order(&exp_half(), &y, 1.0, &[0.0, 0.0]).unwrap();
        assert!(q.delta_w.abs() < 1e-15);
    }

    #[test]
    fn sure_bet_costs_face_value() {
        let y = WealthVector::uniform(2, 1.0);
        let q = price_order(&exp_half(), &y, 1.0, &[2.5, 2.5]).unwrap();
        assert!((q.delta_w - 2.5).abs() < 1e-14);
    }

    #[test]
    fn single_security_price() {
        let y = WealthVector::uniform(2, 1.0);
        let q = price_order(&exp_half(), &y, 1.0, &[1.0, 0.0]).unwrap();
        let expected = (0.5 * (1f64.exp() + 1.0)).ln();
        assert!((q.delta_w - expected).abs() < 1e-13);
        assert!((q.delta_w - 0.620115).abs() < 1e-6);
    }

    #[test]
    fn instantaneous_price_value() {
        let y = WealthVector::new(vec![1.0, 2.0]).unwrap();
        let p = instantaneous_price(&exp_half(), &y).unwrap();
        assert!((p[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
        assert!((p[0] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn cost_function_basics() {
        let u = exp_half();
        assert!((cost_function_value(&u, 1.0, &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-14);
        let c = cost_function_value(&u, 1.0, &[3.0, 3.0]).unwrap();
        assert!((c - 4.0).abs() < 1e-13);
    }

    #[test]
    fn certainty_equivalent_of_uniform_wealth() {
        let w = certainty_equivalent(&exp_half(), &WealthVector::uniform(2, 3.5)).unwrap();
        assert!((w - 3.5).abs() < 1e-14);
    }

    #[test]
    fn symmetric_scoring_rule() {
        let s = induced_scoring_rule(&exp_half(), 1.0, &SimplexVector::uniform(2).unwrap())
            .unwrap();
        assert!((s[0] + 1.0).abs() < 1e-12 && (s[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hara_pricing_stays_in_domain() {
        let u = UtilitySpec::hara(
            SimplexVector::new(vec![0.3, 0.3, 0.4]).unwrap(),
            1.0,
            0.8,
            0.5,
        )
        .unwrap();
        let y = WealthVector::uniform(3, 1.0);
        let q = price_order(&u, &y, 1.0, &[1.0, 0.0, 0.0]).unwrap();
        assert!(u.domain_contains(&q.post_y));
        let after = u.value(&q.post_y).unwrap();
        let before = u.value(&y).unwrap();
        assert!((after - before).abs() < 1e-12);
        // this order would push the market maker onto its domain boundary
        assert!(matches!(
            price_order(&u, &y, 1.0, &[5.0, 0.0, 0.0]),
            Err(MarketError::Domain(_))
        ));
    }
}
