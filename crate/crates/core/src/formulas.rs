//! Closed-form and approximate limiting prices.

use nalgebra::{DMatrix, DVector};

use crate::error::{MarketError, Result};
use crate::types::{SimplexVector, WealthVector};

fn check_beliefs(theta: &SimplexVector, beliefs: &[SimplexVector]) -> Result<usize> {
    let n = theta.len();
    if beliefs.iter().any(|b| b.len() != n) {
        return Err(MarketError::InvalidInput(
            "beliefs disagree on the number of outcomes".into(),
        ));
    }
    Ok(n)
}

fn normalize_logs(logs: Vec<f64>) -> Result<SimplexVector> {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    SimplexVector::from_weights(logs.iter().map(|l| (l - m).exp()).collect())
}

/// `(Σ_k w_k v_{k,i}^r)^{1/r}` per outcome, normalized to the simplex.
fn power_mean(vectors: &[&SimplexVector], weights: &[f64], r: f64) -> Result<SimplexVector> {
    if vectors.len() != weights.len() {
        return Err(MarketError::InvalidInput(format!(
            "{} weights for {} beliefs",
            weights.len(),
            vectors.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0)
    {
        return Err(MarketError::InvalidInput(
            "weights must be non-negative and not all zero".into(),
        ));
    }
    let n = vectors[0].len();
    if r == 0.0 {
        // geometric limit
        let total: f64 = weights.iter().sum();
        let logs = (0..n)
            .map(|i| {
                vectors
                    .iter()
                    .zip(weights)
                    .map(|(v, w)| w / total * v[i].ln())
                    .sum()
            })
            .collect();
        return normalize_logs(logs);
    }
    let logs = (0..n)
        .map(|i| {
            let terms: Vec<f64> = vectors
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, w)| w.ln() + r * v[i].ln())
                .collect();
            let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
            lse / r
        })
        .collect();
    normalize_logs(logs)
}

fn stacked<'a>(theta: &'a SimplexVector, beliefs: &'a [SimplexVector]) -> Vec<&'a SimplexVector> {
    std::iter::once(theta).chain(beliefs.iter()).collect()
}

/// Weighted geometric mean of the beliefs with weights proportional to the
/// risk tolerances `1/β` and `1/α_j`.
pub fn exp_limiting_price(
    theta: &SimplexVector,
    beta: f64,
    beliefs: &[SimplexVector],
    alphas: &[f64],
) -> Result<SimplexVector> {
    let n = check_beliefs(theta, beliefs)?;
    if alphas.len() != beliefs.len() {
        return Err(MarketError::InvalidInput(format!(
            "{} risk parameters for {} traders",
            alphas.len(),
            beliefs.len()
        )));
    }
    if !(beta > 0.0) || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(MarketError::InvalidInput("risk parameters must be positive".into()));
    }
    let total = 1.0 / beta + alphas.iter().map(|a| 1.0 / a).sum::<f64>();
    let logs = (0..n)
        .map(|i| {
            theta[i].ln() / beta / total
                + beliefs
                    .iter()
                    .zip(alphas)
                    .map(|(b, a)| b[i].ln() / a / total)
                    .sum::<f64>()
        })
        .collect();
    normalize_logs(logs)
}

/// Price after one exponential trader with position `x` trades against an
/// exponential market maker quoting `p`.
pub fn exp_price_update(
    p: &SimplexVector,
    x: &WealthVector,
    pi: &SimplexVector,
    alpha: f64,
    beta: f64,
) -> Result<SimplexVector> {
    if p.len() != x.len() || p.len() != pi.len() {
        return Err(MarketError::InvalidInput("dimension mismatch".into()));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(MarketError::InvalidInput("risk parameters must be positive".into()));
    }
    let s = alpha + beta;
    let logs = (0..p.len())
        .map(|i| alpha / s * p[i].ln() + beta / s * (pi[i].ln() - alpha * x[i]))
        .collect();
    normalize_logs(logs)
}

/// `p_i ∝ (h_0 θ_i^{1/(1−γ)} + Σ_j h_j π_{i,j}^{1/(1−γ)})^{1−γ}`
pub fn power_mean_price(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    h: &[f64],
    gamma: f64,
) -> Result<SimplexVector> {
    check_beliefs(theta, beliefs)?;
    if !(gamma < 1.0) {
        return Err(MarketError::InvalidInput(format!("gamma must be < 1, got {gamma}")));
    }
    power_mean(&stacked(theta, beliefs), h, 1.0 / (1.0 - gamma))
}

/// `p_i ∝ (h_0 θ_i^{1−γ} + Σ_j h_j π_{i,j}^{1−γ})^{1/(1−γ)}`, the
/// stationary point of a sum of power penalties.
pub fn dual_power_mean_price(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    h: &[f64],
    gamma: f64,
) -> Result<SimplexVector> {
    check_beliefs(theta, beliefs)?;
    if !(gamma < 1.0) {
        return Err(MarketError::InvalidInput(format!("gamma must be < 1, got {gamma}")));
    }
    power_mean(&stacked(theta, beliefs), h, 1.0 - gamma)
}

/// `ω†_j = (1/a_j)(a_j w_{j,0}/(1−γ) + b_j)^{1−γ}`
pub fn omega_dagger(a: &[f64], b: &[f64], w0: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.len() != w0.len() {
        return Err(MarketError::InvalidInput("parameter lists differ in length".into()));
    }
    if !(gamma < 1.0) {
        return Err(MarketError::InvalidInput(format!("gamma must be < 1, got {gamma}")));
    }
    a.iter()
        .zip(b)
        .zip(w0)
        .map(|((a, b), w)| {
            let s = a * w / (1.0 - gamma) + b;
            if !(*a > 0.0 && *b >= 0.0 && *w > 0.0 && s > 0.0) {
                return Err(MarketError::InvalidInput(format!(
                    "invalid HARA parameters a={a}, b={b}, w0={w}"
                )));
            }
            Ok(s.powf(1.0 - gamma) / a)
        })
        .collect()
}

/// `Ŵ = w_0 + (1−γ) b / a`
pub fn risk_adjusted_wealth(w0: f64, a: f64, b: f64, gamma: f64) -> f64 {
    w0 + (1.0 - gamma) * b / a
}

/// `p_i = ((Ŵ_0 θ_i^{1/(1−γ)} + Σ_j Ŵ_j π_{i,j}^{1/(1−γ)}) / (Ŵ_0 + Σ_j Ŵ_j))^{1−γ}`,
/// renormalized.
pub fn hara_approx_price(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    w_hat0: f64,
    w_hat: &[f64],
    gamma: f64,
) -> Result<SimplexVector> {
    if w_hat.len() != beliefs.len() {
        return Err(MarketError::InvalidInput(format!(
            "{} wealths for {} traders",
            w_hat.len(),
            beliefs.len()
        )));
    }
    if !(w_hat0 > 0.0) || w_hat.iter().any(|w| !(*w > 0.0)) {
        return Err(MarketError::InvalidInput("risk-adjusted wealth must be positive".into()));
    }
    let weights: Vec<f64> = std::iter::once(w_hat0).chain(w_hat.iter().cloned()).collect();
    power_mean_price(theta, beliefs, &weights, gamma)
}

/// Wealth-weighted arithmetic mean of all beliefs, market maker included.
pub fn wealth_weighted_price(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    w_hat0: f64,
    w_hat: &[f64],
) -> Result<SimplexVector> {
    hara_approx_price(theta, beliefs, w_hat0, w_hat, 0.0)
}

/// Limiting price of a CRRA market for given aggregation weights.
pub fn crra_limiting_price(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    c_maker: f64,
    c: &[f64],
    gamma: f64,
) -> Result<SimplexVector> {
    let weights: Vec<f64> = std::iter::once(c_maker).chain(c.iter().cloned()).collect();
    power_mean_price(theta, beliefs, &weights, gamma)
}

/// CRRA aggregation weights implied by Pareto weights: `c_k = ω_k^{1/(1−γ)}`,
/// with the market maker at weight one.
pub fn crra_weights_from_omega(omega: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let r = 1.0 / (1.0 - gamma);
    (1.0, omega.iter().map(|w| w.powf(r)).collect())
}

/// Non-negative weights `c` with `Σ_k c_k b_{k,i}^{1/(1−γ)} = p_i^{1/(1−γ)}`
/// in the least-squares sense. Returns `(c_maker, c_traders)`.
pub fn fit_crra_weights(
    theta: &SimplexVector,
    beliefs: &[SimplexVector],
    price: &SimplexVector,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = check_beliefs(theta, beliefs)?;
    if price.len() != n {
        return Err(MarketError::InvalidInput("price has the wrong length".into()));
    }
    let r = 1.0 / (1.0 - gamma);
    let all = stacked(theta, beliefs);
    let a = DMatrix::from_fn(n, all.len(), |i, k| all[k][i].powf(r));
    let rhs = DVector::from_fn(n, |i, _| price[i].powf(r));
    let c = nnls(&a, &rhs)?;
    Ok((c[0], c.iter().skip(1).cloned().collect()))
}

/// Lawson-Hanson active set method for `min ‖Ax − b‖` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = a.ncols();
    let tol = 10.0 * f64::EPSILON * a.norm() * (a.nrows().max(cols) as f64);
    let mut x = DVector::zeros(cols);
    let mut passive = vec![false; cols];
    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..cols).filter(|k| passive[*k]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-14)
            .map_err(|e| MarketError::numerical("non-negative least squares", e))?;
        let mut full = DVector::zeros(cols);
        for (p, k) in idx.iter().enumerate() {
            full[*k] = sol[p];
        }
        Ok(full)
    };
    for _ in 0..(3 * cols + 30) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..cols)
            .filter(|k| !passive[*k] && w[*k] > tol)
            .max_by(|p, q| w[*p].total_cmp(&w[*q]));
        let Some(k) = candidate else {
            return Ok(x);
        };
        passive[k] = true;
        loop {
            let z = solve_passive(&passive)?;
            let bad: Vec<usize> = (0..cols).filter(|k| passive[*k] && z[*k] <= 0.0).collect();
            if bad.is_empty() {
                x = z;
                break;
            }
            let alpha = bad
                .iter()
                .map(|k| x[*k] / (x[*k] - z[*k]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for k in 0..cols {
                if passive[k] && x[k].abs() <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    Err(MarketError::numerical(
        "non-negative least squares",
        "active set iteration limit reached",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn equal_weight_geometric_mean() {
        let p = exp_limiting_price(&s(&[0.5, 0.5]), 1.0, &[s(&[0.8, 0.2])], &[1.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shared_beliefs_are_fixed_points() {
        let t = s(&[0.2, 0.3, 0.5]);
        let beliefs = vec![t.clone(), t.clone()];
        assert!(exp_limiting_price(&t, 2.0, &beliefs, &[1.0, 3.0]).unwrap().max_abs_diff(&t) < 1e-15);
        assert!(power_mean_price(&t, &beliefs, &[1.0, 2.0, 3.0], 0.4).unwrap().max_abs_diff(&t) < 1e-15);
        let x = WealthVector::uniform(3, 4.0);
        assert!(exp_price_update(&t, &x, &t, 0.7, 1.3).unwrap().max_abs_diff(&t) < 1e-15);
    }

    #[test]
    fn huge_risk_aversion_leaves_price() {
        let p = s(&[0.3, 0.7]);
        let x = WealthVector::new(vec![1.0, 2.0]).unwrap();
        let q = exp_price_update(&p, &x, &s(&[0.9, 0.1]), 1e12, 1.0).unwrap();
        // the trader's own wealth tilt e^{−α x} dominates unless x is uniform
        let flat = exp_price_update(&p, &WealthVector::uniform(2, 1.0), &s(&[0.9, 0.1]), 1e12, 1.0)
            .unwrap();
        assert!(flat.max_abs_diff(&p) < 1e-9);
        assert!(q.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn power_means_at_zero_gamma_are_arithmetic() {
        let t = s(&[0.5, 0.5]);
        let b = vec![s(&[0.8, 0.2])];
        let a = power_mean_price(&t, &b, &[1.0, 1.0], 0.0).unwrap();
        let d = dual_power_mean_price(&t, &b, &[1.0, 1.0], 0.0).unwrap();
        assert!((a[0] - 0.65).abs() < 1e-15 && (d[0] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn single_weight_returns_that_belief() {
        let t = s(&[0.5, 0.5]);
        let b = vec![s(&[0.8, 0.2]), s(&[0.1, 0.9])];
        let p = power_mean_price(&t, &b, &[0.0, 0.0, 2.0], -0.7).unwrap();
        assert!(p.max_abs_diff(&b[1]) < 1e-15);
    }

    #[test]
    fn omega_dagger_values() {
        assert_eq!(omega_dagger(&[1.0], &[0.0], &[4.0], 0.0).unwrap(), vec![4.0]);
        let w = omega_dagger(&[1.0], &[0.0], &[4.0], 0.5).unwrap();
        assert!((w[0] - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hara_approx_reduces_to_wealth_weighting() {
        let t = s(&[0.3, 0.3, 0.4]);
        let b = vec![s(&[0.6, 0.2, 0.2]), s(&[0.2, 0.2, 0.6])];
        let h = hara_approx_price(&t, &b, 2.0, &[3.0, 7.0], 0.0).unwrap();
        let w = wealth_weighted_price(&t, &b, 2.0, &[3.0, 7.0]).unwrap();
        assert_eq!(h, w);
    }

    #[test]
    fn nnls_recovers_exact_weights() {
        let t = s(&[0.3, 0.3, 0.4]);
        let b = vec![s(&[0.6, 0.2, 0.2]), s(&[0.2, 0.2, 0.6])];
        let p = crra_limiting_price(&t, &b, 1.0, &[2.0, 0.5], 0.4).unwrap();
        let (cm, c) = fit_crra_weights(&t, &b, &p, 0.4).unwrap();
        let back = crra_limiting_price(&t, &b, cm, &c, 0.4).unwrap();
        assert!(back.max_abs_diff(&p) < 1e-12);
        assert!(cm >= 0.0 && c.iter().all(|v| *v >= 0.0));
    }
}
