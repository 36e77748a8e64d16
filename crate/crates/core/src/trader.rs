//! Trader best response against a utility-preserving market maker.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{MarketError, Result};
use crate::penalty::{dual_optimum, PenaltySpec};
use crate::roots::{find_root, RootOptions, UNBOUNDED};
use crate::types::{TradeDelta, WealthVector};
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, Copy)]
pub struct TraderOptions {
    /// Below this KKT residual at `z = 0` the trader does not trade.
    pub degenerate_tol: f64,
    /// Gradient target of the risk-measure descent.
    pub descent_tol: f64,
    pub descent_max_iter: usize,
}

impl Default for TraderOptions {
    fn default() -> Self {
        TraderOptions {
            degenerate_tol: 1e-12,
            descent_tol: 1e-14,
            descent_max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    pub z: TradeDelta,
    pub trader_utility_gain: f64,
    pub kkt_residual: f64,
    /// Multiplier of the market maker's utility constraint.
    pub zeta: f64,
}

/// Stationarity violation `max_i |g_i − ζ h_i| / g_i` with `ζ = Σg / Σh`.
pub fn kkt_residual(trader_grad: &[f64], maker_grad: &[f64]) -> (f64, f64) {
    let zeta = trader_grad.iter().sum::<f64>() / maker_grad.iter().sum::<f64>();
    let r = trader_grad
        .iter()
        .zip(maker_grad)
        .map(|(g, h)| {
            if *g == 0.0 && *h == 0.0 {
                0.0
            } else {
                (g - zeta * h).abs() / g
            }
        })
        .fold(0.0, f64::max);
    (r, zeta)
}

/// `V(x + z) − V(x)`
pub fn utility_gain(v: &UtilitySpec, x: &WealthVector, z: &TradeDelta) -> Result<f64> {
    Ok(v.value(&x.plus(z.as_slice()))? - v.value(x)?)
}

pub fn best_response(
    v: &UtilitySpec,
    u: &UtilitySpec,
    x: &WealthVector,
    y: &WealthVector,
    w0: f64,
) -> Result<BestResponse> {
    best_response_with(v, u, x, y, w0, &TraderOptions::default())
}

pub fn best_response_with(
    v: &UtilitySpec,
    u: &UtilitySpec,
    x: &WealthVector,
    y: &WealthVector,
    w0: f64,
    opts: &TraderOptions,
) -> Result<BestResponse> {
    let n = u.outcomes();
    if v.outcomes() != n || x.len() != n || y.len() != n {
        return Err(MarketError::InvalidInput(
            "trader, market maker and positions disagree on the number of outcomes".into(),
        ));
    }
    let target = u.value(&WealthVector::uniform(n, w0))?;
    let v_now = v.value(x)?;
    let u_now = u.value(y)?;

    let gv = v.gradient(x)?;
    let gu = u.gradient(y)?;
    let (r0, zeta0) = kkt_residual(&gv, &gu);
    if r0 <= opts.degenerate_tol && (u_now - target).abs() <= 1e-12 * target.abs().max(1.0) {
        return Ok(BestResponse {
            z: TradeDelta::zero(n),
            trader_utility_gain: 0.0,
            kkt_residual: r0,
            zeta: zeta0,
        });
    }

    let z = match (v, u) {
        (
            UtilitySpec::Exponential {
                belief: pi,
                beta: alpha,
            },
            UtilitySpec::Exponential { belief: theta, beta },
        ) => {
            let lp: Vec<f64> = (0..n).map(|i| pi[i].ln() - alpha * x[i]).collect();
            let lt: Vec<f64> = (0..n).map(|i| theta[i].ln() - beta * y[i]).collect();
            exponential_closed_form(&lp, &lt, *alpha, *beta, w0)
        }
        (UtilitySpec::RiskMeasure { penalty: pv }, UtilitySpec::RiskMeasure { penalty: pu }) => {
            let z = risk_measure_descent(pv, pu, x.as_slice(), y.as_slice(), opts)?;
            // translation invariance: shift along e until U binds
            let c = u.value_at(&sub(y.as_slice(), &z))? - target;
            z.iter().map(|zi| zi + c).collect()
        }
        _ if v.is_separable() && u.is_separable() => {
            separable_response(v, u, x.as_slice(), y.as_slice(), target)?
        }
        _ => {
            return Err(MarketError::Unsupported(format!(
                "no best-response solver for a {} trader against a {} market maker",
                v.family_name(),
                u.family_name()
            )))
        }
    };

    let z = TradeDelta::new(z)?;
    let x_new = x.plus(z.as_slice());
    let y_new = y.minus(z.as_slice());
    let (kkt, zeta) = kkt_residual(&v.gradient(&x_new)?, &u.gradient(&y_new)?);
    Ok(BestResponse {
        trader_utility_gain: v.value(&x_new)? - v_now,
        z,
        kkt_residual: kkt,
        zeta,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exponential trader against an exponential market maker.
///
/// `lp` and `lt` are the logs of the risk-adjusted beliefs
/// `π_i e^{−α x_i}` and `θ_i e^{−β y_i}`.
fn exponential_closed_form(lp: &[f64], lt: &[f64], alpha: f64, beta: f64, w0: f64) -> Vec<f64> {
    let s = alpha + beta;
    let mixed: Vec<f64> = lp
        .iter()
        .zip(lt)
        .map(|(p, t)| (alpha * t + beta * p) / s)
        .collect();
    let ln_zeta = s / beta * (log_sum_exp(&mixed) + beta * w0);
    lp.iter()
        .zip(lt)
        .map(|(p, t)| (p - ln_zeta - t) / s)
        .collect()
}

/// Root of a strictly decreasing `φ` on the open interval `(lo, hi)`, where
/// `φ → +∞` at `lo` and `φ → −∞` at `hi`. Newton steps, bisection fallback.
fn solve_decreasing<F: FnMut(f64) -> (f64, f64)>(
    mut phi: F,
    lo: f64,
    hi: f64,
    start: f64,
) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let mut x = if start > a && start < b {
        start
    } else if a.is_finite() && b.is_finite() {
        0.5 * (a + b)
    } else if a.is_finite() {
        a + 1.0
    } else if b.is_finite() {
        b - 1.0
    } else {
        0.0
    };
    for _ in 0..400 {
        let (f, df) = phi(x);
        if f == 0.0 {
            return Ok(x);
        }
        if f.is_nan() {
            return Err(MarketError::numerical(
                "coordinate trade",
                format!("stationarity equation is NaN at {x}"),
            ));
        }
        if f > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - f / df;
        let next = if newton.is_finite() && newton > a && newton < b {
            newton
        } else if a.is_finite() && b.is_finite() {
            0.5 * (a + b)
        } else if a.is_finite() {
            a + 2.0 * (1.0 + (a - x).abs()).max(1.0 + a.abs())
        } else {
            b - 2.0 * (1.0 + (b - x).abs()).max(1.0 + b.abs())
        };
        let tol = 4.0 * f64::EPSILON * (1.0 + next.abs());
        if (next - x).abs() <= tol || (b - a) <= tol {
            return Ok(next);
        }
        x = next;
    }
    Err(MarketError::numerical(
        "coordinate trade",
        format!("no convergence inside ({a}, {b})"),
    ))
}

/// Nested solve for expected-utility families: per-coordinate stationarity
/// `ln V_i'(x_i + z_i) − ln U_i'(y_i − z_i) = ln ζ`, outer root on the
/// binding market maker constraint.
fn separable_response(
    v: &UtilitySpec,
    u: &UtilitySpec,
    x: &[f64],
    y: &[f64],
    target: f64,
) -> Result<Vec<f64>> {
    let n = x.len();
    let limits: Vec<(f64, f64)> = (0..n)
        .map(|i| (v.coord_lower_bound(i) - x[i], y[i] - u.coord_lower_bound(i)))
        .collect();
    let mut warm = vec![0.0; n];
    let trade = |ln_zeta: f64, warm: &mut Vec<f64>| -> Result<Vec<f64>> {
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let zi = solve_decreasing(
                |t| {
                    let f = v.log_marginal_unchecked(i, x[i] + t)
                        - u.log_marginal_unchecked(i, y[i] - t)
                        - ln_zeta;
                    let df = v.log_marginal_slope(i, x[i] + t) + u.log_marginal_slope(i, y[i] - t);
                    (f, df)
                },
                limits[i].0,
                limits[i].1,
                warm[i],
            )?;
            warm[i] = zi;
            z.push(zi);
        }
        Ok(z)
    };
    let ln_zeta0: f64 = {
        let gv = v.gradient_at(x)?;
        let gu = u.gradient_at(y)?;
        (gv.iter().sum::<f64>() / gu.iter().sum::<f64>()).ln()
    };
    let mut failure = None;
    let residual = |ln_zeta: f64| -> f64 {
        match trade(ln_zeta, &mut warm) {
            Ok(z) => match u.value_at(&sub(y, &z)) {
                Ok(val) => val - target,
                Err(MarketError::Domain(_)) => f64::NEG_INFINITY,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            },
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        }
    };
    let root = find_root(
        residual,
        ln_zeta0 - 1.0,
        ln_zeta0 + 1.0,
        UNBOUNDED,
        &RootOptions::default(),
        "constraint multiplier",
    );
    let root = match (root, failure) {
        (Ok(r), _) => r,
        (Err(_), Some(e)) => return Err(e),
        (Err(e), None) => return Err(e),
    };
    trade(root.x, &mut warm)
}

/// Hessian of `−U` for a dual-form risk measure: `diag(d) − d dᵀ / Σd`
/// with `d_i = 1 / f_i'(q_i)`.
fn risk_hessian(penalty: &PenaltySpec, q: &[f64]) -> Result<DMatrix<f64>> {
    let n = q.len();
    let d: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            if *qi > 0.0 {
                penalty.marginal_derivative(i, *qi).map(|c| 1.0 / c)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<_>>()?;
    let total: f64 = d.iter().sum();
    Ok(DMatrix::from_fn(n, n, |r, c| {
        let diag = if r == c { d[r] } else { 0.0 };
        diag - d[r] * d[c] / total
    }))
}

/// Minimizes `ρ_j(x + z) + ρ_0(y − z)` over `Σ z_i = 0`.
fn risk_measure_descent(
    trader: &PenaltySpec,
    maker: &PenaltySpec,
    x: &[f64],
    y: &[f64],
    opts: &TraderOptions,
) -> Result<Vec<f64>> {
    let n = x.len();
    let eval = |z: &[f64]| -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let xv: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
        let yv = sub(y, z);
        let dv = dual_optimum(trader, &xv)?;
        let du = dual_optimum(maker, &yv)?;
        let h = -dv.value - du.value;
        let g: Vec<f64> = du.q.iter().zip(&dv.q).map(|(a, b)| a - b).collect();
        Ok((h, g, dv.q, du.q))
    };
    let sup = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut z = vec![0.0; n];
    let (mut h, mut g, mut qv, mut qu) = eval(&z)?;
    for _ in 0..opts.descent_max_iter {
        let gn = sup(&g);
        if gn <= opts.descent_tol {
            break;
        }
        let mut dir = newton_direction(trader, maker, &qv, &qu, &g).unwrap_or_default();
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if dir.len() != n || !(slope < 0.0) {
            let mean = g.iter().sum::<f64>() / n as f64;
            dir = g.iter().map(|gi| mean - gi).collect();
        }
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Ok((h2, g2, qv2, qu2)) = eval(&trial) {
                let armijo = h2 <= h + 1e-4 * step * slope;
                let flat = h2 <= h + 1e-13 * h.abs().max(1.0) && sup(&g2) < gn;
                if armijo || flat {
                    z = trial;
                    h = h2;
                    g = g2;
                    qv = qv2;
                    qu = qu2;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if sup(&g) > 1e-10 {
        return Err(MarketError::numerical(
            "risk-measure descent",
            format!("gradient norm {:e} above 1e-10", sup(&g)),
        ));
    }
    Ok(z)
}

/// Newton step restricted to `Σ s_i = 0` via the bordered KKT system.
fn newton_direction(
    trader: &PenaltySpec,
    maker: &PenaltySpec,
    qv: &[f64],
    qu: &[f64],
    g: &[f64],
) -> Option<Vec<f64>> {
    let n = g.len();
    let hess = risk_hessian(trader, qv).ok()? + risk_hessian(maker, qu).ok()?;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&hess);
    for i in 0..n {
        m[(i, n)] = 1.0;
        m[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = -g[i];
    }
    let sol = m.lu().solve(&rhs)?;
    let s: Vec<f64> = sol.iter().take(n).cloned().collect();
    s.iter().all(|v| v.is_finite()).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::instantaneous_price;
    use crate::types::SimplexVector;

    fn s(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exponential_trade_moves_price_to_two_thirds() {
        let u = UtilitySpec::exponential(s(&[0.5, 0.5]), 1.0).unwrap();
        let v = UtilitySpec::exponential(s(&[0.8, 0.2]), 1.0).unwrap();
        let x = WealthVector::uniform(2, 1.0);
        let y = WealthVector::uniform(2, 1.0);
        let br = best_response(&v, &u, &x, &y, 1.0).unwrap();
        let p = instantaneous_price(&u, &y.minus(br.z.as_slice())).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!(br.trader_utility_gain > 0.0);
        assert!(br.kkt_residual < 1e-12);
    }

    #[test]
    fn agreement_means_no_trade() {
        let u = UtilitySpec::hara(s(&[0.2, 0.3, 0.5]), 1.0, 0.0, 0.5).unwrap();
        let v = UtilitySpec::hara(s(&[0.2, 0.3, 0.5]), 1.0, 0.0, 0.5).unwrap();
        let br = best_response(
            &v,
            &u,
            &WealthVector::uniform(3, 4.0),
            &WealthVector::uniform(3, 2.0),
            2.0,
        )
        .unwrap();
        assert_eq!(br.z.max_abs(), 0.0);
    }

    #[test]
    fn generic_branch_matches_closed_form() {
        let u = UtilitySpec::exponential(s(&[0.3, 0.3, 0.4]), 0.7).unwrap();
        let v = UtilitySpec::exponential(s(&[0.6, 0.1, 0.3]), 2.0).unwrap();
        let x = WealthVector::new(vec![1.0, -0.5, 2.0]).unwrap();
        let y = WealthVector::new(vec![0.2, 1.1, 0.4]).unwrap();
        let w0 = 0.5;
        let closed = best_response(&v, &u, &x, &y, w0).unwrap();
        let target = u.value_at(&[w0; 3]).unwrap();
        let generic = separable_response(&v, &u, x.as_slice(), y.as_slice(), target).unwrap();
        for (a, b) in closed.z.as_slice().iter().zip(&generic) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn hara_response_binds_and_is_stationary() {
        let u = UtilitySpec::hara(s(&[0.3, 0.3, 0.4]), 1.0, 0.8, 0.5).unwrap();
        let v = UtilitySpec::hara(s(&[0.2, 0.2, 0.6]), 1.0, 0.0, 0.5).unwrap();
        let x = WealthVector::uniform(3, 10.0);
        let y = WealthVector::uniform(3, 1.0);
        let br = best_response(&v, &u, &x, &y, 1.0).unwrap();
        let post = u.value(&y.minus(br.z.as_slice())).unwrap();
        assert!((post - u.value(&y).unwrap()).abs() < 1e-12);
        assert!(br.kkt_residual < 1e-10);
        assert!(br.trader_utility_gain > 0.0);
    }

    #[test]
    fn risk_measure_pair_equalizes_probabilities() {
        let pu = PenaltySpec::relative_entropy(s(&[0.3, 0.3, 0.4]), 1.0).unwrap();
        let pv = PenaltySpec::relative_entropy(s(&[0.6, 0.1, 0.3]), 2.0).unwrap();
        let u = UtilitySpec::risk_measure(pu).unwrap();
        let v = UtilitySpec::risk_measure(pv).unwrap();
        let x = WealthVector::uniform(3, 3.0);
        let y = WealthVector::uniform(3, 1.0);
        let br = best_response(&v, &u, &x, &y, 1.0).unwrap();
        let qv = v.gradient(&x.plus(br.z.as_slice())).unwrap();
        let qu = u.gradient(&y.minus(br.z.as_slice())).unwrap();
        for (a, b) in qv.iter().zip(&qu) {
            assert!((a - b).abs() < 1e-12);
        }
        let post = u.value(&y.minus(br.z.as_slice())).unwrap();
        assert!((post - u.value(&y).unwrap()).abs() < 1e-12);
        // matches the exponential closed form with the same parameters
        let ue = UtilitySpec::exponential(s(&[0.3, 0.3, 0.4]), 1.0).unwrap();
        let ve = UtilitySpec::exponential(s(&[0.6, 0.1, 0.3]), 2.0).unwrap();
        let be = best_response(&ve, &ue, &x, &y, 1.0).unwrap();
        for (a, b) in br.z.as_slice().iter().zip(be.z.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kkt_residual_of_proportional_gradients() {
        let (r, zeta) = kkt_residual(&[0.2, 0.4], &[0.1, 0.2]);
        assert_eq!(r, 0.0);
        assert_eq!(zeta, 2.0);
    }
}
