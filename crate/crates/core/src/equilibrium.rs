//! Direct computation of Pareto optimal allocations and limiting prices.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{MarketError, Result};
use crate::penalty::{dual_optimum, PenaltySpec};
use crate::roots::{find_root, RootOptions, UNBOUNDED};
use crate::trading::Market;
use crate::types::{SimplexVector, WealthVector};
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoSolution {
    pub x_star: Vec<WealthVector>,
    pub y_star: WealthVector,
    pub price: SimplexVector,
    /// Multiplier of the market maker's utility constraint.
    pub lambda: f64,
    /// Per-outcome multipliers of the resource constraints.
    pub mu: Vec<f64>,
    pub kkt_residual: f64,
}

impl ParetoSolution {
    pub fn total_wealth_residual(&self, w_all: f64) -> f64 {
        (0..self.y_star.len())
            .map(|i| {
                (self.y_star[i] + self.x_star.iter().map(|x| x[i]).sum::<f64>() - w_all).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn total_wealth(market: &Market) -> f64 {
    market.maker.initial_wealth + market.traders.iter().map(|t| t.initial_wealth).sum::<f64>()
}

/// `w_i` at log marginal `lm`, saturating at the domain edges.
fn coordinate(u: &UtilitySpec, i: usize, lm: f64) -> f64 {
    match u.inverse_log_marginal(i, lm) {
        Ok(w) => w,
        Err(_) if lm > 0.0 => u.coord_lower_bound(i),
        Err(_) => f64::INFINITY,
    }
}

/// Solves `max Σ_j ω_j V_j(x_j)` subject to `U(y) ≥ U(W0·e)` and
/// `y + Σ_j x_j = w_all·e` for separable utilities.
pub fn solve_pareto(market: &Market, omega: &[f64]) -> Result<ParetoSolution> {
    market.validate()?;
    let j_count = market.traders.len();
    if omega.len() != j_count {
        return Err(MarketError::InvalidInput(format!(
            "{} weights for {j_count} traders",
            omega.len()
        )));
    }
    if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(MarketError::InvalidInput("Pareto weights must be positive".into()));
    }
    let u = &market.maker.utility;
    if !u.is_separable() || market.traders.iter().any(|t| !t.utility.is_separable()) {
        return Err(MarketError::Unsupported(
            "direct Pareto solve needs separable utilities".into(),
        ));
    }
    let n = market.outcomes();
    let w_all = total_wealth(market);
    let target = market.maker_target()?;
    let ln_omega: Vec<f64> = omega.iter().map(|w| w.ln()).collect();

    let opts = RootOptions::default();
    // per-outcome multiplier clearing the resource constraint, given ln λ
    let clear = |i: usize, ln_lambda: f64, start: f64| -> Result<f64> {
        let excess = |ln_mu: f64| -> f64 {
            let mut total = coordinate(u, i, ln_mu - ln_lambda);
            for (t, lw) in market.traders.iter().zip(&ln_omega) {
                total += coordinate(&t.utility, i, ln_mu - lw);
            }
            total - w_all
        };
        Ok(find_root(excess, start - 1.0, start + 1.0, UNBOUNDED, &opts, "resource multiplier")?.x)
    };
    let allocate = |ln_lambda: f64, starts: &[f64]| -> Result<Vec<f64>> {
        (0..n).map(|i| clear(i, ln_lambda, starts[i])).collect()
    };

    // start from the multipliers that support the initial endowment
    let maker_lm: Vec<f64> = (0..n)
        .map(|i| u.log_marginal(i, market.maker.initial_wealth))
        .collect::<Result<_>>()?;
    let start_mu: Vec<f64> = (0..n)
        .map(|i| {
            market.traders[0]
                .utility
                .log_marginal(i, market.traders[0].initial_wealth)
                .map(|lm| lm + ln_omega[0])
        })
        .collect::<Result<_>>()?;
    let ln_lambda0 = start_mu[0] - maker_lm[0];

    let mut failure = None;
    let mut warm = start_mu.clone();
    let binding = |ln_lambda: f64| -> f64 {
        match allocate(ln_lambda, &warm) {
            Ok(ln_mu) => {
                let y: Vec<f64> = (0..n).map(|i| coordinate(u, i, ln_mu[i] - ln_lambda)).collect();
                warm = ln_mu;
                match u.value_at(&y) {
                    Ok(v) => v - target,
                    Err(MarketError::Domain(_)) => f64::NEG_INFINITY,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            }
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        }
    };
    let root = find_root(
        binding,
        ln_lambda0 - 1.0,
        ln_lambda0 + 1.0,
        UNBOUNDED,
        &opts,
        "maker utility multiplier",
    );
    let ln_lambda = match (root, failure) {
        (Ok(r), _) => r.x,
        (Err(_), Some(e)) | (Err(e), None) => return Err(e),
    };
    let ln_mu = allocate(ln_lambda, &start_mu)?;

    let y: Vec<f64> = (0..n).map(|i| coordinate(u, i, ln_mu[i] - ln_lambda)).collect();
    let xs: Vec<Vec<f64>> = market
        .traders
        .iter()
        .zip(&ln_omega)
        .map(|(t, lw)| (0..n).map(|i| coordinate(&t.utility, i, ln_mu[i] - lw)).collect())
        .collect();

    let mut kkt: f64 = 0.0;
    for i in 0..n {
        kkt = kkt.max((u.log_marginal(i, y[i])? + ln_lambda - ln_mu[i]).exp_m1().abs());
        for ((t, x), lw) in market.traders.iter().zip(&xs).zip(&ln_omega) {
            kkt = kkt.max((t.utility.log_marginal(i, x[i])? + lw - ln_mu[i]).exp_m1().abs());
        }
    }
    let m = ln_mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let price = SimplexVector::from_weights(ln_mu.iter().map(|l| (l - m).exp()).collect())?;
    Ok(ParetoSolution {
        x_star: xs
            .into_iter()
            .map(WealthVector::new)
            .collect::<Result<_>>()?,
        y_star: WealthVector::new(y)?,
        price,
        lambda: ln_lambda.exp(),
        mu: ln_mu.iter().map(|l| l.exp()).collect(),
        kkt_residual: kkt,
    })
}

/// One point of a Pareto frontier sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub omega: Vec<f64>,
    pub trader_utilities: Vec<f64>,
    pub price: Vec<f64>,
}

pub fn frontier_point(market: &Market, omega: &[f64]) -> Result<FrontierPoint> {
    let sol = solve_pareto(market, omega)?;
    let trader_utilities = market
        .traders
        .iter()
        .zip(&sol.x_star)
        .map(|(t, x)| t.utility.value(x))
        .collect::<Result<_>>()?;
    Ok(FrontierPoint {
        omega: omega.to_vec(),
        trader_utilities,
        price: sol.price.as_slice().to_vec(),
    })
}

/// Two-trader weight grid `(s, 1 − s)` for `s` evenly spaced in `(0, 1)`.
pub fn two_trader_weights(points: usize) -> Vec<Vec<f64>> {
    (1..=points)
        .map(|k| {
            let s = k as f64 / (points + 1) as f64;
            vec![s, 1.0 - s]
        })
        .collect()
}

fn penalty_of(u: &UtilitySpec) -> Result<&PenaltySpec> {
    match u {
        UtilitySpec::RiskMeasure { penalty } => Ok(penalty),
        other => Err(MarketError::Unsupported(format!(
            "risk-measure equilibrium needs risk-measure agents, got {}",
            other.family_name()
        ))),
    }
}

/// Minimizes the total risk `Σ_k ρ_k(w_k)` over allocations that conserve
/// wealth. Cash is split so the market maker's constraint binds and the
/// remaining surplus is shared equally by the traders.
pub fn risk_measure_equilibrium(market: &Market) -> Result<ParetoSolution> {
    market.validate()?;
    let maker = penalty_of(&market.maker.utility)?;
    let traders: Vec<&PenaltySpec> = market
        .traders
        .iter()
        .map(|t| penalty_of(&t.utility))
        .collect::<Result<_>>()?;
    let n = market.outcomes();
    let jc = traders.len();
    let w_all = total_wealth(market);
    let target = market.maker_target()?;

    let unpack = |v: &[f64]| -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = v.chunks(n).map(|c| c.to_vec()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| w_all - xs.iter().map(|x| x[i]).sum::<f64>())
            .collect();
        (xs, y)
    };
    struct Eval {
        risk: f64,
        grad: Vec<f64>,
        q_traders: Vec<Vec<f64>>,
        q_maker: Vec<f64>,
    }
    let eval = |v: &[f64]| -> Result<Eval> {
        let (xs, y) = unpack(v);
        let dm = dual_optimum(maker, &y)?;
        let mut risk = -dm.value;
        let mut grad = Vec::with_capacity(v.len());
        let mut q_traders = Vec::with_capacity(jc);
        for (p, x) in traders.iter().zip(&xs) {
            let d = dual_optimum(p, x)?;
            risk -= d.value;
            grad.extend(d.q.iter().zip(&dm.q).map(|(a, b)| b - a));
            q_traders.push(d.q);
        }
        Ok(Eval {
            risk,
            grad,
            q_traders,
            q_maker: dm.q,
        })
    };
    let sup = |g: &[f64]| g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let mut v: Vec<f64> = market
        .traders
        .iter()
        .flat_map(|t| std::iter::repeat(t.initial_wealth).take(n))
        .collect();
    let mut cur = eval(&v)?;
    for _ in 0..500 {
        let gn = sup(&cur.grad);
        if gn <= 1e-14 {
            break;
        }
        let mut dir = stacked_newton(maker, &traders, &cur.q_maker, &cur.q_traders, &cur.grad, n)
            .unwrap_or_default();
        let slope: f64 = dir.iter().zip(&cur.grad).map(|(d, g)| d * g).sum();
        if dir.len() != v.len() || !(slope < 0.0) {
            dir = cur.grad.iter().map(|g| -g).collect();
        }
        let slope: f64 = dir.iter().zip(&cur.grad).map(|(d, g)| d * g).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = v.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Ok(next) = eval(&trial) {
                let armijo = next.risk <= cur.risk + 1e-4 * step * slope;
                let flat =
                    next.risk <= cur.risk + 1e-13 * cur.risk.abs().max(1.0) && sup(&next.grad) < gn;
                if armijo || flat {
                    v = trial;
                    cur = next;
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
    let kkt = sup(&cur.grad);
    if kkt > 1e-10 {
        return Err(MarketError::numerical(
            "risk-measure equilibrium",
            format!("gradient norm {kkt:e} above 1e-10"),
        ));
    }

    let (mut xs, mut y) = unpack(&v);
    let maker_shift = target - dual_optimum(maker, &y)?.value;
    let trader_shift = -maker_shift / jc as f64;
    y.iter_mut().for_each(|w| *w += maker_shift);
    for x in xs.iter_mut() {
        x.iter_mut().for_each(|w| *w += trader_shift);
    }
    let q = dual_optimum(maker, &y)?.q;
    Ok(ParetoSolution {
        x_star: xs.into_iter().map(WealthVector::new).collect::<Result<_>>()?,
        y_star: WealthVector::new(y)?,
        price: SimplexVector::from_weights(q.clone())?,
        lambda: 1.0,
        mu: q,
        kkt_residual: kkt,
    })
}

/// `diag(d) − d dᵀ/Σd` with `d_i = 1/f_i'(q_i)`.
fn neg_risk_hessian(penalty: &PenaltySpec, q: &[f64]) -> Option<DMatrix<f64>> {
    let d: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, qi)| {
            if *qi > 0.0 {
                penalty.marginal_derivative(i, *qi).ok().map(|c| 1.0 / c)
            } else {
                Some(0.0)
            }
        })
        .collect::<Option<_>>()?;
    let total: f64 = d.iter().sum();
    let n = q.len();
    Some(DMatrix::from_fn(n, n, |r, c| {
        (if r == c { d[r] } else { 0.0 }) - d[r] * d[c] / total
    }))
}

/// Newton step for the stacked trader positions, with one `Σ_i s_{k,i} = 0`
/// row per trader pinning the cash direction.
fn stacked_newton(
    maker: &PenaltySpec,
    traders: &[&PenaltySpec],
    q_maker: &[f64],
    q_traders: &[Vec<f64>],
    grad: &[f64],
    n: usize,
) -> Option<Vec<f64>> {
    let jc = traders.len();
    let dim = jc * n;
    let h0 = neg_risk_hessian(maker, q_maker)?;
    let mut m = DMatrix::zeros(dim + jc, dim + jc);
    for a in 0..jc {
        for b in 0..jc {
            m.view_mut((a * n, b * n), (n, n)).copy_from(&h0);
        }
        let hk = neg_risk_hessian(traders[a], &q_traders[a])?;
        let mut block = m.view_mut((a * n, a * n), (n, n));
        block += hk;
        for i in 0..n {
            m[(a * n + i, dim + a)] = 1.0;
            m[(dim + a, a * n + i)] = 1.0;
        }
    }
    let mut rhs = DVector::zeros(dim + jc);
    for (k, g) in grad.iter().enumerate() {
        rhs[k] = -g;
    }
    let sol = m.lu().solve(&rhs)?;
    let s: Vec<f64> = sol.iter().take(dim).cloned().collect();
    s.iter().all(|v| v.is_finite()).then_some(s)
}

/// Second-order character of a stationary point on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    Minimum,
    Maximum,
    Saddle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatePrice {
    pub price: SimplexVector,
    /// Simplex multiplier: every summed marginal equals `nu` at `price`.
    pub nu: f64,
    pub kind: StationaryKind,
}

/// Stationary point of `Σ_k α_k(q)` on the simplex: the probability at which
/// all summed marginals `G_i(q_i) = Σ_k f_{k,i}(q_i)` are equal.
pub fn aggregate_penalty_price(penalties: &[PenaltySpec]) -> Result<AggregatePrice> {
    let active: Vec<&PenaltySpec> = penalties.iter().filter(|p| !p.is_inert()).collect();
    let Some(first) = active.first() else {
        return Err(MarketError::InvalidInput(
            "aggregation needs at least one penalty with positive weight".into(),
        ));
    };
    let n = first.outcomes();
    if active.iter().any(|p| p.outcomes() != n) {
        return Err(MarketError::InvalidInput(
            "penalties disagree on the number of outcomes".into(),
        ));
    }
    let increasing = first.has_increasing_marginals();
    if active.iter().any(|p| p.has_increasing_marginals() != increasing) {
        return Err(MarketError::Unsupported(
            "cannot aggregate penalties whose marginals move in opposite directions".into(),
        ));
    }
    let summed = |i: usize, q: f64| -> f64 {
        active
            .iter()
            .map(|p| p.marginal(i, q).unwrap_or(f64::NAN))
            .sum()
    };
    let opts = RootOptions::default();
    // q_i(ν) solving G_i(q_i) = ν, searched in ln q
    let inverse = |i: usize, nu: f64| -> Result<f64> {
        if active.len() == 1 {
            return active[0].marginal_inverse(i, nu);
        }
        let r = find_root(
            |s: f64| summed(i, s.exp()) - nu,
            -3.0,
            0.0,
            UNBOUNDED,
            &opts,
            "summed penalty marginal",
        )?;
        Ok(r.x.exp())
    };
    // the multiplier is searched in ν itself for increasing marginals and
    // in ln ν for the positive, decreasing ones
    let to_nu = |r: f64| if increasing { r } else { r.exp() };
    let mut failure = None;
    let mass = |r: f64| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            match inverse(i, to_nu(r)) {
                Ok(q) => total += q,
                Err(e) => {
                    failure = Some(e);
                    return f64::NAN;
                }
            }
        }
        total - 1.0
    };
    let start = if increasing {
        summed(0, 1.0 / n as f64)
    } else {
        summed(0, 1.0 / n as f64).ln()
    };
    let root = find_root(mass, start - 1.0, start + 1.0, UNBOUNDED, &opts, "simplex multiplier");
    let r = match (root, failure) {
        (Ok(r), _) => r.x,
        (Err(_), Some(e)) | (Err(e), None) => return Err(e),
    };
    let nu = to_nu(r);
    let q: Vec<f64> = (0..n).map(|i| inverse(i, nu)).collect::<Result<_>>()?;
    let price = SimplexVector::from_weights(q)?;

    let mut pos = 0;
    let mut neg = 0;
    for i in 0..n {
        let c: f64 = active
            .iter()
            .map(|p| p.marginal_derivative(i, price[i]))
            .sum::<Result<f64>>()?;
        if c > 0.0 {
            pos += 1;
        } else if c < 0.0 {
            neg += 1;
        }
    }
    let kind = if neg == 0 && pos > 0 {
        StationaryKind::Minimum
    } else if pos == 0 && neg > 0 {
        StationaryKind::Maximum
    } else {
        StationaryKind::Saddle
    };
    Ok(AggregatePrice { price, nu, kind })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trading::Agent;

    fn s(v: &[f64]) -> SimplexVector {
        SimplexVector::new(v.to_vec()).unwrap()
    }

    fn agent(u: UtilitySpec, w: f64) -> Agent {
        Agent {
            utility: u,
            initial_wealth: w,
        }
    }

    #[test]
    fn shared_beliefs_price_at_the_belief() {
        let b = s(&[0.2, 0.3, 0.5]);
        let h = |w| agent(UtilitySpec::hara(b.clone(), 1.0, 0.0, 0.5).unwrap(), w);
        let market = Market::new(h(2.0), vec![h(3.0), h(5.0)]).unwrap();
        let sol = solve_pareto(&market, &[1.0, 1.0]).unwrap();
        assert!(sol.kkt_residual < 1e-12);
        assert!(sol.price.max_abs_diff(&b) < 1e-12);
        assert!(sol.total_wealth_residual(10.0) < 1e-12);
    }

    #[test]
    fn log_penalties_give_arithmetic_mean() {
        let a = PenaltySpec::log(s(&[0.5, 0.5]), 1.0).unwrap();
        let b = PenaltySpec::log(s(&[0.8, 0.2]), 1.0).unwrap();
        let agg = aggregate_penalty_price(&[a, b]).unwrap();
        assert!((agg.price[0] - 0.65).abs() < 1e-12);
        assert_eq!(agg.kind, StationaryKind::Maximum);
    }

    #[test]
    fn entropy_penalties_give_geometric_mean() {
        let a = PenaltySpec::relative_entropy(s(&[0.5, 0.5]), 1.0).unwrap();
        let b = PenaltySpec::relative_entropy(s(&[0.8, 0.2]), 1.0).unwrap();
        let agg = aggregate_penalty_price(&[a, b]).unwrap();
        assert!((agg.price[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg.kind, StationaryKind::Minimum);
    }

    #[test]
    fn risk_measure_equilibrium_price() {
        let rm = |b: &[f64], beta: f64, w: f64| {
            agent(
                UtilitySpec::risk_measure(PenaltySpec::relative_entropy(s(b), beta).unwrap())
                    .unwrap(),
                w,
            )
        };
        let market = Market::new(
            rm(&[0.3, 0.3, 0.4], 1.0, 1.0),
            vec![rm(&[0.6, 0.2, 0.2], 2.0, 5.0), rm(&[0.2, 0.2, 0.6], 0.5, 4.0)],
        )
        .unwrap();
        let sol = risk_measure_equilibrium(&market).unwrap();
        let pens: Vec<PenaltySpec> = std::iter::once(&market.maker)
            .chain(&market.traders)
            .map(|a| penalty_of(&a.utility).unwrap().clone())
            .collect();
        let agg = aggregate_penalty_price(&pens).unwrap();
        assert!(sol.price.max_abs_diff(&agg.price) < 1e-12);
        assert!(sol.total_wealth_residual(10.0) < 1e-12);
        let u = &market.maker.utility;
        assert!((u.value(&sol.y_star).unwrap() - market.maker_target().unwrap()).abs() < 1e-12);
    }
}
