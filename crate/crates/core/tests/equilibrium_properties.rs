mod common;

use common::*;
use mumarket_core::equilibrium::{
    aggregate_penalty_price, frontier_point, risk_measure_equilibrium, solve_pareto, two_trader_weights,
    StationaryKind,
};
use mumarket_core::formulas::{
    crra_limiting_price, crra_weights_from_omega, exp_limiting_price, exp_price_update, fit_crra_weights,
    hara_approx_price, wealth_weighted_price,
};
use mumarket_core::metrics::{delta_x, kld};
use mumarket_core::trading::{convergence_report, run, Agent, Market, RunOptions, TradingSequence};
use mumarket_core::{PenaltySpec, SimplexVector, UtilitySpec, WealthVector};
use proptest::prelude::*;

fn hara_market(theta: SimplexVector, beliefs: Vec<SimplexVector>, gamma: f64) -> Market {
    let n = beliefs.len();
    Market::new(
        Agent { utility: UtilitySpec::hara(theta, 1.0, 0.5, gamma).unwrap(), initial_wealth: 3.0 },
        beliefs
            .into_iter()
            .enumerate()
            .map(|(j, b)| Agent {
                utility: UtilitySpec::hara(b, 1.0, 0.0, gamma).unwrap(),
                initial_wealth: 4.0 + j as f64 / n as f64,
            })
            .collect(),
    )
    .unwrap()
}

fn entropy_market(theta: SimplexVector, beta: f64, beliefs: &[SimplexVector], alphas: &[f64]) -> Market {
    let rm = |b: SimplexVector, a: f64| {
        UtilitySpec::risk_measure(PenaltySpec::relative_entropy(b, a).unwrap()).unwrap()
    };
    Market::new(
        Agent { utility: rm(theta, beta), initial_wealth: 2.0 },
        beliefs
            .iter()
            .zip(alphas)
            .map(|(b, a)| Agent { utility: rm(b.clone(), *a), initial_wealth: 3.0 })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pareto_solutions_ignore_weight_scale(
        theta in belief(3),
        beliefs in prop::collection::vec(belief(3), 1..4),
        gamma in -1.0f64..0.8,
        scale in 0.01f64..100.0,
        w in prop::collection::vec(0.2f64..5.0, 3),
    ) {
        let m = hara_market(theta, beliefs, gamma);
        let omega = &w[..m.traders.len()];
        let a = solve_pareto(&m, omega).unwrap();
        let scaled: Vec<f64> = omega.iter().map(|v| v * scale).collect();
        let b = solve_pareto(&m, &scaled).unwrap();
        prop_assert!(a.kkt_residual <= 1e-8 && b.kkt_residual <= 1e-8);
        let w_all = 3.0 + m.traders.iter().map(|t| t.initial_wealth).sum::<f64>();
        prop_assert!(a.total_wealth_residual(w_all) < 1e-9);
        prop_assert!(close(m.maker.utility.value(&a.y_star).unwrap(), m.maker_target().unwrap(), 1e-10));
        for (x, y) in a.x_star.iter().zip(&b.x_star) {
            for i in 0..3 {
                prop_assert!((x[i] - y[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn entropy_equilibrium_is_the_aggregate_price(
        theta in belief(4),
        beliefs in prop::collection::vec(belief(4), 1..5),
        beta in 0.2f64..3.0,
        a in prop::collection::vec(0.2f64..3.0, 4),
    ) {
        let alphas = &a[..beliefs.len()];
        let m = entropy_market(theta.clone(), beta, &beliefs, alphas);
        let eq = risk_measure_equilibrium(&m).unwrap();
        let mut penalties = vec![PenaltySpec::relative_entropy(theta.clone(), beta).unwrap()];
        penalties.extend(beliefs.iter().zip(alphas).map(|(b, a)| PenaltySpec::relative_entropy(b.clone(), *a).unwrap()));
        let agg = aggregate_penalty_price(&penalties).unwrap();
        prop_assert_eq!(agg.kind, StationaryKind::Minimum);
        prop_assert!(eq.price.max_abs_diff(&agg.price) < 1e-7);
        let geo = exp_limiting_price(&theta, beta, &beliefs, alphas).unwrap();
        prop_assert!(eq.price.max_abs_diff(&geo) < 1e-6);
    }

    #[test]
    fn exponential_limit_is_a_fixed_point_of_the_update(
        theta in belief(3),
        beliefs in prop::collection::vec(belief(3), 1..5),
        beta in 0.2f64..3.0,
        a in prop::collection::vec(0.2f64..3.0, 4),
    ) {
        let alphas = &a[..beliefs.len()];
        let market = Market::new(
            Agent { utility: UtilitySpec::exponential(theta.clone(), beta).unwrap(), initial_wealth: 2.0 },
            beliefs.iter().zip(alphas).map(|(b, a)| Agent {
                utility: UtilitySpec::exponential(b.clone(), *a).unwrap(),
                initial_wealth: 3.0,
            }).collect(),
        ).unwrap();
        let traj = run(&market, &TradingSequence::identity(beliefs.len()), &RunOptions::default()).unwrap();
        let p = traj.final_price(&market).unwrap();
        let limit = exp_limiting_price(&theta, beta, &beliefs, alphas).unwrap();
        prop_assert!(p.max_abs_diff(&limit) < 1e-8);
        for (j, x) in traj.final_state.traders.iter().enumerate() {
            let next = exp_price_update(&limit, x, &beliefs[j], alphas[j], beta).unwrap();
            prop_assert!(next.max_abs_diff(&limit) < 1e-8);
        }
    }

    #[test]
    fn crra_limits_follow_their_pareto_weights(
        theta in belief(3),
        beliefs in prop::collection::vec(belief(3), 1..4),
        gamma in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let market = Market::new(
            Agent { utility: UtilitySpec::crra(theta.clone(), gamma).unwrap(), initial_wealth: 3.0 },
            beliefs.iter().map(|b| Agent {
                utility: UtilitySpec::crra(b.clone(), gamma).unwrap(),
                initial_wealth: 3.0,
            }).collect(),
        ).unwrap();
        let traj = run(&market, &TradingSequence::random(seed), &RunOptions::default()).unwrap();
        let p = traj.final_price(&market).unwrap();
        let report = convergence_report(&market, &traj).unwrap();
        // trades near a maker wealth of zero can fall under the trade threshold first
        prop_assume!(report.max_kkt_residual < 1e-8);
        let omega: Vec<f64> = report.zetas.iter().map(|z| 1.0 / z).collect();
        let (c0, c) = crra_weights_from_omega(&omega, gamma);
        let predicted = crra_limiting_price(&theta, &beliefs, c0, &c, gamma).unwrap();
        prop_assert!(p.max_abs_diff(&predicted) < 1e-6);
    }
}

#[test]
fn fitted_crra_weights_reproduce_a_simulated_price() {
    let theta = simplex(&[0.3, 0.3, 0.4]);
    let beliefs = vec![simplex(&[0.6, 0.2, 0.2]), simplex(&[0.1, 0.5, 0.4])];
    let gamma = 0.5;
    let market = Market::new(
        Agent { utility: UtilitySpec::crra(theta.clone(), gamma).unwrap(), initial_wealth: 2.0 },
        beliefs
            .iter()
            .map(|b| Agent { utility: UtilitySpec::crra(b.clone(), gamma).unwrap(), initial_wealth: 5.0 })
            .collect(),
    )
    .unwrap();
    let traj = run(&market, &TradingSequence::identity(2), &RunOptions::default()).unwrap();
    let p = traj.final_price(&market).unwrap();
    let (c0, c) = fit_crra_weights(&theta, &beliefs, &p, gamma).unwrap();
    let fitted = crra_limiting_price(&theta, &beliefs, c0, &c, gamma).unwrap();
    assert!(p.max_abs_diff(&fitted) < 1e-6);
}

#[test]
fn frontier_is_concave_and_non_dominated() {
    let m = hara_market(simplex(&[0.4, 0.4, 0.2]), vec![simplex(&[0.2, 0.2, 0.6]), simplex(&[0.6, 0.1, 0.3])], 0.5);
    let pts: Vec<(f64, f64)> = two_trader_weights(15)
        .iter()
        .map(|w| {
            let f = frontier_point(&m, w).unwrap();
            (f.trader_utilities[0], f.trader_utilities[1])
        })
        .collect();
    for a in &pts {
        for b in &pts {
            assert!(!(b.0 >= a.0 && b.1 >= a.1 && (b.0 > a.0 || b.1 > a.1)));
        }
    }
    // V1 increases along the sweep; slopes dV2/dV1 fall
    let slopes: Vec<f64> = pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    assert!(pts.windows(2).all(|w| w[1].0 > w[0].0));
    assert!(slopes.windows(2).all(|s| s[1] <= s[0] + 1e-9), "{slopes:?}");
}

#[test]
fn steep_risk_aversion_approaches_the_geometric_mean() {
    let theta = simplex(&[0.3, 0.3, 0.4]);
    let beliefs = vec![simplex(&[0.6, 0.2, 0.2]), simplex(&[0.2, 0.2, 0.6]), simplex(&[0.1, 0.8, 0.1])];
    let tolerance = [0.5, 1.0, 2.0, 0.8];
    let approx = hara_approx_price(&theta, &beliefs, tolerance[0], &tolerance[1..], -50.0).unwrap();
    let alphas: Vec<f64> = tolerance[1..].iter().map(|t| 1.0 / t).collect();
    let geo = exp_limiting_price(&theta, 1.0 / tolerance[0], &beliefs, &alphas).unwrap();
    assert!(approx.max_abs_diff(&geo) < 1e-3);
}

#[test]
fn log_utility_formula_is_the_wealth_weighted_mean() {
    let theta = simplex(&[0.3, 0.3, 0.4]);
    let beliefs = vec![simplex(&[0.6, 0.2, 0.2]), simplex(&[0.2, 0.2, 0.6])];
    let a = hara_approx_price(&theta, &beliefs, 2.0, &[4.0, 7.0], 0.0).unwrap();
    let b = wealth_weighted_price(&theta, &beliefs, 2.0, &[4.0, 7.0]).unwrap();
    assert_eq!(a, b);
    let manual: Vec<f64> = (0..3).map(|i| (2.0 * theta[i] + 4.0 * beliefs[0][i] + 7.0 * beliefs[1][i]) / 13.0).collect();
    assert!(a.as_slice().iter().zip(&manual).all(|(x, y)| (x - y).abs() < 1e-15));
}

#[test]
fn power_penalty_stationary_points_are_maxima() {
    let penalties = vec![
        PenaltySpec::power(simplex(&[0.3, 0.3, 0.4]), -0.5, 1.0).unwrap(),
        PenaltySpec::power(simplex(&[0.6, 0.2, 0.2]), -0.5, 2.0).unwrap(),
    ];
    assert_eq!(aggregate_penalty_price(&penalties).unwrap().kind, StationaryKind::Maximum);
}

#[test]
fn divergence_metrics() {
    let p = simplex(&[0.5, 0.5]);
    let q = simplex(&[0.25, 0.75]);
    assert_eq!(kld(&p, &p).unwrap(), 0.0);
    assert!((kld(&p, &q).unwrap() - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
    let x = vec![WealthVector::new(vec![1.0, 2.0]).unwrap(), WealthVector::new(vec![3.0, -1.0]).unwrap()];
    let twice: Vec<WealthVector> = x.iter().map(|v| WealthVector::new(v.iter().map(|a| 2.0 * a).collect()).unwrap()).collect();
    assert_eq!(delta_x(&x, &x).unwrap(), 0.0);
    assert!((delta_x(&x, &twice).unwrap() - 1.0).abs() < 1e-15);
}
