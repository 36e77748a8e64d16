mod common;

use common::*;
use mumarket_core::pricing::{instantaneous_price, price_order};
use mumarket_core::rng::SplitMix64;
use mumarket_core::trader::{best_response, kkt_residual};
use mumarket_core::trading::{convergence_report, run, Agent, Market, RunOptions, TradingSequence};
use mumarket_core::{PenaltySpec, SimplexVector, TradeDelta, UtilitySpec, WealthVector};
use proptest::prelude::*;

fn agent_pair() -> impl Strategy<Value = (UtilitySpec, UtilitySpec)> {
    (belief(3), belief(3), 0usize..4, params(), params()).prop_map(|(a, b, k, p, q)| match k {
        0 => (family(0, a, p), family(0, b, q)),
        1 => (
            UtilitySpec::hara(a, 1.0, 0.0, -0.5 + p[0]).unwrap(),
            UtilitySpec::hara(b, 1.0, 0.8, -0.5 + p[0]).unwrap(),
        ),
        2 => (family(2, a, p), family(2, b, q)),
        _ => (family(3, a, p), family(3, b, q)),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn best_response_cannot_be_improved(
        (v, u) in agent_pair(),
        x0 in 3.0f64..8.0,
        w0 in 3.0f64..8.0,
        d in prop::collection::vec(-1.0f64..1.0, 3),
        scale in prop::sample::select(vec![1e-4, 1e-2, 0.3]),
    ) {
        let x = WealthVector::uniform(3, x0);
        let y = WealthVector::uniform(3, w0);
        let br = best_response(&v, &u, &x, &y, w0).unwrap();
        let best = v.value(&x.plus(br.z.as_slice())).unwrap();
        // any other order, priced by the market maker, leaves the trader no better off
        let other: Vec<f64> = br.z.as_slice().iter().zip(&d).map(|(z, e)| z + scale * e).collect();
        if let Ok(quote) = price_order(&u, &y, w0, &other) {
            let alt = x.plus(&other).shifted(-quote.delta_w);
            if let Ok(val) = v.value(&alt) {
                prop_assert!(val <= best + 1e-10 * (1.0 + best.abs()), "{val} > {best}");
            }
        }
    }

    #[test]
    fn best_response_satisfies_first_order_conditions(
        (v, u) in agent_pair(),
        x0 in 3.0f64..8.0,
        w0 in 3.0f64..8.0,
    ) {
        let x = WealthVector::uniform(3, x0);
        let y = WealthVector::uniform(3, w0);
        let br = best_response(&v, &u, &x, &y, w0).unwrap();
        let post_x = x.plus(br.z.as_slice());
        let post_y = y.minus(br.z.as_slice());
        let (r, _) = kkt_residual(&v.gradient(&post_x).unwrap(), &u.gradient(&post_y).unwrap());
        prop_assert!(r < 1e-8, "residual {r}");
        prop_assert!(close(u.value(&post_y).unwrap(), u.value(&y).unwrap(), 1e-11));
        prop_assert!(br.trader_utility_gain >= -1e-12);
    }

    #[test]
    fn runs_conserve_wealth_and_pin_the_maker(
        seed in any::<u64>(),
        j in 1usize..5,
        k in 0usize..4,
        random_order in any::<bool>(),
    ) {
        let mut rng = SplitMix64::new(seed);
        let mut b = || SimplexVector::from_weights((0..3).map(|_| rng.uniform(0.05, 1.0)).collect()).unwrap();
        let make = |belief: SimplexVector| match k {
            0 => UtilitySpec::exponential(belief, 1.0).unwrap(),
            1 => UtilitySpec::hara(belief, 1.0, 0.5, 0.3).unwrap(),
            2 => UtilitySpec::crra(belief, 0.5).unwrap(),
            _ => UtilitySpec::risk_measure(PenaltySpec::relative_entropy(belief, 1.0).unwrap()).unwrap(),
        };
        let maker = Agent { utility: make(b()), initial_wealth: 4.0 };
        let traders = (0..j).map(|t| Agent { utility: make(b()), initial_wealth: 2.0 + t as f64 }).collect();
        let market = Market::new(maker, traders).unwrap();
        let seq = if random_order { TradingSequence::random(seed) } else { TradingSequence::identity(j) };
        let traj = run(&market, &seq, &RunOptions::default()).unwrap();
        prop_assert!(traj.converged);
        let mut state = market.initial_state().unwrap();
        let target = market.maker_target().unwrap();
        for s in &traj.snapshots {
            state = state.apply_trade(s.trader, &TradeDelta::new(s.z.clone()).unwrap()).unwrap();
            prop_assert!(state.total_wealth_residual() <= 1e-9);
            prop_assert!((market.maker.utility.value(&state.maker).unwrap() - target).abs() <= 1e-9);
            let p = instantaneous_price(&market.maker.utility, &state.maker).unwrap();
            prop_assert!(p.iter().zip(&s.price).all(|(a, b)| (a - b).abs() < 1e-15));
        }
        prop_assert!(convergence_report(&market, &traj).unwrap().max_kkt_residual <= 1e-7);
    }
}

fn two_trader_market() -> Market {
    let hara = |b: &[f64], bb: f64| UtilitySpec::hara(simplex(b), 1.0, bb, 0.5).unwrap();
    Market::new(
        Agent { utility: hara(&[0.4, 0.4, 0.2], 0.8), initial_wealth: 1.0 },
        vec![
            Agent { utility: hara(&[0.2, 0.2, 0.6], 0.0), initial_wealth: 10.0 },
            Agent { utility: hara(&[0.6, 0.1, 0.3], 0.0), initial_wealth: 10.0 },
        ],
    )
    .unwrap()
}

#[test]
fn same_seed_same_trajectory() {
    let m = two_trader_market();
    let a = run(&m, &TradingSequence::random(9), &RunOptions::default()).unwrap();
    let b = run(&m, &TradingSequence::random(9), &RunOptions::default()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let c = run(&m, &TradingSequence::random(10), &RunOptions::default()).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn arrival_order_changes_hara_limits() {
    let m = two_trader_market();
    let s1 = run(&m, &TradingSequence::round_robin(vec![1, 2]), &RunOptions::default()).unwrap();
    let s2 = run(&m, &TradingSequence::round_robin(vec![2, 1]), &RunOptions::default()).unwrap();
    assert!(s1.converged && s2.converged);
    let gap = s1.final_state.traders[0]
        .iter()
        .zip(s2.final_state.traders[0].iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap > 1e-6);
    for t in [&s1, &s2] {
        assert!(convergence_report(&m, t).unwrap().max_kkt_residual < 1e-7);
    }
}

#[test]
fn round_cap_stops_unconverged() {
    let m = two_trader_market();
    let t = run(&m, &TradingSequence::identity(2).with_max_rounds(2), &RunOptions::default()).unwrap();
    assert!(!t.converged);
    assert_eq!(t.rounds_used, 2);
}
