#![allow(dead_code)]

use mumarket_core::{PenaltySpec, SimplexVector, UtilitySpec};
use proptest::prelude::*;

pub fn simplex(v: &[f64]) -> SimplexVector {
    SimplexVector::new(v.to_vec()).unwrap()
}

/// Interior beliefs on `n` outcomes.
pub fn belief(n: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| SimplexVector::from_weights(w).unwrap())
}

pub const FAMILY_COUNT: usize = 5;

/// Family `k` with parameters drawn from `params` (each in `[0, 1)`).
pub fn family(k: usize, belief: SimplexVector, params: [f64; 3]) -> UtilitySpec {
    let [s, t, r] = params;
    match k {
        0 => UtilitySpec::exponential(belief, 0.2 + 2.8 * s).unwrap(),
        1 => UtilitySpec::hara(belief, 0.5 + 1.5 * s, t, -1.0 + 1.9 * r).unwrap(),
        2 => UtilitySpec::crra(belief, 0.1 + 0.8 * s).unwrap(),
        3 => UtilitySpec::risk_measure(PenaltySpec::relative_entropy(belief, 0.2 + 2.8 * s).unwrap())
            .unwrap(),
        _ => UtilitySpec::composite_entropic_log(belief, 0.2 + 2.8 * s, 0.1 + 0.9 * t, 0.5 + 1.5 * r)
            .unwrap(),
    }
}

/// Separable families only: exponential, HARA, CRRA.
pub fn separable(k: usize, belief: SimplexVector, params: [f64; 3]) -> UtilitySpec {
    family(k % 3, belief, params)
}

pub fn params() -> impl Strategy<Value = [f64; 3]> {
    [0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0]
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
