//! Distances between prices and between allocations.

use crate::error::{MarketError, Result};
use crate::types::{SimplexVector, WealthVector};

/// Kullback-Leibler divergence `Σ p_i ln(p_i / q_i)`.
pub fn kld(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MarketError::InvalidInput(format!(
            "cannot compare {} and {} outcomes",
            p.len(),
            q.len()
        )));
    }
    let mut d = 0.0;
    for (a, b) in p.iter().zip(q.iter()) {
        if *a == 0.0 {
            continue;
        }
        if *b == 0.0 {
            return Err(MarketError::Domain(
                "second distribution has no mass where the first does".into(),
            ));
        }
        d += a * (a / b).ln();
    }
    Ok(d.max(0.0))
}

/// `Σ_j ‖x_sim_j − x_dag_j‖ / Σ_j ‖x_sim_j‖` with Euclidean norms.
pub fn delta_x(sim: &[WealthVector], dag: &[WealthVector]) -> Result<f64> {
    if sim.len() != dag.len() {
        return Err(MarketError::InvalidInput(format!(
            "{} simulated and {} reference positions",
            sim.len(),
            dag.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in sim.iter().zip(dag) {
        if a.len() != b.len() {
            return Err(MarketError::InvalidInput("position lengths differ".into()));
        }
        num += a
            .iter()
            .zip(b.iter())
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        den += a.norm();
    }
    if den == 0.0 {
        return Err(MarketError::Domain("simulated positions are all zero".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kld_values() {
        let p = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        let q = SimplexVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kld(&p, &q).unwrap() - expected).abs() < 1e-15);
        assert!((kld(&p, &q).unwrap() - 0.143841).abs() < 1e-6);
        let edge = SimplexVector::new(vec![1.0, 0.0]).unwrap();
        assert!(kld(&p, &edge).is_err());
        assert!(kld(&edge, &p).is_ok());
    }

    #[test]
    fn delta_x_values() {
        let a = vec![
            WealthVector::new(vec![1.0, 2.0]).unwrap(),
            WealthVector::new(vec![3.0, -1.0]).unwrap(),
        ];
        let doubled: Vec<WealthVector> = a
            .iter()
            .map(|x| WealthVector::new(x.iter().map(|v| 2.0 * v).collect()).unwrap())
            .collect();
        assert_eq!(delta_x(&a, &a).unwrap(), 0.0);
        assert!((delta_x(&a, &doubled).unwrap() - 1.0).abs() < 1e-15);
    }
}
