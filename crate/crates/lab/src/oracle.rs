//! Brute-force maximization of a smooth function over the open simplex.
//!
//! Only function values are used: gradients come from central differences
//! and steps are multiplicative (exponentiated gradient) with backtracking, so
//! iterates never leave the interior.

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptimum {
    pub q: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Spread `max_i g_i − min_i g_i` of the gradient at `q`.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub max_iter: usize,
    pub spread_tol: f64,
    pub fd_step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_iter: 200_000,
            spread_tol: 1e-9,
            fd_step: 1e-5,
        }
    }
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, q: &[f64], h: f64) -> Vec<f64> {
    let mut p = q.to_vec();
    (0..q.len())
        .map(|i| {
            let step = h * q[i];
            p[i] = q[i] + step;
            let up = f(&p);
            p[i] = q[i] - step;
            let down = f(&p);
            p[i] = q[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn spread(g: &[f64]) -> f64 {
    let hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

fn mirror_step(q: &[f64], g: &[f64], eta: f64) -> Vec<f64> {
    let m = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().zip(g).map(|(q, g)| q * (eta * (g - m)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Maximizes `f` over probability vectors of length `n`, starting at the
/// uniform point.
pub fn maximize_on_simplex<F: Fn(&[f64]) -> f64>(f: F, n: usize, opts: &OracleOptions) -> SimplexOptimum {
    let mut q = vec![1.0 / n as f64; n];
    let mut value = f(&q);
    let mut eta = 1.0;
    let mut g = gradient(&f, &q, opts.fd_step);
    let mut iterations = 0;
    while iterations < opts.max_iter && spread(&g) > opts.spread_tol * (1.0 + value.abs()) {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = mirror_step(&q, &g, eta);
            let v = f(&cand);
            if v.is_finite() && v >= value {
                q = cand;
                value = v;
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
        g = gradient(&f, &q, opts.fd_step);
    }
    SimplexOptimum {
        spread: spread(&g),
        q,
        value,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_maximum_is_uniform() {
        let f = |q: &[f64]| -q.iter().map(|v| v * v.ln()).sum::<f64>();
        let opt = maximize_on_simplex(f, 4, &OracleOptions::default());
        assert!(opt.q.iter().all(|v| (v - 0.25).abs() < 1e-8));
    }

    #[test]
    fn log_score_maximum_is_belief() {
        let b = [0.1, 0.6, 0.3];
        let f = |q: &[f64]| q.iter().zip(&b).map(|(q, b)| b * q.ln()).sum::<f64>();
        let opt = maximize_on_simplex(f, 3, &OracleOptions::default());
        for (q, b) in opt.q.iter().zip(&b) {
            assert!((q - b).abs() < 1e-8, "{:?}", opt.q);
        }
    }
}
