//! Bracketed scalar root finding.
//!
//! Brent's method (bisection safeguard with inverse quadratic and secant
//! steps) plus a geometric bracket expansion that respects open domain
//! limits. Every nested solve in the crate goes through here.

use crate::error::{MarketError, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Stop as soon as `|f(x)| <= ftol`.
    pub ftol: f64,
    /// Absolute tolerance on the bracket half-width (a relative
    /// machine-precision term is always added).
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            ftol: 0.0,
            xtol: 0.0,
            max_iter: 500,
        }
    }
}

impl RootOptions {
    pub fn with_ftol(ftol: f64) -> Self {
        RootOptions {
            ftol,
            ..RootOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// A sign-changing interval together with the endpoint values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

fn opposite_or_zero(a: f64, b: f64) -> bool {
    a == 0.0 || b == 0.0 || (a < 0.0) != (b < 0.0)
}

/// Grows `[lo, hi]` until `f` changes sign, never crossing the open
/// limits `(lower, upper)`. Assumes `f` is monotone.
pub fn expand_bracket<F: FnMut(f64) -> f64>(
    f: &mut F,
    lo: f64,
    hi: f64,
    limits: (f64, f64),
    max_steps: usize,
    context: &str,
) -> Result<Bracket> {
    let (lower, upper) = limits;
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    if lower.is_finite() && lo <= lower {
        lo = if upper.is_finite() {
            lower + 0.5 * (upper - lower).min(1.0)
        } else {
            lower + 1.0
        };
    }
    if upper.is_finite() && hi >= upper {
        hi = if lower.is_finite() {
            upper - 0.5 * (upper - lower).min(1.0)
        } else {
            upper - 1.0
        };
    }
    if hi <= lo {
        hi = lo + (upper - lo).min(1.0) * 0.5;
    }
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    for _ in 0..max_steps {
        if f_lo.is_nan() || f_hi.is_nan() {
            return Err(MarketError::numerical(
                context,
                format!("function is NaN while bracketing at [{lo}, {hi}]"),
            ));
        }
        if opposite_or_zero(f_lo, f_hi) {
            return Ok(Bracket { lo, hi, f_lo, f_hi });
        }
        // the root lies beyond the endpoint with the smaller magnitude
        if f_lo.abs() < f_hi.abs() {
            let width = hi - lo;
            hi = lo;
            f_hi = f_lo;
            lo = if lower.is_finite() {
                lower + 0.1 * (lo - lower)
            } else {
                lo - 1.6 * width.max(1e-3)
            };
            f_lo = f(lo);
        } else {
            let width = hi - lo;
            lo = hi;
            f_lo = f_hi;
            hi = if upper.is_finite() {
                upper - 0.1 * (upper - hi)
            } else {
                hi + 1.6 * width.max(1e-3)
            };
            f_hi = f(hi);
        }
    }
    Err(MarketError::numerical(
        context,
        format!(
            "no sign change found after {max_steps} expansions: f({lo}) = {f_lo}, f({hi}) = {f_hi}"
        ),
    ))
}

/// Brent's method on a sign-changing bracket.
pub fn brent<F: FnMut(f64) -> f64>(
    f: &mut F,
    bracket: Bracket,
    opts: &RootOptions,
    context: &str,
) -> Result<Root> {
    let Bracket {
        lo: mut a,
        hi: mut b,
        f_lo: mut fa,
        f_hi: mut fb,
    } = bracket;
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            fx: 0.0,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            fx: 0.0,
            iterations: 0,
        });
    }
    if !opposite_or_zero(fa, fb) {
        return Err(MarketError::numerical(
            context,
            format!("bracket [{a}, {b}] has no sign change: f = ({fa}, {fb})"),
        ));
    }
    let mut c = b;
    let mut fc = fb;
    let mut d = 0.0_f64;
    let mut e = 0.0_f64;
    for iter in 1..=opts.max_iter {
        if (fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.xtol;
        let xm = 0.5 * (c - b);
        if fb.is_finite() && (fb.abs() <= opts.ftol || fb == 0.0) {
            return Ok(Root {
                x: b,
                fx: fb,
                iterations: iter,
            });
        }
        if xm.abs() <= tol1 {
            if !fb.is_finite() {
                return Err(MarketError::numerical(
                    context,
                    format!("bracket collapsed at {b} with non-finite value"),
                ));
            }
            return Ok(Root {
                x: b,
                fx: fb,
                iterations: iter,
            });
        }
        let interpolate = e.abs() >= tol1
            && fa.abs() > fb.abs()
            && fa.is_finite()
            && fb.is_finite()
            && fc.is_finite();
        if interpolate {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else {
            tol1.copysign(xm)
        };
        fb = f(b);
        if fb.is_nan() {
            return Err(MarketError::numerical(
                context,
                format!("function returned NaN at {b}"),
            ));
        }
    }
    Err(MarketError::numerical(
        context,
        format!("no convergence after {} iterations (x = {b}, f = {fb})", opts.max_iter),
    ))
}

/// Bracket expansion followed by Brent's method.
pub fn find_root<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    limits: (f64, f64),
    opts: &RootOptions,
    context: &str,
) -> Result<Root> {
    let bracket = expand_bracket(&mut f, lo, hi, limits, 400, context)?;
    brent(&mut f, bracket, opts, context)
}

pub(crate) const UNBOUNDED: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
