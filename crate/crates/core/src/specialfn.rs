//! Multivariate gamma, digamma and trigamma functions, and a safeguarded
//! Newton/bisection root finder for the scalar equations of the M-steps.
//!
//! The real multivariate gamma function is
//! `Γ_n(a) = π^{n(n-1)/4} ∏_{j=1}^{n} Γ(a + (1 - j)/2)`, defined for
//! `a > (n - 1)/2`. Everything here works in log space.

use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Default relative tolerance of [`find_root`].
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
/// Maximum number of bracket doublings before giving up.
pub const MAX_BRACKET_EXPANSIONS: usize = 60;
const MAX_ITERATIONS: usize = 500;

fn check_domain(func: &'static str, n: usize, a: f64) -> Result<()> {
    let lower = (n as f64 - 1.0) / 2.0;
    if n == 0 || !(a > lower) || !a.is_finite() {
        return Err(Error::Domain { func, arg: a, lower });
    }
    Ok(())
}

/// `ln Γ_n(a)`.
pub fn log_mvgamma(n: usize, a: f64) -> Result<f64> {
    check_domain("log_mvgamma", n, a)?;
    let nf = n as f64;
    let base = nf * (nf - 1.0) / 4.0 * PI.ln();
    Ok(base + (0..n).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>())
}

/// Multivariate digamma `ψ_n(a) = d/da ln Γ_n(a) = Σ_j ψ(a + (1 - j)/2)`.
pub fn mv_digamma(n: usize, a: f64) -> Result<f64> {
    check_domain("mv_digamma", n, a)?;
    Ok((0..n).map(|j| digamma(a - j as f64 / 2.0)).sum())
}

/// Multivariate trigamma `Σ_j ψ'(a + (1 - j)/2)`; strictly positive.
pub fn mv_trigamma(n: usize, a: f64) -> Result<f64> {
    check_domain("mv_trigamma", n, a)?;
    Ok((0..n).map(|j| trigamma(a - j as f64 / 2.0)).sum())
}

/// Trigamma function `ψ'(x)` for `x > 0`.
///
/// Upward recurrence `ψ'(x) = ψ'(x + 1) + 1/x²` until `x ≥ 20`, then the
/// asymptotic series in `1/x`.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // Bernoulli-number coefficients B_{2k}.
    let series = z
        * (1.0 / 6.0
            + z * (-1.0 / 30.0
                + z * (1.0 / 42.0 + z * (-1.0 / 30.0 + z * (5.0 / 66.0 + z * (-691.0 / 2730.0))))));
    acc + 1.0 / x + z / 2.0 + series / x
}

/// A real function of one variable, optionally with an analytic derivative.
///
/// Plain closures implement this trait without a derivative; the root
/// finder then falls back to secant slopes.
pub trait ScalarFn {
    fn value(&self, x: f64) -> f64;

    fn derivative(&self, _x: f64) -> Option<f64> {
        None
    }
}

impl<F: Fn(f64) -> f64> ScalarFn for F {
    fn value(&self, x: f64) -> f64 {
        self(x)
    }
}

/// Pairs a function with its derivative.
pub struct WithDerivative<F, D> {
    pub f: F,
    pub df: D,
}

impl<F, D> ScalarFn for WithDerivative<F, D>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        Some((self.df)(x))
    }
}

fn eval<F: ScalarFn + ?Sized>(f: &F, x: f64) -> Result<f64> {
    let v = f.value(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue { x })
    }
}

/// Which end of the bracket [`find_root_expanding`] may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expansion {
    /// Only the upper end moves (the lower end is a domain bound).
    Upper,
    /// Only the lower end moves.
    Lower,
    /// The end with the smaller `|f|` moves.
    Both,
}

/// Find a root of `f` in `[lower, upper]`; the endpoints must bracket a
/// sign change.
///
/// Inside the bracket a Newton step is taken (secant slope when no
/// derivative is available) and replaced by bisection whenever it leaves
/// the bracket or fails to halve the previous step. Stops once the step or
/// the bracket width is below `tol * max(1, |x|)`, or `f(x) == 0`.
pub fn find_root<F: ScalarFn + ?Sized>(f: &F, lower: f64, upper: f64, tol: f64) -> Result<f64> {
    solve(f, lower, upper, tol, None)
}

/// Like [`find_root`], but without a sign change the bracket is widened by
/// doubling its width on the side(s) allowed by `expansion`, at most
/// [`MAX_BRACKET_EXPANSIONS`] times.
pub fn find_root_expanding<F: ScalarFn + ?Sized>(
    f: &F,
    lower: f64,
    upper: f64,
    tol: f64,
    expansion: Expansion,
) -> Result<f64> {
    solve(f, lower, upper, tol, Some(expansion))
}

fn solve<F: ScalarFn + ?Sized>(
    f: &F,
    lower: f64,
    upper: f64,
    tol: f64,
    expansion: Option<Expansion>,
) -> Result<f64> {
    let (mut lo, mut hi) = if lower <= upper {
        (lower, upper)
    } else {
        (upper, lower)
    };
    let mut flo = eval(f, lo)?;
    let mut fhi = eval(f, hi)?;
    let mut expansions = 0;
    while flo.signum() == fhi.signum() && flo != 0.0 && fhi != 0.0 {
        let Some(expansion) = expansion else {
            return Err(Error::NoSignChange { lower: lo, upper: hi });
        };
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(Error::NoSignChange { lower: lo, upper: hi });
        }
        expansions += 1;
        let width = (hi - lo).max(f64::EPSILON * lo.abs().max(1.0));
        let move_lower = match expansion {
            Expansion::Upper => false,
            Expansion::Lower => true,
            Expansion::Both => flo.abs() < fhi.abs(),
        };
        if move_lower {
            lo -= width;
            flo = eval(f, lo)?;
        } else {
            hi += width;
            fhi = eval(f, hi)?;
        }
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    // Orient so that f(lo) < 0 < f(hi).
    let (mut neg, mut pos) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let (mut fneg, mut fpos) = if flo < 0.0 { (flo, fhi) } else { (fhi, flo) };

    let mut x = if fneg.abs() < fpos.abs() { neg } else { pos };
    let mut fx = if fneg.abs() < fpos.abs() { fneg } else { fpos };
    let mut prev_x = if x == neg { pos } else { neg };
    let mut prev_fx = if x == neg { fpos } else { fneg };
    let mut dx_old = (pos - neg).abs();
    let mut dx = dx_old;

    for _ in 0..MAX_ITERATIONS {
        let slope = f.derivative(x).unwrap_or_else(|| {
            let denom = x - prev_x;
            if denom != 0.0 {
                (fx - prev_fx) / denom
            } else {
                f64::NAN
            }
        });
        let (a, b) = (neg.min(pos), neg.max(pos));
        let newton = x - fx / slope;
        let use_newton = slope.is_finite()
            && slope != 0.0
            && newton > a
            && newton < b
            && (2.0 * fx).abs() <= (dx_old * slope).abs();
        dx_old = dx;
        let next = if use_newton {
            newton
        } else {
            0.5 * (neg + pos)
        };
        dx = (next - x).abs();
        prev_x = x;
        prev_fx = fx;
        x = next;
        fx = eval(f, x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            neg = x;
            fneg = fx;
        } else {
            pos = x;
            fpos = fx;
        }
        let scale = tol * x.abs().max(1.0);
        if dx <= scale || (pos - neg).abs() <= scale {
            return Ok(x);
        }
    }
    // Bracket still valid: return the better endpoint.
    Ok(if fneg.abs() < fpos.abs() { neg } else { pos })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn log_mvgamma_known_values() {
        assert!(log_mvgamma(1, 1.0).unwrap().abs() < 1e-14);
        assert!((log_mvgamma(1, 0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-14);
        // Γ_2(3/2) = π^{1/2} Γ(3/2) Γ(1) = π/2
        assert!((log_mvgamma(2, 1.5).unwrap() - (PI / 2.0).ln()).abs() < 1e-13);
    }

    #[test]
    fn domain_errors() {
        assert!(log_mvgamma(2, 0.5).is_err());
        assert!(log_mvgamma(0, 3.0).is_err());
        assert!(mv_digamma(3, 1.0).is_err());
        assert!(mv_trigamma(1, 0.0).is_err());
        assert!(mv_trigamma(1, f64::NAN).is_err());
    }

    #[test]
    fn digamma_known_values() {
        assert!((mv_digamma(1, 1.0).unwrap() + EULER_GAMMA).abs() < 1e-13);
        // ψ(2) + ψ(1.5)
        let expected = (1.0 - EULER_GAMMA) + (2.0 - EULER_GAMMA - 2.0 * 2f64.ln());
        assert!((mv_digamma(2, 2.0).unwrap() - expected).abs() < 1e-13);
        assert!((mv_digamma(2, 2.0).unwrap() - 0.4592742).abs() < 1e-6);
    }

    #[test]
    fn trigamma_known_values() {
        assert!((mv_trigamma(1, 1.0).unwrap() - PI * PI / 6.0).abs() < 1e-13);
        // ψ'(3) = π²/6 − 1 − 1/4 ; ψ'(2.5) = π²/2 − 4 − 4/9
        let expected = (PI * PI / 6.0 - 1.25) + (PI * PI / 2.0 - 4.0 - 4.0 / 9.0);
        assert!((mv_trigamma(2, 3.0).unwrap() - expected).abs() < 1e-13);
        assert!((mv_trigamma(2, 3.0).unwrap() - 0.8852919).abs() < 1e-6);
        // ψ'(1/2) = π²/2
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        assert!(trigamma(-1.0).is_nan());
    }

    #[test]
    fn root_of_quadratic() {
        let r = find_root(&|x: f64| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn root_of_digamma_equation_with_exact_solution() {
        let f = |x: f64| {
            digamma(x / 2.0) - digamma(2.0) - x.ln() + 4f64.ln()
        };
        assert!(f(4.0).abs() < 1e-14);
        let r = find_root(&f, 3.0, 5.0, 1e-12).unwrap();
        assert!((r - 4.0).abs() < 1e-9);
        let g = WithDerivative {
            f,
            df: |x: f64| 0.5 * trigamma(x / 2.0) - 1.0 / x,
        };
        let r = find_root(&g, 1.0, 6.0, 1e-12).unwrap();
        assert!((r - 4.0).abs() < 1e-9);
    }

    #[test]
    fn no_sign_change_is_an_error() {
        let err = find_root(&|x: f64| x * x + 3.0, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
        let err = find_root(&|x: f64| x + 3.0, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
        // Widening upwards never reaches the root either.
        let err = find_root_expanding(&|x: f64| x + 3.0, 0.0, 1.0, 1e-10, Expansion::Upper)
            .unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
        let r = find_root_expanding(&|x: f64| x + 3.0, 0.0, 1.0, 1e-12, Expansion::Both).unwrap();
        assert!((r + 3.0).abs() < 1e-10);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let err = find_root(&|x: f64| (x - 0.5).ln(), 0.0, 2.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
    }

    #[test]
    fn bracket_expands_to_far_root() {
        let r =
            find_root_expanding(&|x: f64| x - 1e15, 0.0, 1.0, 1e-12, Expansion::Upper).unwrap();
        assert!((r / 1e15 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn root_is_bit_deterministic() {
        let f = |x: f64| x.exp() - 3.0 * x;
        let a = find_root(&f, 0.0, 1.0, 1e-12).unwrap();
        let b = find_root(&f, 0.0, 1.0, 1e-12).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
