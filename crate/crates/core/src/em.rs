//! Options, trace and the shared iteration loop for all EM variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specialfn::{find_root_expanding, mv_digamma, mv_trigamma, Expansion, WithDerivative};

/// Which stationarity equation is solved for `ν₀` when it is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuEquation {
    /// Scales the log terms by `n`, matching the multivariate digamma.
    #[default]
    Eq26,
    /// Log terms without the factor `n`.
    Eq27,
}

/// Form of the derivative matrix used in the Minnesota `γ` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaVariant {
    /// `α² diag(ℓ^{2β}) ⊗ E_ii`.
    #[default]
    Consistent,
    /// `α² diag(ℓ^{2β} ln ℓ) ⊗ E_ii`; undefined for `p = 1`.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub update_nu0: bool,
    pub nu0_equation: NuEquation,
    pub gamma_variant: GammaVariant,
    pub root_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            update_nu0: false,
            nu0_equation: NuEquation::Eq26,
            gamma_variant: GammaVariant::Consistent,
            root_tol: crate::specialfn::DEFAULT_ROOT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
    SolverFailure,
}

/// Anything with a degrees-of-freedom hyperparameter, so traces can report it.
pub trait HasNu0 {
    fn nu0(&self) -> f64;
}

impl HasNu0 for crate::params::ModelParams {
    fn nu0(&self) -> f64 {
        self.nu0
    }
}

#[derive(Debug, Clone)]
pub struct TraceEntry<P> {
    pub iter: usize,
    pub params: P,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct EmTrace<P> {
    pub entries: Vec<TraceEntry<P>>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub failure: Option<String>,
}

impl<P> EmTrace<P> {
    pub fn logliks(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loglik).collect()
    }

    /// Largest single-step decrease of the objective (0 if it never drops).
    pub fn max_decrease(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| w[0].loglik - w[1].loglik)
            .fold(0.0, f64::max)
    }

    pub fn final_loglik(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.loglik)
    }
}

impl<P: HasNu0> EmTrace<P> {
    /// CSV with header `iter,loglik,nu0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loglik,nu0\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:?},{:?}\n", e.iter, e.loglik, e.params.nu0()));
        }
        out
    }
}

/// Generic EM driver. Records iteration 0 before the first step and stops
/// when `|Δℓ| / (1 + |ℓ|) < tol`, after `max_iters` steps, or when a step
/// fails (the last good iterate is returned).
pub fn run_em<P, L, S>(init: P, loglik: L, step: S, opts: &FitOptions) -> Result<(P, EmTrace<P>)>
where
    P: Clone,
    L: Fn(&P) -> Result<f64>,
    S: Fn(&P) -> Result<P>,
{
    let l0 = loglik(&init)?;
    if !l0.is_finite() {
        return Err(Error::NonFinite("initial log-likelihood".into()));
    }
    let mut trace = EmTrace {
        entries: vec![TraceEntry {
            iter: 0,
            params: init.clone(),
            loglik: l0,
        }],
        converged: false,
        stop_reason: StopReason::MaxIters,
        failure: None,
    };
    let mut current = init;
    let mut prev = l0;
    for iter in 1..=opts.max_iters {
        let next = match step(&current).and_then(|p| loglik(&p).map(|l| (p, l))) {
            Ok((p, l)) if l.is_finite() => (p, l),
            Ok(_) => {
                trace.stop_reason = StopReason::SolverFailure;
                trace.failure = Some("non-finite log-likelihood after update".into());
                return Ok((current, trace));
            }
            Err(e) => {
                trace.stop_reason = StopReason::SolverFailure;
                trace.failure = Some(e.to_string());
                return Ok((current, trace));
            }
        };
        let (params, l) = next;
        trace.entries.push(TraceEntry {
            iter,
            params: params.clone(),
            loglik: l,
        });
        current = params;
        if (l - prev).abs() / (1.0 + l.abs()) < opts.tol {
            trace.converged = true;
            trace.stop_reason = StopReason::Tolerance;
            return Ok((current, trace));
        }
        prev = l;
    }
    Ok((current, trace))
}

/// Solve `constant + log_coef * ln ν - ψ_n(ν/2) = 0` for `ν > n - 1`.
///
/// The left side is strictly decreasing whenever `log_coef <= n`, running
/// from `+inf` at `ν = n - 1` to `-inf` (or a negative limit) as `ν` grows.
/// `upper_hint` should be near or above the root; the bracket only expands
/// upwards.
pub(crate) fn solve_nu_equation(
    equation: &'static str,
    n: usize,
    constant: f64,
    log_coef: f64,
    upper_hint: f64,
    tol: f64,
) -> Result<f64> {
    let nf = n as f64;
    let f = |nu: f64| constant + log_coef * nu.ln() - mv_digamma(n, 0.5 * nu).unwrap_or(f64::NAN);
    let df = |nu: f64| log_coef / nu - 0.5 * mv_trigamma(n, 0.5 * nu).unwrap_or(f64::NAN);
    let lower = (nf - 1.0) + 1e-8 * nf.max(1.0);
    let upper = upper_hint.max(lower * 2.0).max(nf + 1.0);
    find_root_expanding(&WithDerivative { f, df }, lower, upper, tol, Expansion::Upper)
        .map_err(|e| Error::solver(equation, e))
}
