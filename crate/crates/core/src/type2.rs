//! Type II model: `(Π_t, Σ_t)` drawn independently each period.
//!
//! Per-period work runs on the rayon pool; results are collected in period
//! order and reduced sequentially, so sums are bit-identical regardless of
//! the thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::dataio::DesignMatrices;
use crate::em::{run_em, solve_nu_equation, EmTrace, FitOptions, NuEquation};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, vec, SpdFactor};
use crate::minnesota::{update_prior_hyper, MinnesotaHyper, PriorMoments};
use crate::params::Type2Params;
use crate::specialfn::{log_mvgamma, mv_digamma};

/// Posterior of `(π_t, Σ_t)` after observing period `t` alone.
#[derive(Debug, Clone)]
pub struct PerPeriodPosterior {
    /// `Λ̃_t = (Y_t Y_t' + Λ₀⁻¹)⁻¹`.
    pub lambda_t: DMatrix<f64>,
    /// `vec(Π̃_t)`.
    pub pi_t: DVector<f64>,
    /// `B̃_t = r r' / (1 + Y_t'Λ₀Y_t)` with `r = y_t - Π₀Y_t`.
    pub b_t: DMatrix<f64>,
    /// `1 + Y_t'Λ₀Y_t`.
    pub phi_inv: f64,
}

fn check_period(params: &Type2Params, y_reg: &DVector<f64>, y_t: &DVector<f64>) -> Result<()> {
    if y_reg.len() != params.d() || y_t.len() != params.n() {
        return Err(Error::Dimension(format!(
            "period vectors have lengths ({}, {}), expected ({}, {})",
            y_reg.len(),
            y_t.len(),
            params.d(),
            params.n()
        )));
    }
    if y_reg.iter().chain(y_t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("period data".into()));
    }
    Ok(())
}

/// `(Λ̃_t, Π̃_t, B̃_t, 1 + Y_t'Λ₀Y_t)`.
type PeriodParts = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64);

fn posterior_parts(
    params: &Type2Params,
    pi0: &DMatrix<f64>,
    lam_inv: &DVector<f64>,
    y_reg: &DVector<f64>,
    y_t: &DVector<f64>,
) -> Result<PeriodParts> {
    let d = params.d();
    let mut precision = y_reg * y_reg.transpose();
    for k in 0..d {
        precision[(k, k)] += lam_inv[k];
    }
    let factor = SpdFactor::new(&precision, "per-period posterior precision")?;
    let mut rhs = y_reg * y_t.transpose();
    for k in 0..d {
        for i in 0..params.n() {
            rhs[(k, i)] += lam_inv[k] * pi0[(i, k)];
        }
    }
    let m = factor.solve(&rhs).transpose();
    let phi_inv = 1.0 + y_reg.iter().zip(params.lambda0.iter()).map(|(y, l)| y * y * l).sum::<f64>();
    let r = y_t - pi0 * y_reg;
    let b = &r * r.transpose() / phi_inv;
    Ok((factor.inverse(), m, b, phi_inv))
}

pub fn per_period_posterior(params: &Type2Params, y_reg: &DVector<f64>, y_t: &DVector<f64>) -> Result<PerPeriodPosterior> {
    check_period(params, y_reg, y_t)?;
    let (lambda_t, m, b_t, phi_inv) = posterior_parts(params, &params.pi0_matrix(), &params.lambda0_inv(), y_reg, y_t)?;
    Ok(PerPeriodPosterior {
        lambda_t,
        pi_t: vec(&m),
        b_t,
        phi_inv,
    })
}

/// Quantities of the predictive density that do not depend on the period.
struct PredictiveConstants {
    base: f64,
    v0: SpdFactor,
    pi0: DMatrix<f64>,
}

impl PredictiveConstants {
    fn new(params: &Type2Params) -> Result<Self> {
        let n = params.n();
        let nu = params.nu0;
        let v0 = SpdFactor::new(&params.v0, "V0")?;
        let base = -0.5 * n as f64 * PI.ln() + log_mvgamma(n, 0.5 * (nu + 1.0))? - log_mvgamma(n, 0.5 * nu)?
            + 0.5 * nu * v0.log_det();
        Ok(Self {
            base,
            v0,
            pi0: params.pi0_matrix(),
        })
    }

    /// Uses `|V₀ + rr'/φ⁻¹| = |V₀| (1 + r'V₀⁻¹r / φ⁻¹)`.
    fn eval(&self, params: &Type2Params, y_reg: &DVector<f64>, y_t: &DVector<f64>) -> f64 {
        let n = params.n() as f64;
        let nu = params.nu0;
        let phi_inv = 1.0 + y_reg.iter().zip(params.lambda0.iter()).map(|(y, l)| y * y * l).sum::<f64>();
        let r = y_t - &self.pi0 * y_reg;
        let quad = r.dot(&self.v0.solve_vec(&r));
        let ld = self.v0.log_det() + (quad / phi_inv).ln_1p();
        self.base - 0.5 * n * phi_inv.ln() - 0.5 * (nu + 1.0) * ld
    }
}

/// `ln f(y_t | F_{t-1})` under the Type II model.
pub fn log_predictive_density_type2(params: &Type2Params, y_reg: &DVector<f64>, y_t: &DVector<f64>) -> Result<f64> {
    check_period(params, y_reg, y_t)?;
    let v = PredictiveConstants::new(params)?.eval(params, y_reg, y_t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("log predictive density".into()))
    }
}

/// `Σ_t ln f(y_t | F_{t-1})`.
pub fn log_likelihood_type2(params: &Type2Params, design: &DesignMatrices) -> Result<f64> {
    params.check_design(design)?;
    let consts = PredictiveConstants::new(params)?;
    let terms: Vec<f64> = (0..design.t_len())
        .into_par_iter()
        .map(|t| consts.eval(params, &design.regressor(t), &design.observation(t)))
        .collect();
    let total: f64 = terms.iter().sum();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("Type II log-likelihood".into()))
    }
}

struct PeriodMoments {
    lambda_t: DMatrix<f64>,
    m_t: DMatrix<f64>,
    w_t: DMatrix<f64>,
    log_det_vb: f64,
}

/// E-step output for all periods.
struct Type2Moments {
    periods: Vec<PeriodMoments>,
    /// `Σ_t W_t`, `W_t = (V₀ + B̃_t)⁻¹`.
    sum_w: DMatrix<f64>,
    /// `Σ_t W_t Π̃_t`.
    sum_wm: DMatrix<f64>,
    n: usize,
}

impl Type2Moments {
    fn new(params: &Type2Params, design: &DesignMatrices) -> Result<Self> {
        params.check_design(design)?;
        let pi0 = params.pi0_matrix();
        let lam_inv = params.lambda0_inv();
        let periods = (0..design.t_len())
            .into_par_iter()
            .map(|t| {
                let (y_reg, y_t) = (design.regressor(t), design.observation(t));
                let (lambda_t, m_t, b, _) = posterior_parts(params, &pi0, &lam_inv, &y_reg, &y_t)?;
                let vb = SpdFactor::new(&symmetrize(&(&params.v0 + b)), "V0 + B_t")?;
                Ok(PeriodMoments {
                    lambda_t,
                    m_t,
                    w_t: vb.inverse(),
                    log_det_vb: vb.log_det(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (n, d) = (params.n(), params.d());
        let mut sum_w = DMatrix::zeros(n, n);
        let mut sum_wm = DMatrix::zeros(n, d);
        for pm in &periods {
            sum_w += &pm.w_t;
            sum_wm += &pm.w_t * &pm.m_t;
        }
        Ok(Self {
            periods,
            sum_w: symmetrize(&sum_w),
            sum_wm,
            n,
        })
    }

    fn t_len(&self) -> usize {
        self.periods.len()
    }

    /// `Q_k = Σ_t [n (Λ̃_t)_kk + scale · δ_tk' W_t δ_tk]`, `δ_t = Π̃_t - pi0`.
    fn column_moments(&self, pi0: &DMatrix<f64>, scale: f64) -> DVector<f64> {
        let n = self.n as f64;
        let d = pi0.ncols();
        let per: Vec<DVector<f64>> = self
            .periods
            .par_iter()
            .map(|pm| {
                let delta = &pm.m_t - pi0;
                let wd = &pm.w_t * &delta;
                DVector::from_fn(d, |k, _| {
                    n * pm.lambda_t[(k, k)] + scale * delta.column(k).dot(&wd.column(k))
                })
            })
            .collect();
        per.iter().fold(DVector::zeros(d), |acc, q| acc + q)
    }

    fn update_nu_v(&self, nu0: f64, opts: &FitOptions) -> Result<(f64, DMatrix<f64>)> {
        let n = self.n;
        let (nf, tf) = (n as f64, self.t_len() as f64);
        let sw = SpdFactor::new(&self.sum_w, "sum of period weights")?;
        let nu_new = if opts.update_nu0 {
            let mean_ld = self.periods.iter().map(|p| p.log_det_vb).sum::<f64>() / tf;
            let (coef, label) = match opts.nu0_equation {
                NuEquation::Eq26 => (nf, "nu0 equation (eq26)"),
                NuEquation::Eq27 => (1.0, "nu0 equation (eq27)"),
            };
            let constant =
                coef * tf.ln() - coef * (nu0 + 1.0).ln() - sw.log_det() + mv_digamma(n, 0.5 * (nu0 + 1.0))? - mean_ld;
            solve_nu_equation(label, n, constant, coef, nu0 + 1.0, opts.root_tol)?
        } else {
            nu0
        };
        let v = sw.inverse() * (tf * nu_new / (nu0 + 1.0));
        Ok((nu_new, symmetrize(&v)))
    }
}

pub fn em_step_type2(params: &Type2Params, design: &DesignMatrices, opts: &FitOptions) -> Result<Type2Params> {
    let mom = Type2Moments::new(params, design)?;
    let pi0_new = SpdFactor::new(&mom.sum_w, "sum of period weights")?.solve(&mom.sum_wm);
    let q = mom.column_moments(&pi0_new, params.nu0 + 1.0);
    let lambda_new = q / (params.n() as f64 * mom.t_len() as f64);
    let (nu_new, v_new) = mom.update_nu_v(params.nu0, opts)?;
    Type2Params::new(vec(&pi0_new), lambda_new, nu_new, v_new)
}

pub fn em_step_type2_minnesota(h: &MinnesotaHyper, design: &DesignMatrices, opts: &FitOptions) -> Result<MinnesotaHyper> {
    let p = design.p();
    let params = h.induced_params(p)?;
    let mom = Type2Moments::new(&params, design)?;
    let column_moments = |pi0: &DMatrix<f64>, s: f64| mom.column_moments(pi0, s);
    let summary = PriorMoments {
        weight: mom.sum_w.clone(),
        weighted_target: mom.sum_wm.clone(),
        draws: mom.t_len() as f64,
        default_scale: h.nu0 + 1.0,
        printed_gamma_scale: h.nu0 + mom.t_len() as f64,
        column_moments: &column_moments,
    };
    let mut new = update_prior_hyper(h, p, &summary, opts)?;
    let (nu, v) = mom.update_nu_v(h.nu0, opts)?;
    new.nu0 = nu;
    new.v0 = v;
    new.validate()?;
    Ok(new)
}

pub fn log_likelihood_type2_minnesota(h: &MinnesotaHyper, design: &DesignMatrices) -> Result<f64> {
    log_likelihood_type2(&h.induced_params(design.p())?, design)
}

pub fn fit_type2(
    init: Type2Params,
    design: &DesignMatrices,
    opts: &FitOptions,
) -> Result<(Type2Params, EmTrace<Type2Params>)> {
    init.check_design(design)?;
    run_em(
        init,
        |p| log_likelihood_type2(p, design),
        |p| em_step_type2(p, design, opts),
        opts,
    )
}

pub fn fit_type2_minnesota(
    init: MinnesotaHyper,
    design: &DesignMatrices,
    opts: &FitOptions,
) -> Result<(MinnesotaHyper, EmTrace<MinnesotaHyper>)> {
    init.induced_params(design.p())?.check_design(design)?;
    run_em(
        init,
        |h| log_likelihood_type2_minnesota(h, design),
        |h| em_step_type2_minnesota(h, design, opts),
        opts,
    )
}
