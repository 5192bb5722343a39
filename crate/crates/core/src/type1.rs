//! Type I model: a single `(Π, Σ)` drawn once from the conjugate prior.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::dataio::DesignMatrices;
use crate::em::{run_em, solve_nu_equation, EmTrace, FitOptions, NuEquation};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, vec, SpdFactor};
use crate::params::Type1Params;
use crate::specialfn::{log_mvgamma, mv_digamma};

/// Posterior of `(π, Σ)` given the whole sample.
#[derive(Debug, Clone)]
pub struct Type1Posterior {
    /// `Λ₀|T = (Y°Y°' + Λ₀⁻¹)⁻¹`, `d x d`.
    pub lambda_post: DMatrix<f64>,
    /// `vec(Π₀|T)`.
    pub pi_post: DVector<f64>,
    pub b_t: DMatrix<f64>,
    pub nu_post: f64,
    /// `V₀ + B_T`.
    pub v_post: DMatrix<f64>,
    /// `ln|Λ₀|T⁻¹|`.
    pub log_det_precision: f64,
    n: usize,
}

impl Type1Posterior {
    pub fn pi_post_matrix(&self) -> DMatrix<f64> {
        let d = self.lambda_post.nrows();
        DMatrix::from_column_slice(self.n, d, self.pi_post.as_slice())
    }
}

pub fn compute_posterior(params: &Type1Params, design: &DesignMatrices) -> Result<Type1Posterior> {
    params.check_design(design)?;
    let (n, d) = (params.n(), params.d());
    let x = &design.regressors;
    let y = &design.y_stack;
    let lam_inv = params.lambda0_inv();
    let pi0 = params.pi0_matrix();

    let mut precision = x * x.transpose();
    for k in 0..d {
        precision[(k, k)] += lam_inv[k];
    }
    let factor = SpdFactor::new(&precision, "posterior precision of coefficients")?;
    // M' = P⁻¹ (Y° y°' + Λ₀⁻¹ Π₀')
    let mut rhs = x * y.transpose();
    for k in 0..d {
        for i in 0..n {
            rhs[(k, i)] += lam_inv[k] * pi0[(i, k)];
        }
    }
    let m = factor.solve(&rhs).transpose();

    let resid = y - &m * x;
    let shift = &m - &pi0;
    let mut shift_scaled = shift.clone();
    for k in 0..d {
        shift_scaled.column_mut(k).scale_mut(lam_inv[k]);
    }
    let b_t = symmetrize(&(&resid * resid.transpose() + &shift_scaled * shift.transpose()));
    let v_post = symmetrize(&(&params.v0 + &b_t));

    Ok(Type1Posterior {
        lambda_post: factor.inverse(),
        pi_post: vec(&m),
        b_t,
        nu_post: params.nu0 + design.t_len() as f64,
        v_post,
        log_det_precision: factor.log_det(),
        n,
    })
}

/// `B_T = (y° - Π₀Y°)(I_T + Y°'Λ₀Y°)⁻¹(y° - Π₀Y°)'`, evaluated through the
/// equivalent `d x d` residual form, which is positive semidefinite by
/// construction.
pub fn compute_bt(params: &Type1Params, design: &DesignMatrices) -> Result<DMatrix<f64>> {
    Ok(compute_posterior(params, design)?.b_t)
}

/// `ln p(y° | θ)` for the Type I model.
pub fn log_marginal_likelihood_type1(params: &Type1Params, design: &DesignMatrices) -> Result<f64> {
    let post = compute_posterior(params, design)?;
    log_marginal_from_posterior(params, &post, design.t_len())
}

fn log_marginal_from_posterior(params: &Type1Params, post: &Type1Posterior, t_len: usize) -> Result<f64> {
    let n = params.n();
    let (nf, tf) = (n as f64, t_len as f64);
    let nu = params.nu0;
    let ld_v0 = SpdFactor::new(&params.v0, "V0")?.log_det();
    let ld_vpost = SpdFactor::new(&post.v_post, "V0 + B_T")?.log_det();
    let ld_lambda0: f64 = params.lambda0.iter().map(|l| l.ln()).sum();
    Ok(-0.5 * nf * tf * PI.ln() + log_mvgamma(n, 0.5 * (nu + tf))? - log_mvgamma(n, 0.5 * nu)?
        + 0.5 * nu * ld_v0
        - 0.5 * (nu + tf) * ld_vpost
        - 0.5 * nf * (ld_lambda0 + post.log_det_precision))
}

/// Log density of `π | Σ, y°`, i.e. `N(π₀|T, Λ₀|T ⊗ Σ)`, at `pi`.
pub fn posterior_coeff_logdensity(pi: &DVector<f64>, sigma: &DMatrix<f64>, post: &Type1Posterior) -> Result<f64> {
    let n = post.n;
    let d = post.lambda_post.nrows();
    if pi.len() != n * d || sigma.nrows() != n {
        return Err(Error::Dimension("coefficient or covariance size mismatch".into()));
    }
    let sig = SpdFactor::new(sigma, "Sigma")?;
    let lam = SpdFactor::new(&post.lambda_post, "posterior Lambda")?;
    let diff = DMatrix::from_column_slice(n, d, pi.as_slice()) - post.pi_post_matrix();
    // tr(Σ⁻¹ D Λ⁻¹ D')
    let a = sig.solve(&diff);
    let b = lam.solve(&diff.transpose());
    let quad = (&a * b).trace();
    let (nf, df) = (n as f64, d as f64);
    Ok(-0.5 * nf * df * (2.0 * PI).ln() - 0.5 * (nf * lam.log_det() + df * sig.log_det()) - 0.5 * quad)
}

/// Log density of `Σ | y°`, an inverse Wishart with `ν₀ + T` degrees of
/// freedom and scale `V₀ + B_T`.
pub fn posterior_cov_logdensity(sigma: &DMatrix<f64>, post: &Type1Posterior) -> Result<f64> {
    inverse_wishart_logdensity(sigma, post.nu_post, &post.v_post)
}

pub fn inverse_wishart_logdensity(sigma: &DMatrix<f64>, nu: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let n = scale.nrows();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::Dimension("covariance size mismatch".into()));
    }
    let nf = n as f64;
    let sig = SpdFactor::new(sigma, "Sigma")?;
    let v = SpdFactor::new(scale, "inverse Wishart scale")?;
    let tr = sig.solve(scale).trace();
    Ok(0.5 * nu * v.log_det() - 0.5 * nu * nf * 2f64.ln() - log_mvgamma(n, 0.5 * nu)?
        - 0.5 * (nu + nf + 1.0) * sig.log_det()
        - 0.5 * tr)
}

/// Root of the Type I `ν₀` stationarity equation; its unique solution is
/// `ν₀⁽ᵏ⁾ + T`.
pub fn solve_nu0_type1(nu0_k: f64, t_len: usize, n: usize, equation: NuEquation, tol: f64) -> Result<f64> {
    let s = nu0_k + t_len as f64;
    let coef = match equation {
        NuEquation::Eq26 => n as f64,
        NuEquation::Eq27 => 1.0,
    };
    let constant = mv_digamma(n, 0.5 * s)? - coef * s.ln();
    let label = match equation {
        NuEquation::Eq26 => "nu0 equation (eq26)",
        NuEquation::Eq27 => "nu0 equation (eq27)",
    };
    solve_nu_equation(label, n, constant, coef, s, tol)
}

/// Conditional expectations needed by the M-step.
#[derive(Debug, Clone)]
pub(crate) struct Type1Moments {
    pub post: Type1Posterior,
    /// `(V₀ + B_T)⁻¹`; `E[Σ⁻¹] = (ν₀ + T) W`.
    pub w: DMatrix<f64>,
    pub t_len: usize,
}

impl Type1Moments {
    pub fn new(params: &Type1Params, design: &DesignMatrices) -> Result<Self> {
        let post = compute_posterior(params, design)?;
        let w = SpdFactor::new(&post.v_post, "V0 + B_T")?.inverse();
        Ok(Self {
            post,
            w,
            t_len: design.t_len(),
        })
    }

    /// `q_k = n (Λ₀|T)_kk + scale · δ_k' W δ_k` with `δ = Π₀|T - pi0`.
    pub fn column_moments(&self, pi0: &DMatrix<f64>, scale: f64) -> DVector<f64> {
        let n = self.post.n as f64;
        let delta = self.post.pi_post_matrix() - pi0;
        let wd = &self.w * &delta;
        DVector::from_fn(delta.ncols(), |k, _| {
            n * self.post.lambda_post[(k, k)] + scale * delta.column(k).dot(&wd.column(k))
        })
    }

    pub fn default_scale(&self) -> f64 {
        self.post.nu_post
    }

    /// Shared `(ν₀, V₀)` update.
    pub fn update_nu_v(&self, nu0: f64, opts: &FitOptions) -> Result<(f64, DMatrix<f64>)> {
        let n = self.w.nrows();
        let s = self.post.nu_post;
        let nu_new = if opts.update_nu0 {
            solve_nu0_type1(nu0, self.t_len, n, opts.nu0_equation, opts.root_tol)?
        } else {
            nu0
        };
        Ok((nu_new, symmetrize(&(&self.post.v_post * (nu_new / s)))))
    }
}

pub fn em_step_type1(params: &Type1Params, design: &DesignMatrices, opts: &FitOptions) -> Result<Type1Params> {
    let mom = Type1Moments::new(params, design)?;
    let n = params.n() as f64;
    let pi0_new = mom.post.pi_post_matrix();
    let q = mom.column_moments(&pi0_new, mom.default_scale());
    let lambda_new = q / n;
    let (nu_new, v_new) = mom.update_nu_v(params.nu0, opts)?;
    Type1Params::new(vec(&pi0_new), lambda_new, nu_new, v_new)
}

pub fn fit_type1(
    init: Type1Params,
    design: &DesignMatrices,
    opts: &FitOptions,
) -> Result<(Type1Params, EmTrace<Type1Params>)> {
    init.check_design(design)?;
    run_em(
        init,
        |p| log_marginal_likelihood_type1(p, design),
        |p| em_step_type1(p, design, opts),
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DesignMatrices;

    fn toy_design() -> DesignMatrices {
        // n = 2, l = 1, p = 1, T = 5
        let y = DMatrix::from_row_slice(2, 5, &[0.5, -0.2, 0.9, 0.1, 0.4, 1.0, 0.3, -0.7, 0.2, 0.8]);
        let mut x = DMatrix::from_element(3, 5, 1.0);
        let pre = [0.1, -0.3];
        for t in 0..5 {
            for i in 0..2 {
                x[(1 + i, t)] = if t == 0 { pre[i] } else { y[(i, t - 1)] };
            }
        }
        DesignMatrices::from_parts(y, x, 1, 1).unwrap()
    }

    fn toy_params() -> Type1Params {
        Type1Params::new(
            DVector::from_vec(vec![0.1, -0.1, 0.3, 0.0, 0.05, 0.2]),
            DVector::from_vec(vec![2.0, 0.5, 0.7]),
            4.5,
            DMatrix::from_row_slice(2, 2, &[1.2, 0.2, 0.2, 0.8]),
        )
        .unwrap()
    }

    /// `R (I + Y'ΛY)⁻¹ R'` with an explicit `T x T` inverse.
    fn bt_explicit(params: &Type1Params, design: &DesignMatrices) -> DMatrix<f64> {
        let x = &design.regressors;
        let lam = DMatrix::from_diagonal(&params.lambda0);
        let omega = DMatrix::identity(x.ncols(), x.ncols()) + x.transpose() * lam * x;
        let r = &design.y_stack - params.pi0_matrix() * x;
        &r * omega.try_inverse().unwrap() * r.transpose()
    }

    #[test]
    fn bt_matches_explicit_inverse_form() {
        let (p, d) = (toy_params(), toy_design());
        let diff = (compute_bt(&p, &d).unwrap() - bt_explicit(&p, &d)).amax();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn bt_is_zero_when_data_fit_exactly() {
        let d = toy_design();
        let p = toy_params();
        // choose y = Π₀ Y exactly
        let y = p.pi0_matrix() * &d.regressors;
        let d2 = DesignMatrices::from_parts(y, d.regressors.clone(), 1, 1).unwrap();
        assert!(compute_bt(&p, &d2).unwrap().amax() < 1e-12);
    }

    #[test]
    fn marginal_likelihood_matches_direct_matrix_t_form() {
        // Direct evaluation of the matrix-variate t density with Ω = I + Y'ΛY.
        let (p, d) = (toy_params(), toy_design());
        let (n, t) = (2usize, 5usize);
        let x = &d.regressors;
        let lam = DMatrix::from_diagonal(&p.lambda0);
        let omega = DMatrix::identity(t, t) + x.transpose() * lam * x;
        let bt = bt_explicit(&p, &d);
        let nu = p.nu0;
        let direct = -0.5 * (n * t) as f64 * PI.ln() + log_mvgamma(n, 0.5 * (nu + t as f64)).unwrap()
            - log_mvgamma(n, 0.5 * nu).unwrap()
            + 0.5 * nu * p.v0.determinant().ln()
            - 0.5 * (nu + t as f64) * (&p.v0 + bt).determinant().ln()
            - 0.5 * n as f64 * omega.determinant().ln();
        let got = log_marginal_likelihood_type1(&p, &d).unwrap();
        assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
    }

    #[test]
    fn nu0_solver_returns_prior_plus_sample_size() {
        for eq in [NuEquation::Eq26, NuEquation::Eq27] {
            let nu = solve_nu0_type1(5.0, 100, 3, eq, 1e-12).unwrap();
            assert!((nu - 105.0).abs() < 1e-8 * 105.0, "{eq:?}: {nu}");
        }
        let nu = solve_nu0_type1(0.5, 1, 1, NuEquation::Eq26, 1e-12).unwrap();
        assert!((nu - 1.5).abs() < 1e-10);
    }

    #[test]
    fn em_step_does_not_decrease_likelihood() {
        let d = toy_design();
        let mut p = toy_params();
        let mut prev = log_marginal_likelihood_type1(&p, &d).unwrap();
        for _ in 0..30 {
            p = em_step_type1(&p, &d, &FitOptions::default()).unwrap();
            let l = log_marginal_likelihood_type1(&p, &d).unwrap();
            assert!(l >= prev - 1e-10, "{l} < {prev}");
            prev = l;
        }
        assert_eq!(p.nu0, 4.5);
    }

    #[test]
    fn em_step_with_nu_update_is_monotone() {
        let d = toy_design();
        let opts = FitOptions {
            update_nu0: true,
            max_iters: 25,
            tol: 0.0,
            ..FitOptions::default()
        };
        let (_, trace) = fit_type1(toy_params(), &d, &opts).unwrap();
        assert!(trace.max_decrease() <= 1e-8, "{}", trace.max_decrease());
    }

    #[test]
    fn coeff_and_cov_densities_match_direct_formulas() {
        let (p, d) = (toy_params(), toy_design());
        let post = compute_posterior(&p, &d).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.5]);
        let pi = &post.pi_post + DVector::from_vec(vec![0.1, 0.0, -0.2, 0.05, 0.0, 0.1]);
        // Kronecker-form Gaussian
        let cov = post.lambda_post.kronecker(&sigma);
        let diff = &pi - &post.pi_post;
        let q = (diff.transpose() * cov.clone().try_inverse().unwrap() * &diff)[(0, 0)];
        let direct = -3.0 * (2.0 * PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * q;
        let got = posterior_coeff_logdensity(&pi, &sigma, &post).unwrap();
        assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");

        // n = 1 inverse Wishart is an inverse gamma(ν/2, V/2)
        let s = DMatrix::from_element(1, 1, 0.7);
        let v = DMatrix::from_element(1, 1, 1.3);
        let nu = 5.0;
        let (a, b) = (nu / 2.0, 1.3 / 2.0);
        let ig = a * f64::ln(b) - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * f64::ln(0.7) - b / 0.7;
        assert!((inverse_wishart_logdensity(&s, nu, &v).unwrap() - ig).abs() < 1e-12);
    }
}
