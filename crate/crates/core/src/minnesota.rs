//! Minnesota parameterization of the prior mean and the diagonal `Λ₀`.
//!
//! Column layout of `Π₀` (`n x d`, `d = l + np`): the first `l` columns load
//! on the exogenous regressors, then lag `ℓ = 1..p` occupies columns
//! `l + (ℓ-1)n .. l + ℓn`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::DesignMatrices;
use crate::em::{run_em, EmTrace, FitOptions, GammaVariant, HasNu0};
use crate::error::{Error, Result};
use crate::linalg::{vec, SpdFactor};
use crate::params::{matrix_from_rows, ols_coefficients, rows_of, ModelParams};
use crate::specialfn::{find_root_expanding, Expansion, WithDerivative};
use crate::type1::{log_marginal_likelihood_type1, Type1Moments};

/// Minnesota hyperparameters.
///
/// `c_m` is `m x l`: row `i` holds the prior means of the exogenous
/// loadings of stationary variable `i`. Unit-root variables (`phi = 1`)
/// must come after the `m` stationary ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "HyperJson", try_from = "HyperJson")]
pub struct MinnesotaHyper {
    pub c_m: DMatrix<f64>,
    pub eps: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: DVector<f64>,
    pub phi: Vec<u8>,
    pub nu0: f64,
    pub v0: DMatrix<f64>,
}

impl HasNu0 for MinnesotaHyper {
    fn nu0(&self) -> f64 {
        self.nu0
    }
}

impl MinnesotaHyper {
    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn l(&self) -> usize {
        self.eps.len()
    }

    /// Number of stationary variables.
    pub fn m(&self) -> usize {
        self.phi.iter().filter(|&&f| f == 0).count()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l, m) = (self.n(), self.l(), self.m());
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if n == 0 || l == 0 {
            return bad("need at least one variable and one exogenous column".into());
        }
        if self.phi.len() != n {
            return bad(format!("phi has length {}, expected {n}", self.phi.len()));
        }
        if self.phi.iter().any(|&f| f > 1) {
            return bad("phi entries must be 0 or 1".into());
        }
        if self.phi[..m].iter().any(|&f| f != 0) {
            return bad("stationary variables (phi = 0) must occupy the first m positions".into());
        }
        if self.c_m.nrows() != m || self.c_m.ncols() != l {
            return bad(format!(
                "C_m is {}x{}, expected {m}x{l}",
                self.c_m.nrows(),
                self.c_m.ncols()
            ));
        }
        if self.c_m.iter().any(|c| !c.is_finite()) || !self.beta.is_finite() {
            return bad("C_m and beta must be finite".into());
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.eps.iter().all(|&e| positive(e)) || !self.gamma.iter().all(|&g| positive(g)) || !positive(self.alpha)
        {
            return bad("eps, alpha and gamma must be strictly positive".into());
        }
        if self.v0.nrows() != n || self.v0.ncols() != n {
            return bad(format!("V0 must be {n}x{n}"));
        }
        if !(self.nu0 > n as f64 - 1.0) || !self.nu0.is_finite() {
            return bad(format!("nu0 = {} must exceed n - 1", self.nu0));
        }
        SpdFactor::new(&self.v0, "V0")?;
        Ok(())
    }

    /// EM starting point: `C_m` from least squares, `ε = γ = 1`, `α = 1`,
    /// `β = 1`, `ν₀ = n + 2`, `V₀ = I`.
    pub fn default_init(design: &DesignMatrices, phi: Vec<u8>) -> Result<Self> {
        let (n, l) = (design.n(), design.l());
        let m = phi.iter().filter(|&&f| f == 0).count();
        let ols = ols_coefficients(design)?;
        let h = Self {
            c_m: ols.view((0, 0), (m, l)).into_owned(),
            eps: DVector::from_element(l, 1.0),
            alpha: 1.0,
            beta: 1.0,
            gamma: DVector::from_element(n, 1.0),
            phi,
            nu0: n as f64 + 2.0,
            v0: DMatrix::identity(n, n),
        };
        h.validate()?;
        Ok(h)
    }

    /// `(π₀, Λ₀, ν₀, V₀)` implied by the hyperparameters for lag order `p`.
    pub fn induced_params(&self, p: usize) -> Result<ModelParams> {
        self.validate()?;
        let lam = minnesota_lambda0_inv(self, p).map(|x| 1.0 / x);
        ModelParams::new(minnesota_pi0(self, p), lam, self.nu0, self.v0.clone())
    }
}

/// Artificial observations `(ŷ°, Ŷ°)` whose least-squares fit reproduces the
/// prior mean and whose cross-product is the prior precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyObservations {
    /// `n x d`.
    pub y_dummy: DMatrix<f64>,
    /// `d x d`, diagonal.
    pub regressor_dummy: DMatrix<f64>,
}

fn lag_index(l: usize, n: usize, lag: usize, i: usize) -> usize {
    l + (lag - 1) * n + i
}

/// `C̄ = [C_m; 0]`, `n x l`.
fn c_bar(h: &MinnesotaHyper) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(h.n(), h.l());
    c.view_mut((0, 0), (h.m(), h.l())).copy_from(&h.c_m);
    c
}

pub fn build_dummy_observations(h: &MinnesotaHyper, p: usize) -> Result<DummyObservations> {
    h.validate()?;
    let (n, l) = (h.n(), h.l());
    let d = l + n * p;
    let mut y_dummy = DMatrix::zeros(n, d);
    let mut reg = DMatrix::zeros(d, d);
    let c = c_bar(h);
    for j in 0..l {
        reg[(j, j)] = h.eps[j];
        for i in 0..n {
            y_dummy[(i, j)] = (1.0 - h.phi[i] as f64) * c[(i, j)] * h.eps[j];
        }
    }
    if p > 0 {
        for i in 0..n {
            y_dummy[(i, l + i)] = h.alpha * h.phi[i] as f64 * h.gamma[i];
        }
    }
    for lag in 1..=p {
        let decay = (lag as f64).powf(h.beta);
        for i in 0..n {
            let k = lag_index(l, n, lag, i);
            reg[(k, k)] = h.alpha * decay * h.gamma[i];
        }
    }
    Ok(DummyObservations {
        y_dummy,
        regressor_dummy: reg,
    })
}

/// Diagonal of `Λ₀⁻¹`: `ε_j²` on the exogenous block, `α² ℓ^{2β} γ_i²` on
/// lag `ℓ`, variable `i`.
pub fn minnesota_lambda0_inv(h: &MinnesotaHyper, p: usize) -> DVector<f64> {
    let (n, l) = (h.n(), h.l());
    let mut out = DVector::zeros(l + n * p);
    for j in 0..l {
        out[j] = h.eps[j].powi(2);
    }
    for lag in 1..=p {
        let decay = (lag as f64).powf(2.0 * h.beta);
        for i in 0..n {
            out[lag_index(l, n, lag, i)] = h.alpha.powi(2) * decay * h.gamma[i].powi(2);
        }
    }
    out
}

/// `ln|Λ₀⁻¹| = 2Σ ln ε_j + 2np ln α + 2βn Σ_ℓ ln ℓ + 2p Σ ln γ_i`.
pub fn minnesota_log_det_lambda0_inv(h: &MinnesotaHyper, p: usize) -> f64 {
    let (n, pf) = (h.n() as f64, p as f64);
    let sum_log_lag: f64 = (1..=p).map(|x| (x as f64).ln()).sum();
    2.0 * h.eps.iter().map(|e| e.ln()).sum::<f64>()
        + 2.0 * n * pf * h.alpha.ln()
        + 2.0 * h.beta * n * sum_log_lag
        + 2.0 * pf * h.gamma.iter().map(|g| g.ln()).sum::<f64>()
}

/// `vec([diag(1-φ) C̄ : diag(φ) : 0])`.
pub fn minnesota_pi0(h: &MinnesotaHyper, p: usize) -> DVector<f64> {
    vec(&minnesota_pi0_matrix(h, p))
}

fn minnesota_pi0_matrix(h: &MinnesotaHyper, p: usize) -> DMatrix<f64> {
    let (n, l) = (h.n(), h.l());
    let mut pi = DMatrix::zeros(n, l + n * p);
    pi.view_mut((0, 0), (h.m(), l)).copy_from(&h.c_m);
    if p > 0 {
        for i in 0..n {
            pi[(i, l + i)] = h.phi[i] as f64;
        }
    }
    pi
}

/// Which hyperparameter a selector matrix differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaKind {
    Eps(usize),
    Alpha,
    Beta,
    Gamma(usize),
}

/// Diagonal of the `d x d` selector matrix for `kind`.
///
/// * `Eps(j)`: unit entry at exogenous column `j`.
/// * `Alpha`: `ℓ^{2β} γ_i²` on the lag block.
/// * `Beta`: `α² γ_i² ℓ^{2β} ln ℓ` on the lag block.
/// * `Gamma(i)`: `α² ℓ^{2β}` at the entries of variable `i`
///   (times `ln ℓ` for [`GammaVariant::Printed`]).
pub fn delta_matrix(kind: DeltaKind, h: &MinnesotaHyper, p: usize, variant: GammaVariant) -> Result<DVector<f64>> {
    let (n, l) = (h.n(), h.l());
    let mut out = DVector::zeros(l + n * p);
    match kind {
        DeltaKind::Eps(j) => {
            if j >= l {
                return Err(Error::Dimension(format!("eps index {j} out of range 0..{l}")));
            }
            out[j] = 1.0;
        }
        DeltaKind::Gamma(i) if i >= n => {
            return Err(Error::Dimension(format!("gamma index {i} out of range 0..{n}")));
        }
        _ => {
            for lag in 1..=p {
                let lf = lag as f64;
                let decay = lf.powf(2.0 * h.beta);
                for i in 0..n {
                    let v = match kind {
                        DeltaKind::Alpha => decay * h.gamma[i].powi(2),
                        DeltaKind::Beta => h.alpha.powi(2) * h.gamma[i].powi(2) * decay * lf.ln(),
                        DeltaKind::Gamma(g) if g == i => match variant {
                            GammaVariant::Consistent => h.alpha.powi(2) * decay,
                            GammaVariant::Printed => h.alpha.powi(2) * decay * lf.ln(),
                        },
                        _ => 0.0,
                    };
                    out[lag_index(l, n, lag, i)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Expected-moment summaries that drive the prior-mean and `Λ₀` updates.
pub(crate) struct PriorMoments<'a> {
    /// `G` in the exogenous-mean normal equations `G c = r`.
    pub weight: DMatrix<f64>,
    /// `n x d`; column `j` is the right-hand side for exogenous column `j`.
    pub weighted_target: DMatrix<f64>,
    /// Number of independent prior draws (1 for Type I, `T` for Type II).
    pub draws: f64,
    pub default_scale: f64,
    pub printed_gamma_scale: f64,
    /// Per-column expected quadratic forms for a given prior mean and
    /// `E[Σ⁻¹]` scale.
    pub column_moments: &'a dyn Fn(&DMatrix<f64>, f64) -> DVector<f64>,
}

fn positive_ratio(num: f64, den: f64, what: &'static str) -> Result<f64> {
    let r = num / den;
    if !(den > 0.0) || !r.is_finite() || r <= 0.0 {
        return Err(Error::ZeroDenominator(what));
    }
    Ok(r)
}

/// Coordinate-wise update of `(C_m, ε, α, γ, β)`, each maximizing the
/// expected complete-data log-likelihood given the values already updated.
pub(crate) fn update_prior_hyper(
    h: &MinnesotaHyper,
    p: usize,
    mom: &PriorMoments<'_>,
    opts: &FitOptions,
) -> Result<MinnesotaHyper> {
    let (n, l, m) = (h.n(), h.l(), h.m());
    let nf = n as f64;
    let pf = p as f64;
    let mut new = h.clone();

    if m > 0 {
        let g_ss = mom.weight.view((0, 0), (m, m)).into_owned();
        let rhs = mom.weighted_target.view((0, 0), (m, l)).into_owned();
        new.c_m = SpdFactor::new(&g_ss, "weight matrix of stationary rows")?.solve(&rhs);
    }

    let pi0 = minnesota_pi0_matrix(&new, p);
    let q = (mom.column_moments)(&pi0, mom.default_scale);

    for j in 0..l {
        let den = delta_matrix(DeltaKind::Eps(j), &new, p, opts.gamma_variant)?.dot(&q);
        new.eps[j] = positive_ratio(nf * mom.draws, den, "eps update")?.sqrt();
    }

    if p == 0 {
        return Ok(new);
    }

    let den = delta_matrix(DeltaKind::Alpha, &new, p, opts.gamma_variant)?.dot(&q);
    new.alpha = positive_ratio(nf * nf * pf * mom.draws, den, "alpha update")?.sqrt();

    let q_gamma = match opts.gamma_variant {
        GammaVariant::Consistent => q.clone(),
        GammaVariant::Printed => (mom.column_moments)(&pi0, mom.printed_gamma_scale),
    };
    for i in 0..n {
        let den = delta_matrix(DeltaKind::Gamma(i), &new, p, opts.gamma_variant)?.dot(&q_gamma);
        new.gamma[i] = positive_ratio(nf * pf * mom.draws, den, "gamma update")?.sqrt();
    }

    if p >= 2 {
        let target = nf * nf * mom.draws * (1..=p).map(|x| (x as f64).ln()).sum::<f64>();
        // a_ℓ = α² Σ_i γ_i² q_{ℓ,i}
        let a: Vec<f64> = (1..=p)
            .map(|lag| {
                (0..n)
                    .map(|i| new.alpha.powi(2) * new.gamma[i].powi(2) * q[lag_index(l, n, lag, i)])
                    .sum()
            })
            .collect();
        let f = |b: f64| {
            (1..=p)
                .map(|lag| {
                    let lf = lag as f64;
                    lf.powf(2.0 * b) * lf.ln() * a[lag - 1]
                })
                .sum::<f64>()
                - target
        };
        let df = |b: f64| {
            (1..=p)
                .map(|lag| {
                    let lf = lag as f64;
                    2.0 * lf.ln().powi(2) * lf.powf(2.0 * b) * a[lag - 1]
                })
                .sum::<f64>()
        };
        new.beta = find_root_expanding(&WithDerivative { f, df }, -5.0, 5.0, opts.root_tol, Expansion::Both)
            .map_err(|e| Error::solver("beta equation", e))?;
    }
    Ok(new)
}

pub fn em_step_type1_minnesota(h: &MinnesotaHyper, design: &DesignMatrices, opts: &FitOptions) -> Result<MinnesotaHyper> {
    let p = design.p();
    let params = h.induced_params(p)?;
    params.check_design(design)?;
    let mom = Type1Moments::new(&params, design)?;
    let scale = mom.default_scale();
    let column_moments = |pi0: &DMatrix<f64>, s: f64| mom.column_moments(pi0, s);
    let summary = PriorMoments {
        weight: mom.w.clone(),
        weighted_target: &mom.w * mom.post.pi_post_matrix(),
        draws: 1.0,
        default_scale: scale,
        printed_gamma_scale: scale,
        column_moments: &column_moments,
    };
    let mut new = update_prior_hyper(h, p, &summary, opts)?;
    let (nu, v) = mom.update_nu_v(h.nu0, opts)?;
    new.nu0 = nu;
    new.v0 = v;
    new.validate()?;
    Ok(new)
}

/// Type I marginal log-likelihood at the parameters induced by `h`.
pub fn log_marginal_likelihood_type1_minnesota(h: &MinnesotaHyper, design: &DesignMatrices) -> Result<f64> {
    log_marginal_likelihood_type1(&h.induced_params(design.p())?, design)
}

pub fn fit_type1_minnesota(
    init: MinnesotaHyper,
    design: &DesignMatrices,
    opts: &FitOptions,
) -> Result<(MinnesotaHyper, EmTrace<MinnesotaHyper>)> {
    init.induced_params(design.p())?.check_design(design)?;
    run_em(
        init,
        |h| log_marginal_likelihood_type1_minnesota(h, design),
        |h| em_step_type1_minnesota(h, design, opts),
        opts,
    )
}

#[derive(Serialize, Deserialize)]
struct HyperJson {
    #[serde(rename = "C_m")]
    c_m: Vec<Vec<f64>>,
    eps: Vec<f64>,
    alpha: f64,
    beta: f64,
    gamma: Vec<f64>,
    phi: Vec<u8>,
    nu0: f64,
    #[serde(rename = "V0")]
    v0: Vec<Vec<f64>>,
}

impl From<MinnesotaHyper> for HyperJson {
    fn from(h: MinnesotaHyper) -> Self {
        Self {
            c_m: rows_of(&h.c_m),
            eps: h.eps.iter().copied().collect(),
            alpha: h.alpha,
            beta: h.beta,
            gamma: h.gamma.iter().copied().collect(),
            phi: h.phi,
            nu0: h.nu0,
            v0: rows_of(&h.v0),
        }
    }
}

impl TryFrom<HyperJson> for MinnesotaHyper {
    type Error = Error;

    fn try_from(j: HyperJson) -> Result<Self> {
        let m = j.phi.iter().filter(|&&f| f == 0).count();
        let c_m = if m == 0 {
            DMatrix::zeros(0, j.eps.len())
        } else {
            matrix_from_rows(&j.c_m, "C_m")?
        };
        let h = MinnesotaHyper {
            c_m,
            eps: DVector::from_vec(j.eps),
            alpha: j.alpha,
            beta: j.beta,
            gamma: DVector::from_vec(j.gamma),
            phi: j.phi,
            nu0: j.nu0,
            v0: matrix_from_rows(&j.v0, "V0")?,
        };
        h.validate()?;
        Ok(h)
    }
}
