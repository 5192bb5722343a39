//! Samplers for the prior laws and full BVAR path simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng, TryRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::convert::Infallible;

use crate::dataio::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SpdFactor};
use crate::params::ModelParams;

/// Seeded ChaCha20 stream.
///
/// `split(i)` derives an independent child from `(seed, i)` alone, so the
/// children handed to parallel workers do not depend on how much the parent
/// has been consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, index: u64) -> Self {
        let mut keyed = ChaCha20Rng::seed_from_u64(self.seed);
        keyed.set_stream(index.wrapping_add(1));
        Self::new(keyed.next_u64())
    }

    /// Uniform on the open interval `(0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion of the CDF.
    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform();
        -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u)
    }

    pub fn normal_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.standard_normal())
    }
}

impl TryRng for RngStream {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> std::result::Result<u32, Infallible> {
        Ok(self.rng.next_u32())
    }

    fn try_next_u64(&mut self) -> std::result::Result<u64, Infallible> {
        Ok(self.rng.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> std::result::Result<(), Infallible> {
        self.rng.fill_bytes(dst);
        Ok(())
    }
}

/// Draw `Σ ~ IW(ν, V)` through the Bartlett decomposition of
/// `Σ⁻¹ ~ W(ν, V⁻¹)`.
pub fn sample_inverse_wishart(nu: f64, v: &DMatrix<f64>, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let n = v.nrows();
    if !(nu > n as f64 - 1.0) || !nu.is_finite() {
        return Err(Error::Domain {
            func: "sample_inverse_wishart",
            arg: nu,
            lower: n as f64 - 1.0,
        });
    }
    let c = SpdFactor::new(v, "inverse Wishart scale")?.l();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::InvalidParams(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    // G = C A'⁻¹, i.e. G' = A⁻¹ C'
    let g_t = a
        .solve_lower_triangular(&c.transpose())
        .ok_or(Error::NotPositiveDefinite {
            context: "Bartlett factor",
        })?;
    Ok(symmetrize(&(g_t.transpose() * g_t)))
}

/// Draw `π ~ N(π₀, Λ₀ ⊗ Σ)` as `vec(Π₀ + L_Σ Z Λ₀^{1/2})`.
pub fn sample_coeff_vector(
    pi0: &DVector<f64>,
    lambda0: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let (n, d) = (sigma.nrows(), lambda0.len());
    if pi0.len() != n * d {
        return Err(Error::Dimension(format!(
            "pi0 has length {}, expected {}",
            pi0.len(),
            n * d
        )));
    }
    if lambda0.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParams("lambda0 entries must be positive".into()));
    }
    let l = SpdFactor::new(sigma, "Sigma")?.l();
    let mut z = DMatrix::from_column_slice(n, d, rng.normal_vector(n * d).as_slice());
    for k in 0..d {
        z.column_mut(k).scale_mut(lambda0[k].sqrt());
    }
    let draw = l * z;
    Ok(pi0 + DVector::from_column_slice(draw.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// One `(Π, Σ)` for the whole sample.
    Type1,
    /// Fresh `(Π_t, Σ_t)` each period.
    Type2,
}

/// Simulate `T` periods of a VAR(p) whose coefficients follow the chosen
/// model. `exogenous` is `l x T` with a leading row of ones; `presample` is
/// `n x p` (column `j` is `y_{j+1-p}`).
///
/// Stream layout: `split(0)` draws the Type I coefficients, `split(t + 1)`
/// draws everything for period `t` (shocks, and for Type II the
/// period-specific coefficients).
pub fn simulate_bvar(
    params: &ModelParams,
    p: usize,
    model: ModelKind,
    exogenous: &DMatrix<f64>,
    presample: &DMatrix<f64>,
    rng: &RngStream,
) -> Result<TimeSeriesDataset> {
    params.validate()?;
    let (n, l, t_len) = (params.n(), exogenous.nrows(), exogenous.ncols());
    if params.d() != l + n * p {
        return Err(Error::Dimension(format!(
            "parameters have d = {}, but l + n*p = {}",
            params.d(),
            l + n * p
        )));
    }
    if presample.nrows() != n || presample.ncols() != p {
        return Err(Error::Dimension(format!("presample must be {n}x{p}")));
    }

    // (Π, chol Σ, ε) per period
    type Draw = (DMatrix<f64>, DMatrix<f64>, DVector<f64>);
    let shared = match model {
        ModelKind::Type1 => {
            let mut s = rng.split(0);
            let sigma = sample_inverse_wishart(params.nu0, &params.v0, &mut s)?;
            let pi = sample_coeff_vector(&params.pi0, &params.lambda0, &sigma, &mut s)?;
            Some((
                DMatrix::from_column_slice(n, params.d(), pi.as_slice()),
                SpdFactor::new(&sigma, "Sigma")?.l(),
            ))
        }
        ModelKind::Type2 => None,
    };
    let draws: Vec<Draw> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let mut s = rng.split(t as u64 + 1);
            let (pi, chol) = match &shared {
                Some((pi, chol)) => (pi.clone(), chol.clone()),
                None => {
                    let sigma = sample_inverse_wishart(params.nu0, &params.v0, &mut s)?;
                    let pi = sample_coeff_vector(&params.pi0, &params.lambda0, &sigma, &mut s)?;
                    (
                        DMatrix::from_column_slice(n, params.d(), pi.as_slice()),
                        SpdFactor::new(&sigma, "Sigma")?.l(),
                    )
                }
            };
            let eps = s.normal_vector(n);
            Ok((pi, chol, eps))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut y = DMatrix::zeros(n, t_len);
    let mut regressor = DVector::zeros(l + n * p);
    for (t, (pi, chol, eps)) in draws.iter().enumerate() {
        regressor.rows_mut(0, l).copy_from(&exogenous.column(t));
        for lag in 1..=p {
            let past = if t >= lag {
                y.column(t - lag).into_owned()
            } else {
                presample.column(p + t - lag).into_owned()
            };
            regressor.rows_mut(l + (lag - 1) * n, n).copy_from(&past);
        }
        let yt = pi * &regressor + chol * eps;
        y.set_column(t, &yt);
    }
    TimeSeriesDataset::new(y, presample.clone(), exogenous.clone())
}
