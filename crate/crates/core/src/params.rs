//! Parameter vector `θ = (π₀, Λ₀, ν₀, V₀)` shared by both model types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::DesignMatrices;
use crate::error::{Error, Result};
use crate::linalg::{unvec, vec, SpdFactor};

/// Prior mean `π₀ = vec(Π₀)` (column-major `n x d`), diagonal `Λ₀`,
/// degrees of freedom `ν₀ > n - 1`, and SPD scale `V₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsJson", try_from = "ParamsJson")]
pub struct ModelParams {
    pub pi0: DVector<f64>,
    pub lambda0: DVector<f64>,
    pub nu0: f64,
    pub v0: DMatrix<f64>,
}

/// Parameters of the Type I model (one `(Π, Σ)` shared by all periods).
pub type Type1Params = ModelParams;
/// Parameters of the Type II model (i.i.d. `(Π_t, Σ_t)` per period).
pub type Type2Params = ModelParams;

impl ModelParams {
    pub fn new(pi0: DVector<f64>, lambda0: DVector<f64>, nu0: f64, v0: DMatrix<f64>) -> Result<Self> {
        let p = Self {
            pi0,
            lambda0,
            nu0,
            v0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.v0.nrows()
    }

    pub fn d(&self) -> usize {
        self.lambda0.len()
    }

    /// `Π₀` as an `n x d` matrix.
    pub fn pi0_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n(), self.d(), self.pi0.as_slice())
    }

    pub fn lambda0_inv(&self) -> DVector<f64> {
        self.lambda0.map(|l| 1.0 / l)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if self.v0.ncols() != n || n == 0 {
            return Err(Error::InvalidParams(format!(
                "V0 must be square and non-empty, got {}x{}",
                self.v0.nrows(),
                self.v0.ncols()
            )));
        }
        if self.pi0.len() != n * d {
            return Err(Error::InvalidParams(format!(
                "pi0 has length {}, expected n*d = {}",
                self.pi0.len(),
                n * d
            )));
        }
        if self.pi0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("pi0 has non-finite entries".into()));
        }
        if let Some(l) = self.lambda0.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParams(format!("lambda0 entries must be positive, got {l}")));
        }
        if !(self.nu0 > n as f64 - 1.0) || !self.nu0.is_finite() {
            return Err(Error::InvalidParams(format!(
                "nu0 = {} must exceed n - 1 = {}",
                self.nu0,
                n - 1
            )));
        }
        if (&self.v0 - self.v0.transpose()).amax() > 1e-10 * self.v0.amax().max(1.0) {
            return Err(Error::InvalidParams("V0 must be symmetric".into()));
        }
        SpdFactor::new(&self.v0, "V0")?;
        Ok(())
    }

    pub fn check_design(&self, design: &DesignMatrices) -> Result<()> {
        if design.n() != self.n() || design.d() != self.d() {
            return Err(Error::Dimension(format!(
                "parameters are for n = {}, d = {}; design has n = {}, d = {}",
                self.n(),
                self.d(),
                design.n(),
                design.d()
            )));
        }
        Ok(())
    }

    /// Starting point for EM: `π₀` from (ridge-regularized) least squares,
    /// `Λ₀ = I_d`, `ν₀ = n + 2`, `V₀ = I_n`.
    pub fn default_init(design: &DesignMatrices) -> Result<Self> {
        let (n, d) = (design.n(), design.d());
        let pi = ols_coefficients(design)?;
        Self::new(
            vec(&pi),
            DVector::from_element(d, 1.0),
            n as f64 + 2.0,
            DMatrix::identity(n, n),
        )
    }
}

/// Least-squares estimate of `Π` (`n x d`) from `y° = Π Y°`, with a `1e-8`
/// ridge when `Y° Y°'` is singular.
pub fn ols_coefficients(design: &DesignMatrices) -> Result<DMatrix<f64>> {
    let x = &design.regressors;
    let xx = x * x.transpose();
    let xy = x * design.y_stack.transpose();
    let factor = match nalgebra::Cholesky::new(xx.clone()) {
        Some(c) => c,
        None => {
            let ridge = 1e-8 * (xx.trace() / xx.nrows() as f64).max(1.0);
            let reg = &xx + DMatrix::identity(xx.nrows(), xx.nrows()) * ridge;
            nalgebra::Cholesky::new(reg).ok_or(Error::NotPositiveDefinite {
                context: "regressor cross-product",
            })?
        }
    };
    Ok(factor.solve(&xy).transpose())
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    pi0: Vec<f64>,
    lambda0: Vec<f64>,
    nu0: f64,
    #[serde(rename = "V0")]
    v0: Vec<Vec<f64>>,
}

impl From<ModelParams> for ParamsJson {
    fn from(p: ModelParams) -> Self {
        Self {
            pi0: p.pi0.iter().copied().collect(),
            lambda0: p.lambda0.iter().copied().collect(),
            nu0: p.nu0,
            v0: rows_of(&p.v0),
        }
    }
}

impl TryFrom<ParamsJson> for ModelParams {
    type Error = Error;

    fn try_from(j: ParamsJson) -> Result<Self> {
        let v0 = matrix_from_rows(&j.v0, "V0")?;
        ModelParams::new(DVector::from_vec(j.pi0), DVector::from_vec(j.lambda0), j.nu0, v0)
    }
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParams(format!("{name} rows have unequal lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Reshape helper used by callers holding `π` as a vector.
pub fn coefficient_matrix(pi: &DVector<f64>, n: usize, d: usize) -> Result<DMatrix<f64>> {
    unvec(pi, n, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParams {
        ModelParams::new(
            DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]),
            DVector::from_vec(vec![1.0, 0.5]),
            4.0,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn json_uses_documented_field_names() {
        let json = serde_json::to_value(sample()).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["V0", "lambda0", "nu0", "pi0"]);
        assert_eq!(json["V0"][0][1], 0.3);
        let back: ModelParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = sample();
        p.lambda0[0] = 0.0;
        assert!(p.validate().is_err());
        let mut p = sample();
        p.nu0 = 1.0;
        assert!(p.validate().is_err());
        let mut p = sample();
        p.v0[(0, 0)] = -1.0;
        assert!(p.validate().is_err());
        let mut p = sample();
        p.pi0 = DVector::zeros(3);
        assert!(p.validate().is_err());
        let bad = r#"{"pi0":[0,0],"lambda0":[1],"nu0":0.5,"V0":[[1,0],[0,1]]}"#;
        assert!(serde_json::from_str::<ModelParams>(bad).is_err());
    }

    #[test]
    fn pi0_matrix_is_column_major() {
        let p = sample();
        assert_eq!(p.pi0_matrix(), DMatrix::from_row_slice(2, 2, &[0.1, 0.3, 0.2, 0.4]));
    }
}
