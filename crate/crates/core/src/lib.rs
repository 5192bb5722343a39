//! Bayesian vector autoregressions with conjugate Normal/inverse-Wishart
//! priors: exact marginal likelihoods, EM estimation of the hyperparameters
//! (general and Minnesota-structured), and simulation.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod em;
pub mod error;
pub mod linalg;
pub mod minnesota;
pub mod params;
pub mod simulate;
pub mod specialfn;
pub mod type1;
pub mod type2;

pub use dataio::{build_design, load_dataset, DesignMatrices, TimeSeriesDataset};
pub use em::{EmTrace, FitOptions, GammaVariant, NuEquation, StopReason};
pub use error::{Error, Result};
pub use params::{ModelParams, Type1Params, Type2Params};
pub use minnesota::MinnesotaHyper;
pub use simulate::{ModelKind, RngStream};
