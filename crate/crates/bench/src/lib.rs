//! Fixtures shared by the benchmarks.

use cmvt::simulate::{simulate_bvar, ModelKind, RngStream};
use cmvt::{build_design, DesignMatrices, MinnesotaHyper, ModelParams};
use nalgebra::{DMatrix, DVector};

/// Simulated design with an intercept and `p` lags of `n` variables.
pub fn fixture(n: usize, p: usize, t_len: usize, model: ModelKind, seed: u64) -> (ModelParams, DesignMatrices) {
    let d = 1 + n * p;
    let mut pi0 = DMatrix::zeros(n, d);
    for i in 0..n {
        pi0[(i, 0)] = 0.1;
        pi0[(i, 1 + i)] = 0.4;
    }
    let truth = ModelParams::new(
        DVector::from_column_slice(pi0.as_slice()),
        DVector::from_fn(d, |k, _| if k == 0 { 0.1 } else { 0.005 }),
        n as f64 + 4.0,
        DMatrix::identity(n, n),
    )
    .expect("valid fixture parameters");
    let exo = DMatrix::from_element(1, t_len, 1.0);
    let pre = DMatrix::zeros(n, p);
    let data = simulate_bvar(&truth, p, model, &exo, &pre, &RngStream::new(seed)).expect("simulation succeeds");
    let design = build_design(&data);
    (ModelParams::default_init(&design).expect("default init"), design)
}

pub fn minnesota_fixture(design: &DesignMatrices) -> MinnesotaHyper {
    MinnesotaHyper::default_init(design, vec![1; design.n()]).expect("default init")
}
