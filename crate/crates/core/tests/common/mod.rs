#![allow(dead_code)]

use cmvt::simulate::{simulate_bvar, ModelKind, RngStream};
use cmvt::{build_design, DesignMatrices, MinnesotaHyper, ModelParams};
use nalgebra::{DMatrix, DVector};

pub fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Random well-conditioned SPD matrix.
pub fn random_spd(rng: &mut RngStream, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    (&a * a.transpose() / n as f64 + DMatrix::identity(n, n)) * scale
}

/// Parameters that keep simulated paths stable: small lag means and
/// coefficient variances, `ν₀ >= n + 3`.
pub fn random_params(rng: &mut RngStream, n: usize, l: usize, p: usize) -> ModelParams {
    let d = l + n * p;
    let mut pi0 = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            pi0[(i, k)] = if k < l {
                uniform(rng, -0.5, 0.5)
            } else {
                uniform(rng, -0.2, 0.2) / (n * p) as f64
            };
        }
    }
    let lambda0 = DVector::from_fn(d, |k, _| if k < l { uniform(rng, 0.1, 1.0) } else { uniform(rng, 0.005, 0.03) });
    let nu0 = n as f64 + uniform(rng, 3.0, 8.0);
    let scale = uniform(rng, 0.5, 2.0);
    let v0 = random_spd(rng, n, scale);
    ModelParams::new(DVector::from_column_slice(pi0.as_slice()), lambda0, nu0, v0).unwrap()
}

pub fn simulate_design(params: &ModelParams, p: usize, model: ModelKind, t_len: usize, seed: u64) -> DesignMatrices {
    let n = params.n();
    let l = params.d() - n * p;
    let rng = RngStream::new(seed);
    let mut aux = rng.split(u64::MAX - 1);
    let mut exo = DMatrix::from_element(l, t_len, 1.0);
    for r in 1..l {
        for t in 0..t_len {
            exo[(r, t)] = aux.standard_normal();
        }
    }
    let pre = DMatrix::from_fn(n, p, |_, _| 0.1 * aux.standard_normal());
    let data = simulate_bvar(params, p, model, &exo, &pre, &rng).unwrap();
    build_design(&data)
}

pub fn random_hyper(rng: &mut RngStream, n: usize, l: usize, m: usize) -> MinnesotaHyper {
    MinnesotaHyper {
        c_m: DMatrix::from_fn(m, l, |_, _| uniform(rng, -1.0, 1.0)),
        eps: DVector::from_fn(l, |_, _| uniform(rng, 0.2, 3.0)),
        alpha: uniform(rng, 0.5, 5.0),
        beta: uniform(rng, -1.0, 2.0),
        gamma: DVector::from_fn(n, |_, _| uniform(rng, 0.3, 3.0)),
        phi: (0..n).map(|i| u8::from(i >= m)).collect(),
        nu0: n as f64 + uniform(rng, 1.0, 6.0),
        v0: {
            let scale = uniform(rng, 0.5, 2.0);
            random_spd(rng, n, scale)
        },
    }
}

/// Adaptive Simpson on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            left + right + diff / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫ f` over the real line through `y = center + scale · tan θ`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, center: f64, scale: f64, tol: f64) -> f64 {
    let half = std::f64::consts::FRAC_PI_2;
    let g = |th: f64| {
        let c = th.cos();
        if c.abs() < 1e-300 {
            return 0.0;
        }
        let v = f(center + scale * th.tan()) * scale / (c * c);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    // split at the centre so the peak is a node
    adaptive_simpson(&g, -half, 0.0, tol) + adaptive_simpson(&g, 0.0, half, tol)
}
