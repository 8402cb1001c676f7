//! Shared fixtures and independent numerical oracles for the integration
//! tests: composite-Simpson quadrature, a scalar bisection oracle for the
//! Riccati fixed point, and the reference market setup.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use tsallis_lq::{DeformationParam, LqModel, MarketSpec, MvNoiseMode, MvProblem};

pub fn dp(q: f64) -> DeformationParam {
    DeformationParam::new(q).unwrap()
}

/// Composite Simpson quadrature on [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = if intervals % 2 == 0 { intervals } else { intervals + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// 2-D tensor Simpson quadrature on [ax, bx] x [ay, by].
pub fn simpson2<F: Fn(f64, f64) -> f64>(
    f: F,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    intervals: usize,
) -> f64 {
    simpson(|x| simpson(|y| f(x, y), ay, by, intervals), ax, bx, intervals)
}

/// Surface area of the unit (n-1)-sphere for n = 1, 2, 3.
pub fn sphere_surface(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => unimplemented!("surface area only needed for n <= 3"),
    }
}

/// Independent scalar Riccati oracle: finds the fixed point of
///
/// ```text
/// P = Q + K^2 R + gamma P ((A - B K)^2 + W (C - D K)^2),
/// K = gamma (B P A + W D P C) / (R + gamma P (B^2 + W D^2)),
/// ```
///
/// by bisection on f(P) = RHS(P) - P, entirely in scalar arithmetic.
pub struct ScalarRiccatiOracle {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub w: f64,
    pub q_cost: f64,
    pub r_cost: f64,
    pub gamma: f64,
}

impl ScalarRiccatiOracle {
    pub fn gain_at(&self, p: f64) -> f64 {
        let inner = self.r_cost + self.gamma * p * (self.b * self.b + self.w * self.d * self.d);
        self.gamma * (self.b * p * self.a + self.w * self.d * p * self.c) / inner
    }

    pub fn rhs(&self, p: f64) -> f64 {
        let k = self.gain_at(p);
        let closed = self.a - self.b * k;
        let noise = self.c - self.d * k;
        self.q_cost + k * k * self.r_cost + self.gamma * p * (closed * closed + self.w * noise * noise)
    }

    /// Bisection root of RHS(P) - P starting from the bracket [Q, hi].
    pub fn solve(&self) -> f64 {
        let f = |p: f64| self.rhs(p) - p;
        let mut lo = self.q_cost;
        assert!(f(lo) >= 0.0, "lower bracket must satisfy f >= 0");
        let mut hi = lo.max(1.0);
        while f(hi) > 0.0 {
            hi *= 2.0;
            assert!(hi < 1e12, "no sign change found; instance not stabilizable");
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Investment penalty used by the reference experiments: small, positive
/// definite, entries within [0, 0.1].
pub fn paper_r_cost() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.08, 0.02, 0.01, 0.02, 0.07, 0.015, 0.01, 0.015, 0.09],
    )
}

/// Reference market: gross risk-free 1.057, mean excess returns
/// (0.21, 0.28, 0.22), per-asset excess variance 0.99.
pub fn paper_market() -> MarketSpec {
    MarketSpec::new(
        1.057,
        DVector::from_vec(vec![0.21, 0.28, 0.22]),
        DMatrix::identity(3, 3) * 0.99,
    )
    .unwrap()
}

pub fn paper_problem() -> MvProblem {
    MvProblem {
        market: paper_market(),
        r_cost: paper_r_cost(),
        target: 2.0,
        lambda: 2.0,
        gamma: 0.9,
        tau: 0.7,
        q: dp(0.8),
        noise_mode: MvNoiseMode::PerAsset,
    }
}

/// The reference MV setup embedded as a scalar-state LQ model with
/// per-asset noise channels.
pub fn paper_model() -> LqModel {
    paper_problem().to_lq().unwrap()
}

/// Initial gain induced by the all-0.8 parameter fill: each entry
/// 0.8/sqrt(2) in the cross block against the filled Theta_uu.
pub fn fill_initial_gain(model: &LqModel) -> DMatrix<f64> {
    let state = tsallis_lq::lstd::filled_initial_state(
        model.state_dim(),
        model.control_dim(),
        0.8,
        20.0,
    )
    .unwrap();
    let len = tsallis_lq::sym_len(model.state_dim() + model.control_dim());
    let theta = tsallis_lq::unvec_s(&state.theta_hat.rows(0, len).clone_owned(), model.state_dim() + model.control_dim()).unwrap();
    let m = model.state_dim();
    let n = model.control_dim();
    let uu = theta.view((m, m), (n, n)).clone_owned();
    let ux = theta.view((m, 0), (n, m)).clone_owned();
    nalgebra::Cholesky::new(uu).unwrap().solve(&ux)
}

/// Mean and standard error of a sample.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}
