//! Exact solution of the entropy-regularized Riccati fixed point.
//!
//! The value function is `J*(x) = x' P x + c`, with P the fixed point of
//!
//! ```text
//! P = Q + K'RK + gamma (A - BK)' P (A - BK)
//!       + gamma sum_{j,l} cov_{jl} (C_j - D_j K)' P (C_l - D_l K),
//! K = gamma inner(P)^{-1} (B'PA + sum_{j,l} cov_{jl} D_j' P C_l),
//! inner(P) = R + gamma B'PB + gamma sum_{j,l} cov_{jl} D_j' P D_l,
//! ```
//!
//! and the optimal exploration covariance is `Sigma* = tau alpha inner(P)^{-1}`.
//! The constant collects the exploration cost and the entropy bonus:
//! `c = (Tr(Sigma* inner(P)) - tau H_q(Sigma*)) / (1 - gamma)`.

use crate::error::{Error, Result};
use crate::model::{is_ms_stabilizing, ChannelSide, LqModel, QGaussianPolicy};
use crate::qcalc;
use crate::symvec;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Quadratic value function `J(x) = x' P x + c`.
#[derive(Debug, Clone)]
pub struct QuadraticValue {
    p: DMatrix<f64>,
    c: f64,
}

impl QuadraticValue {
    pub fn new(p: DMatrix<f64>, c: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch("P must be square".into()));
        }
        if symvec::asymmetry(&p) > 1e-12 {
            return Err(Error::NotSymmetric(format!(
                "P has relative asymmetry {:.3e}",
                symvec::asymmetry(&p)
            )));
        }
        Ok(Self { p, c })
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `x' P x + c`.
    pub fn value_at(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.p.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "value_at expects dimension {}, got {}",
                self.p.nrows(),
                x.len()
            )));
        }
        Ok((x.transpose() * &self.p * x)[(0, 0)] + self.c)
    }
}

/// Fixed-point iteration controls.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative Frobenius tolerance on the update step.
    pub tol: f64,
    pub max_iter: usize,
    /// Damping d in `P <- (1-d) P + d RHS(P)`; 1.0 is the plain iteration.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 1.0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "solver tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("solver max_iter must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "solver damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Convergence diagnostics of a solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveInfo {
    pub iterations: usize,
    pub step_norm: f64,
    pub residual_norm: f64,
}

/// `inner(P) = R + gamma B'PB + gamma sum cov_{jl} D_j' P D_l`, the matrix
/// inverted by both the gain and the covariance formulas (equal to the
/// Theta_uu block at this P).
pub(crate) fn inner_matrix(model: &LqModel, p: &DMatrix<f64>) -> DMatrix<f64> {
    let g = model.gamma();
    model.r_cost()
        + (model.b().transpose() * p * model.b()) * g
        + model.channel_term(p, ChannelSide::D, ChannelSide::D) * g
}

fn inner_cholesky(model: &LqModel, p: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let inner = inner_matrix(model, p);
    Cholesky::new(inner).ok_or_else(|| {
        Error::NotPositiveDefinite(
            "regularized inner matrix R + gamma B'PB + channel terms failed Cholesky".into(),
        )
    })
}

/// Optimal gain at value matrix P:
/// `K = gamma inner(P)^{-1} (B'PA + sum cov_{jl} D_j' P C_l)`.
pub fn optimal_gain(model: &LqModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = inner_cholesky(model, p)?;
    let cross = model.b().transpose() * p * model.a()
        + model.channel_term(p, ChannelSide::D, ChannelSide::C);
    Ok(chol.solve(&cross) * model.gamma())
}

/// Optimal exploration covariance `Sigma* = tau alpha(q, n) inner(P)^{-1}`.
///
/// At tau = 0 the policy degenerates to deterministic control and the zero
/// matrix is returned rather than an error.
pub fn optimal_covariance(model: &LqModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.control_dim();
    if model.tau() == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let chol = inner_cholesky(model, p)?;
    let scale = model.tau() * model.q().alpha(n);
    let mut sigma = chol.inverse() * scale;
    // symmetrize rounding
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(sigma)
}

/// Right-hand side of the Riccati fixed point with `K = optimal_gain(P)`
/// substituted in.
fn riccati_rhs(model: &LqModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = optimal_gain(model, p)?;
    Ok(riccati_rhs_with_gain(model, p, &k))
}

fn riccati_rhs_with_gain(model: &LqModel, p: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let g = model.gamma();
    let a_k = model.a() - model.b() * k;
    let mut rhs = model.q_cost() + k.transpose() * model.r_cost() * k
        + a_k.transpose() * p * &a_k * g;
    let closed: Vec<DMatrix<f64>> = model
        .channels()
        .iter()
        .map(|ch| ch.c() - ch.d() * k)
        .collect();
    for (j, gj) in closed.iter().enumerate() {
        for (l, gl) in closed.iter().enumerate() {
            let w = model.channel_cov()[(j, l)];
            if w != 0.0 {
                rhs += gj.transpose() * p * gl * (g * w);
            }
        }
    }
    (&rhs + rhs.transpose()) * 0.5
}

/// `RHS(P) - P`; the zero matrix exactly at the fixed point.
pub fn riccati_residual(model: &LqModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(riccati_rhs(model, p)? - p)
}

/// Value constant for a policy with exploration covariance `sigma` whose
/// inner matrix is `inner`:
/// `c = (Tr(sigma inner) - tau H_q(sigma)) / (1 - gamma)`.
pub(crate) fn value_constant(model: &LqModel, inner: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let trace_term = (sigma * inner).trace();
    let entropy_term = if model.tau() == 0.0 {
        0.0
    } else {
        let spec = qcalc::QGaussianSpec::new(
            DVector::zeros(model.control_dim()),
            sigma.clone(),
            model.q(),
        )?;
        qcalc::entropy_offset_constant(&spec, model.tau())?
    };
    Ok((trace_term + entropy_term) / (1.0 - model.gamma()))
}

/// Solve the regularized Riccati fixed point by (optionally damped)
/// iteration from `P_0 = Q`.
///
/// Returns the value `(P, c)`, the optimal policy `(K*, Sigma*)`, and
/// convergence diagnostics. Errors if the iteration exhausts `max_iter`, if
/// the inner matrix loses positive definiteness, or if the converged gain is
/// not mean-square stabilizing.
pub fn solve(model: &LqModel, cfg: &SolverConfig) -> Result<(QuadraticValue, QGaussianPolicy, SolveInfo)> {
    cfg.validate()?;
    let mut p = model.q_cost().clone();
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        let rhs = riccati_rhs(model, &p)?;
        let next = if cfg.damping == 1.0 {
            rhs
        } else {
            &p * (1.0 - cfg.damping) + rhs * cfg.damping
        };
        step_norm = (&next - &p).norm();
        p = next;
        iterations = it;
        if step_norm <= cfg.tol * (1.0 + p.norm()) {
            break;
        }
        if it == cfg.max_iter {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: riccati_residual(model, &p)?.norm(),
            });
        }
    }
    let k = optimal_gain(model, &p)?;
    let policy = QGaussianPolicy::new(k.clone(), optimal_covariance(model, &p)?, model.q())?;
    if !is_ms_stabilizing(model, &policy) {
        let rho = crate::model::moment_map_radius(model, &k);
        return Err(Error::NotStabilizing {
            rho,
            bound: 1.0 / model.gamma(),
        });
    }
    let inner = inner_matrix(model, &p);
    let c = value_constant(model, &inner, policy.sigma())?;
    let residual_norm = riccati_residual(model, &p)?.norm();
    Ok((
        QuadraticValue::new(p, c)?,
        policy,
        SolveInfo {
            iterations,
            step_norm,
            residual_norm,
        },
    ))
}
