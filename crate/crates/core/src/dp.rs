//! Q-function machinery: the Theta parametrization, exact policy evaluation,
//! Tsallis policy improvement, and model-based policy iteration.
//!
//! For a policy with gain K the Q-function is quadratic on the joint space,
//! `Q(x, u) = [x; u]' Theta [x; u] + const`, with blocks
//!
//! ```text
//! Theta_xx = Q + gamma A'PA + gamma sum cov_{jl} C_j' P C_l
//! Theta_xu = gamma (A'PB + sum cov_{jl} C_j' P D_l)
//! Theta_uu = R + gamma B'PB + gamma sum cov_{jl} D_j' P D_l
//! const    = const' + gamma c,
//! ```
//!
//! where `const' = -tau H_q(policy)` is the per-stage entropy offset. Policy
//! improvement reads the minimizer off the blocks: `K+ = Theta_uu^{-1}
//! Theta_ux` (action mean `-K+ x`) and `Sigma+ = tau alpha Theta_uu^{-1}`.

use crate::error::{Error, Result};
use crate::model::{moment_map_radius, ChannelSide, LqModel, QGaussianPolicy};
use crate::solver::{self, QuadraticValue};
use crate::symvec;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Quadratic Q-function parameters: a symmetric (m+n) x (m+n) matrix with
/// named blocks plus the additive constant.
#[derive(Debug, Clone)]
pub struct ThetaMatrix {
    theta: DMatrix<f64>,
    state_dim: usize,
    control_dim: usize,
    constant: f64,
}

impl ThetaMatrix {
    pub fn new(theta: DMatrix<f64>, state_dim: usize, control_dim: usize, constant: f64) -> Result<Self> {
        let d = state_dim + control_dim;
        if theta.nrows() != d || theta.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "Theta must be {d}x{d}, got {}x{}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        if symvec::asymmetry(&theta) > 1e-10 {
            return Err(Error::NotSymmetric(format!(
                "Theta has relative asymmetry {:.3e}",
                symvec::asymmetry(&theta)
            )));
        }
        Ok(Self {
            theta,
            state_dim,
            control_dim,
            constant,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn xx(&self) -> DMatrix<f64> {
        self.theta.view((0, 0), (self.state_dim, self.state_dim)).clone_owned()
    }

    pub fn xu(&self) -> DMatrix<f64> {
        self.theta
            .view((0, self.state_dim), (self.state_dim, self.control_dim))
            .clone_owned()
    }

    pub fn ux(&self) -> DMatrix<f64> {
        self.theta
            .view((self.state_dim, 0), (self.control_dim, self.state_dim))
            .clone_owned()
    }

    pub fn uu(&self) -> DMatrix<f64> {
        self.theta
            .view(
                (self.state_dim, self.state_dim),
                (self.control_dim, self.control_dim),
            )
            .clone_owned()
    }

    /// Stacked parameter vector `[vec_s(Theta); const]` of length
    /// (m+n)(m+n+1)/2 + 1, the layout used by the data-driven estimators.
    pub fn parameter_vector(&self) -> DVector<f64> {
        let v = symvec::vec_s(&self.theta).expect("Theta is symmetric by construction");
        let mut out = DVector::zeros(v.len() + 1);
        out.rows_mut(0, v.len()).copy_from(&v);
        out[v.len()] = self.constant;
        out
    }

    /// Inverse of `parameter_vector`.
    pub fn from_parameter_vector(v: &DVector<f64>, state_dim: usize, control_dim: usize) -> Result<Self> {
        let d = state_dim + control_dim;
        let len = symvec::sym_len(d);
        if v.len() != len + 1 {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector must have length {}, got {}",
                len + 1,
                v.len()
            )));
        }
        let theta = symvec::unvec_s(&v.rows(0, len).clone_owned(), d)?;
        Self::new(theta, state_dim, control_dim, v[len])
    }
}

/// Per-stage entropy offset `const' = -tau H_q` of a policy under the
/// model's regularization weight. Zero when tau = 0.
pub fn stage_offset(model: &LqModel, policy: &QGaussianPolicy) -> Result<f64> {
    if model.tau() == 0.0 {
        return Ok(0.0);
    }
    crate::qcalc::entropy_offset_constant(&policy.action_noise_spec()?, model.tau())
}

/// Assemble Theta from a value function `(P, c)` and the per-stage entropy
/// offset of the evaluated policy.
pub fn theta_from_value(model: &LqModel, value: &QuadraticValue, const_prime: f64) -> ThetaMatrix {
    let m = model.state_dim();
    let n = model.control_dim();
    let g = model.gamma();
    let p = value.p();
    let mut theta = DMatrix::zeros(m + n, m + n);
    let xx = model.q_cost()
        + (model.a().transpose() * p * model.a()) * g
        + model.channel_term(p, ChannelSide::C, ChannelSide::C) * g;
    let xu = (model.a().transpose() * p * model.b()
        + model.channel_term(p, ChannelSide::C, ChannelSide::D))
        * g;
    let uu = solver::inner_matrix(model, p);
    theta.view_mut((0, 0), (m, m)).copy_from(&xx);
    theta.view_mut((0, m), (m, n)).copy_from(&xu);
    theta.view_mut((m, 0), (n, m)).copy_from(&xu.transpose());
    theta.view_mut((m, m), (n, n)).copy_from(&uu);
    let theta = (&theta + theta.transpose()) * 0.5;
    ThetaMatrix::new(theta, m, n, const_prime + g * value.c()).expect("symmetric by construction")
}

/// `Q(x, u) = [x; u]' Theta [x; u] + const`.
pub fn q_value(theta: &ThetaMatrix, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    if x.len() != theta.state_dim() || u.len() != theta.control_dim() {
        return Err(Error::DimensionMismatch(format!(
            "q_value expects dims ({}, {}), got ({}, {})",
            theta.state_dim(),
            theta.control_dim(),
            x.len(),
            u.len()
        )));
    }
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    Ok((z.transpose() * theta.matrix() * &z)[(0, 0)] + theta.constant())
}

/// Solve the fixed-gain Lyapunov equation
/// `P = Q + K'RK + gamma (A-BK)'P(A-BK) + gamma sum cov (C_j - D_j K)'P(C_l - D_l K)`
/// directly on the symmetric-vectorized system. Returns `(P, inner(P))`.
fn evaluate_gain(model: &LqModel, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = model.gamma();
    let rho = moment_map_radius(model, k);
    if rho >= 1.0 / g {
        return Err(Error::NotStabilizing { rho, bound: 1.0 / g });
    }
    let m = model.state_dim();
    let a_k = model.a() - model.b() * k;
    let closed: Vec<DMatrix<f64>> = model
        .channels()
        .iter()
        .map(|ch| ch.c() - ch.d() * k)
        .collect();
    // adjoint of the closed-loop moment map: P -> A_K'PA_K + sum G_j'PG_l
    let adjoint = symvec::linear_map_matrix(m, |p| {
        let mut out = a_k.transpose() * p * &a_k;
        for (j, gj) in closed.iter().enumerate() {
            for (l, gl) in closed.iter().enumerate() {
                let w = model.channel_cov()[(j, l)];
                if w != 0.0 {
                    out += gj.transpose() * p * gl * w;
                }
            }
        }
        out
    });
    let stage = model.q_cost() + k.transpose() * model.r_cost() * k;
    let stage = (&stage + stage.transpose()) * 0.5;
    let len = symvec::sym_len(m);
    let system = DMatrix::identity(len, len) - adjoint * g;
    let rhs = symvec::vec_s(&stage)?;
    let sol = system.lu().solve(&rhs).ok_or_else(|| Error::NoConvergence {
        iterations: 0,
        residual: f64::NAN,
    })?;
    let p = symvec::unvec_s(&sol, m)?;
    let p = (&p + p.transpose()) * 0.5;
    let inner = solver::inner_matrix(model, &p);
    Ok((p, inner))
}

/// Exact policy evaluation: value `(P_K, c_K)` and the associated Theta.
///
/// Errors with `NotStabilizing` when the closed loop's moment map has
/// spectral radius at or above 1/gamma.
pub fn policy_evaluate(model: &LqModel, policy: &QGaussianPolicy) -> Result<(QuadraticValue, ThetaMatrix)> {
    let (p, inner) = evaluate_gain(model, policy.gain())?;
    let c = solver::value_constant(model, &inner, policy.sigma())?;
    let value = QuadraticValue::new(p, c)?;
    let const_prime = stage_offset(model, policy)?;
    let theta = theta_from_value(model, &value, const_prime);
    Ok((value, theta))
}

/// Tsallis policy improvement: gain `K+ = Theta_uu^{-1} Theta_ux` (action
/// mean `-K+ x`) and covariance `Sigma+ = tau alpha Theta_uu^{-1}`.
pub fn policy_improve(theta: &ThetaMatrix, model: &LqModel) -> Result<QGaussianPolicy> {
    let uu = theta.uu();
    let chol = Cholesky::new(uu).ok_or_else(|| {
        Error::NotPositiveDefinite("Theta_uu failed Cholesky in policy improvement".into())
    })?;
    let k = chol.solve(&theta.ux());
    let n = model.control_dim();
    let sigma = if model.tau() == 0.0 {
        DMatrix::zeros(n, n)
    } else {
        let s = chol.inverse() * (model.tau() * model.q().alpha(n));
        (&s + s.transpose()) * 0.5
    };
    QGaussianPolicy::new(k, sigma, model.q())
}

/// One record of a policy-iteration run.
#[derive(Debug, Clone)]
pub struct PiRecord {
    pub iteration: usize,
    pub gain: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Exact objective `E_{x ~ D}[J(x)]` with `D = N(0, r_x^2 I)`.
    pub objective: f64,
    /// `|K_t - K*|_F / |K*|_F` against the exact solution.
    pub gain_error: f64,
}

/// History of a model-based policy-iteration run.
#[derive(Debug, Clone)]
pub struct PiHistory {
    pub records: Vec<PiRecord>,
    pub reference_gain: DMatrix<f64>,
    /// Message of the evaluation failure that aborted the run, if any.
    pub aborted: Option<String>,
}

impl PiHistory {
    /// CSV rows `iteration,normalized_gain_error,objective`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,normalized_gain_error,objective")?;
        for rec in &self.records {
            writeln!(w, "{},{},{}", rec.iteration, rec.gain_error, rec.objective)?;
        }
        Ok(())
    }
}

/// Model-based policy iteration from a stabilizing initial gain.
///
/// Alternates exact evaluation and improvement for `iters` steps. The
/// exploration covariance is refreshed from Theta_uu each iteration, so the
/// recorded objective is the entropy-inclusive value of the policy actually
/// held at step t. `report_scale` is the radius r_x of the reporting
/// distribution. An evaluation failure after the first step aborts and
/// returns the history collected so far with `aborted` set.
pub fn model_based_pi(
    model: &LqModel,
    k0: &DMatrix<f64>,
    iters: usize,
    report_scale: f64,
) -> Result<PiHistory> {
    let (_, reference, _) = solver::solve(model, &solver::SolverConfig::default())?;
    let k_star = reference.gain().clone();
    let k_star_norm = k_star.norm().max(f64::MIN_POSITIVE);
    let mut history = PiHistory {
        records: Vec::with_capacity(iters + 1),
        reference_gain: k_star.clone(),
        aborted: None,
    };
    let mut k = k0.clone();
    for t in 0..=iters {
        let (p, inner) = match evaluate_gain(model, &k) {
            Ok(pair) => pair,
            Err(e) if t == 0 => return Err(e),
            Err(e) => {
                history.aborted = Some(e.to_string());
                return Ok(history);
            }
        };
        let n = model.control_dim();
        let sigma = if model.tau() == 0.0 {
            DMatrix::zeros(n, n)
        } else {
            let chol = Cholesky::new(inner.clone()).ok_or_else(|| {
                Error::NotPositiveDefinite("inner matrix failed Cholesky".into())
            })?;
            let s = chol.inverse() * (model.tau() * model.q().alpha(n));
            (&s + s.transpose()) * 0.5
        };
        let policy = QGaussianPolicy::new(k.clone(), sigma.clone(), model.q())?;
        let c = solver::value_constant(model, &inner, policy.sigma())?;
        let objective = report_scale * report_scale * p.trace() + c;
        history.records.push(PiRecord {
            iteration: t,
            gain: k.clone(),
            sigma,
            objective,
            gain_error: (&k - &k_star).norm() / k_star_norm,
        });
        if t < iters {
            let value = QuadraticValue::new(p, c)?;
            let const_prime = stage_offset(model, &policy)?;
            let theta = theta_from_value(model, &value, const_prime);
            let improved = policy_improve(&theta, model)?;
            k = improved.gain().clone();
        }
    }
    Ok(history)
}
