//! Discounted LQ model with multiplicative noise channels: simulation and
//! exact second-moment propagation.
//!
//! Dynamics:
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + sum_j (C_j x_t + D_j u_t) xi_{j,t},
//! ```
//!
//! with `xi_t` a zero-mean i.i.d. vector whose (possibly correlated)
//! covariance couples the channels. Parameter perturbations of A and B are
//! expressed as extra channels with the matching shapes, so one moment
//! formula covers every noise source. The per-stage cost is
//! `x'Qx + u'Ru` plus the tau-weighted entropy term of the policy.
//!
//! Moment operators, with `Z = E[(x,u)(x,u)']` and `X = E[xx']`:
//!
//! ```text
//! lift:  Z  = [I; -K] X [I; -K]' + blockdiag(0, Sigma)
//! push:  X+ = [A B] Z [A B]' + sum_{j,l} cov_{jl} [C_j D_j] Z [C_l D_l]'
//! ```

use crate::error::{Error, Result};
use crate::qcalc::{DeformationParam, QGaussianSpec};
use crate::symvec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// One multiplicative noise channel `(C_j, D_j)`.
#[derive(Debug, Clone)]
pub struct NoiseChannel {
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl NoiseChannel {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        Self { c, d }
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
}

fn check_symmetric_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{name} must be square")));
    }
    if symvec::asymmetry(m) > 1e-12 {
        return Err(Error::NotSymmetric(format!(
            "{name} has relative asymmetry {:.3e}",
            symvec::asymmetry(m)
        )));
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::NotPositiveDefinite(format!("{name} failed Cholesky")));
    }
    Ok(())
}

fn check_symmetric_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{name} must be square")));
    }
    if symvec::asymmetry(m) > 1e-12 {
        return Err(Error::NotSymmetric(format!(
            "{name} has relative asymmetry {:.3e}",
            symvec::asymmetry(m)
        )));
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.abs().max().max(1.0);
    if min < -1e-10 * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} has eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

/// PSD square root via the symmetric eigendecomposition, clamping tiny
/// negative eigenvalues to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// System description for the discounted LQ problem with multiplicative
/// noise and entropy regularization.
#[derive(Debug, Clone)]
pub struct LqModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    channels: Vec<NoiseChannel>,
    channel_cov: DMatrix<f64>,
    q_cost: DMatrix<f64>,
    r_cost: DMatrix<f64>,
    gamma: f64,
    tau: f64,
    q: DeformationParam,
    noise_sqrt: DMatrix<f64>,
}

impl LqModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        channels: Vec<NoiseChannel>,
        channel_cov: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        gamma: f64,
        tau: f64,
        q: DeformationParam,
    ) -> Result<Self> {
        let m = a.nrows();
        let n = b.ncols();
        if a.ncols() != m {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        if b.nrows() != m {
            return Err(Error::DimensionMismatch(format!(
                "B must have {m} rows, got {}",
                b.nrows()
            )));
        }
        for (j, ch) in channels.iter().enumerate() {
            if ch.c.nrows() != m || ch.c.ncols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "channel {j}: C must be {m}x{m}"
                )));
            }
            if ch.d.nrows() != m || ch.d.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "channel {j}: D must be {m}x{n}"
                )));
            }
        }
        let p = channels.len();
        if channel_cov.nrows() != p || channel_cov.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "channel covariance must be {p}x{p}, got {}x{}",
                channel_cov.nrows(),
                channel_cov.ncols()
            )));
        }
        if p > 0 {
            check_symmetric_psd(&channel_cov, "channel covariance")?;
        }
        check_symmetric_pd(&q_cost, "Q")?;
        check_symmetric_pd(&r_cost, "R")?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization tau must be >= 0, got {tau}"
            )));
        }
        let noise_sqrt = if p > 0 {
            psd_sqrt(&channel_cov)
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(Self {
            a,
            b,
            channels,
            channel_cov,
            q_cost,
            r_cost,
            gamma,
            tau,
            q,
            noise_sqrt,
        })
    }

    /// Noise-free model, convenience for tests and degenerate problems.
    pub fn noise_free(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q_cost: DMatrix<f64>,
        r_cost: DMatrix<f64>,
        gamma: f64,
        tau: f64,
        q: DeformationParam,
    ) -> Result<Self> {
        Self::new(
            a,
            b,
            Vec::new(),
            DMatrix::zeros(0, 0),
            q_cost,
            r_cost,
            gamma,
            tau,
            q,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn channels(&self) -> &[NoiseChannel] {
        &self.channels
    }

    pub fn channel_cov(&self) -> &DMatrix<f64> {
        &self.channel_cov
    }

    pub fn q_cost(&self) -> &DMatrix<f64> {
        &self.q_cost
    }

    pub fn r_cost(&self) -> &DMatrix<f64> {
        &self.r_cost
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn q(&self) -> DeformationParam {
        self.q
    }

    /// Returns a copy with different cost-side regularization parameters.
    pub fn with_regularization(&self, tau: f64, q: DeformationParam) -> Result<Self> {
        let mut out = self.clone();
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regularization tau must be >= 0, got {tau}"
            )));
        }
        out.tau = tau;
        out.q = q;
        Ok(out)
    }

    /// Returns a copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    /// `H = diag(Q, R)`, the stage-cost matrix on the joint (x, u) space.
    pub fn stage_cost_matrix(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        let n = self.control_dim();
        let mut h = DMatrix::zeros(m + n, m + n);
        h.view_mut((0, 0), (m, m)).copy_from(&self.q_cost);
        h.view_mut((m, m), (n, n)).copy_from(&self.r_cost);
        h
    }

    /// One draw of the channel noise vector (zero mean, covariance
    /// `channel_cov`, Gaussian).
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.channels.len();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.noise_sqrt * z
    }

    /// One simulation step `A x + B u + sum_j (C_j x + D_j u) xi_j`.
    ///
    /// Channel terms are accumulated in channel order; callers relying on
    /// bit-reproducibility may depend on that.
    pub fn step<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() || u.len() != self.control_dim() {
            return Err(Error::DimensionMismatch(format!(
                "step expects x of length {} and u of length {}, got {} and {}",
                self.state_dim(),
                self.control_dim(),
                x.len(),
                u.len()
            )));
        }
        let xi = self.draw_noise(rng);
        let mut next = &self.a * x + &self.b * u;
        for (j, ch) in self.channels.iter().enumerate() {
            next += (&ch.c * x + &ch.d * u) * xi[j];
        }
        Ok(next)
    }

    /// `sum_{j,l} cov_{jl} M_j' P N_l` where `M_j`, `N_l` are the C or D
    /// matrices of channels j and l. Shared by the Riccati and Theta
    /// expressions.
    pub(crate) fn channel_term(
        &self,
        p: &DMatrix<f64>,
        left: ChannelSide,
        right: ChannelSide,
    ) -> DMatrix<f64> {
        let dim = |side: ChannelSide| match side {
            ChannelSide::C => self.state_dim(),
            ChannelSide::D => self.control_dim(),
        };
        let pick = |ch: &NoiseChannel, side: ChannelSide| -> DMatrix<f64> {
            match side {
                ChannelSide::C => ch.c.clone(),
                ChannelSide::D => ch.d.clone(),
            }
        };
        let mut acc = DMatrix::zeros(dim(left), dim(right));
        for (j, chj) in self.channels.iter().enumerate() {
            for (l, chl) in self.channels.iter().enumerate() {
                let w = self.channel_cov[(j, l)];
                if w != 0.0 {
                    acc += pick(chj, left).transpose() * p * pick(chl, right) * w;
                }
            }
        }
        acc
    }
}

/// Selector for `channel_term`: the state-side C or the control-side D
/// matrix of each channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ChannelSide {
    C,
    D,
}

/// A q-Gaussian feedback policy: the action at state `x` is distributed as
/// `N_q(-K x, Sigma)`. `Sigma = 0` encodes the deterministic policy used when
/// the entropy weight is zero.
#[derive(Debug, Clone)]
pub struct QGaussianPolicy {
    k: DMatrix<f64>,
    sigma: DMatrix<f64>,
    q: DeformationParam,
}

impl QGaussianPolicy {
    pub fn new(k: DMatrix<f64>, sigma: DMatrix<f64>, q: DeformationParam) -> Result<Self> {
        let n = k.nrows();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "policy covariance must be {n}x{n}, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        check_symmetric_psd(&sigma, "policy covariance")?;
        Ok(Self { k, sigma, q })
    }

    /// Deterministic policy `u = -K x` (zero exploration covariance).
    pub fn deterministic(k: DMatrix<f64>, q: DeformationParam) -> Self {
        let n = k.nrows();
        Self {
            sigma: DMatrix::zeros(n, n),
            k,
            q,
        }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn q(&self) -> DeformationParam {
        self.q
    }

    pub fn control_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn is_deterministic(&self) -> bool {
        self.sigma.iter().all(|v| *v == 0.0)
    }

    /// Action mean `-K x`.
    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.k * x)
    }

    /// The zero-mean action-noise distribution `N_q(0, Sigma)`.
    /// Errors when Sigma is not strictly positive definite.
    pub fn action_noise_spec(&self) -> Result<QGaussianSpec> {
        QGaussianSpec::new(DVector::zeros(self.control_dim()), self.sigma.clone(), self.q)
    }

    /// Draw an action at state `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let mean = self.mean(x);
        if self.is_deterministic() {
            return Ok(mean);
        }
        let spec = self.action_noise_spec()?;
        Ok(mean + crate::qcalc::sample_q_gaussian(&spec, rng))
    }

    /// Deformed entropy of the action distribution (state independent).
    pub fn entropy(&self) -> Result<f64> {
        Ok(crate::qcalc::q_entropy_closed_form(&self.action_noise_spec()?))
    }
}

/// Moment lift `Z = [I; -K] X [I; -K]' + blockdiag(0, Sigma)`.
pub fn moment_lift(x_moment: &DMatrix<f64>, policy: &QGaussianPolicy) -> DMatrix<f64> {
    let m = policy.state_dim();
    let n = policy.control_dim();
    let mut sel = DMatrix::zeros(m + n, m);
    sel.view_mut((0, 0), (m, m)).copy_from(&DMatrix::identity(m, m));
    sel.view_mut((m, 0), (n, m)).copy_from(&(-policy.gain()));
    let mut z = &sel * x_moment * sel.transpose();
    {
        let mut exploration_block = z.view_mut((m, m), (n, n));
        exploration_block += policy.sigma();
    }
    z
}

/// Moment push `X+ = [A B] Z [A B]' + sum_{j,l} cov_{jl} [C_j D_j] Z [C_l D_l]'`.
pub fn moment_push(model: &LqModel, z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = model.state_dim();
    let n = model.control_dim();
    let mut f = DMatrix::zeros(m, m + n);
    f.view_mut((0, 0), (m, m)).copy_from(model.a());
    f.view_mut((0, m), (m, n)).copy_from(model.b());
    let mut out = &f * z * f.transpose();
    let stacked: Vec<DMatrix<f64>> = model
        .channels()
        .iter()
        .map(|ch| {
            let mut g = DMatrix::zeros(m, m + n);
            g.view_mut((0, 0), (m, m)).copy_from(ch.c());
            g.view_mut((0, m), (m, n)).copy_from(ch.d());
            g
        })
        .collect();
    for (j, gj) in stacked.iter().enumerate() {
        for (l, gl) in stacked.iter().enumerate() {
            let w = model.channel_cov()[(j, l)];
            if w != 0.0 {
                out += gj * z * gl.transpose() * w;
            }
        }
    }
    out
}

/// Matrix (in vec_s coordinates) of the closed-loop second-moment map
/// `X -> A_K X A_K' + sum_{j,l} cov_{jl} G_j X G_l'` with `A_K = A - B K`
/// and `G_j = C_j - D_j K`.
pub(crate) fn closed_loop_moment_matrix(model: &LqModel, k: &DMatrix<f64>) -> DMatrix<f64> {
    let a_k = model.a() - model.b() * k;
    let g: Vec<DMatrix<f64>> = model
        .channels()
        .iter()
        .map(|ch| ch.c() - ch.d() * k)
        .collect();
    symvec::linear_map_matrix(model.state_dim(), |x| {
        let mut out = &a_k * x * a_k.transpose();
        for (j, gj) in g.iter().enumerate() {
            for (l, gl) in g.iter().enumerate() {
                let w = model.channel_cov()[(j, l)];
                if w != 0.0 {
                    out += gj * x * gl.transpose() * w;
                }
            }
        }
        out
    })
}

/// Spectral radius of the closed-loop moment map for gain `K`.
pub(crate) fn moment_map_radius(model: &LqModel, k: &DMatrix<f64>) -> f64 {
    let map = closed_loop_moment_matrix(model, k);
    map.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// True iff the policy's closed loop is mean-square stabilizing at the
/// model's discount: the spectral radius of `X -> push(lift(X))` (with the
/// exploration covariance stripped) is strictly below `1/gamma`.
pub fn is_ms_stabilizing(model: &LqModel, policy: &QGaussianPolicy) -> bool {
    moment_map_radius(model, policy.gain()) < 1.0 / model.gamma()
}
