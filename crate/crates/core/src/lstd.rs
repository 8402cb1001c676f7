//! Data-driven policy iteration: PE-compliant rollout generation,
//! error-in-variables regression rows, batch and recursive
//! instrumental-variable estimators, and the approximate policy-iteration
//! loop in offline and online modes.
//!
//! Each observed transition yields the rank-1 moments
//! `Z_i = z_i z_i'` with `z_i = [x_i; u_i]`, `X_{i+} = x_{i+} x_{i+}'`, and
//! `Z_{i+}` built from `(x_{i+}, u_{i+})` with `u_{i+}` drawn from the same
//! exploratory law. The Bellman identity in parameter form gives the row
//!
//! ```text
//! a_i = [vec_s(Z_i - gamma Z_{i+}); (1 - gamma)]
//! g_i = [vec_s(Z_i); 1]
//! b_i = Tr(H Z_i) + const'
//! ```
//!
//! for the stacked parameter `[vec_s(Theta); const]`. The sampling error
//! `e_i = gamma vec_s(Z_{i+} - M(E(Z_i)))` correlates with `a_i`, so ordinary
//! least squares is inconsistent; `g_i` is uncorrelated with `e_i` and serves
//! as the instrument. The intercept coordinate absorbs every additive
//! constant, so the learned gain never depends on the (unobservable) value
//! constant.

use crate::dp::{self, ThetaMatrix};
use crate::error::{Error, Result};
use crate::model::{LqModel, QGaussianPolicy};
use crate::qcalc::{sample_q_gaussian, QGaussianSpec};
use crate::symvec;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use crate::symvec::{sym_len, unvec_s, vec_s};

/// One observed moment pair `(Z_i, X_{i+}, Z_{i+})`.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub z: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub z_plus: DMatrix<f64>,
}

/// One regression row of the error-in-variables model.
#[derive(Debug, Clone)]
pub struct RegressionRow {
    /// Regressor `[vec_s(Z - gamma Z+); (1 - gamma)]`.
    pub a: DVector<f64>,
    /// Target `Tr(H Z) + const'`.
    pub b: f64,
    /// Instrument `[vec_s(Z); 1]`.
    pub g: DVector<f64>,
}

/// State of the recursive instrumental-variable estimator.
///
/// `s` tracks `(S_0^{-1} + sum g_i a_i')^{-1}`; it is not symmetric in
/// general because instrument and regressor differ.
#[derive(Debug, Clone)]
pub struct IvEstimatorState {
    pub theta_hat: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl IvEstimatorState {
    /// Initialize with estimate `theta0` and confidence `S_0 = beta0 I`.
    pub fn new(theta0: DVector<f64>, beta0: f64) -> Result<Self> {
        if !(beta0 > 0.0) || !beta0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta0 must be positive and finite, got {beta0}"
            )));
        }
        let d = theta0.len();
        Ok(Self {
            theta_hat: theta0,
            s: DMatrix::identity(d, d) * beta0,
        })
    }
}

/// Exploration law for the additive excitation `nu` in `u = -Kx + nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationLaw {
    /// `nu ~ N_q(0, Sigma)` resampled until `|nu| <= r_nu`.
    QGaussianClipped,
    /// `nu` uniform on the ball of radius `r_nu`.
    UniformBall,
}

/// Persistent-excitation data-generation parameters: M trajectories of
/// length T for N = M T samples per iteration.
#[derive(Debug, Clone)]
pub struct PeConfig {
    pub trajectories: usize,
    pub horizon: usize,
    /// Exploration radius for `nu`.
    pub r_nu: f64,
    /// Initial-state radius: `x_0` uniform on the ball of this radius.
    pub r_x: f64,
    pub exploration: ExplorationLaw,
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter(
                "PE config needs at least one trajectory and one step".into(),
            ));
        }
        if !(self.r_nu > 0.0) || !(self.r_x > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "PE radii must be positive, got r_nu = {}, r_x = {}",
                self.r_nu, self.r_x
            )));
        }
        Ok(())
    }

    /// Samples per iteration, N = M T.
    pub fn samples_per_iteration(&self) -> usize {
        self.trajectories * self.horizon
    }
}

fn uniform_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let mut dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut norm = dir.norm();
    while norm == 0.0 {
        dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        norm = dir.norm();
    }
    dir /= norm;
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}

/// Per-batch exploration sampler; caches the q-Gaussian spec so the
/// covariance factorization happens once.
struct ExplorationSampler {
    law: ExplorationLaw,
    r_nu: f64,
    spec: Option<QGaussianSpec>,
    dim: usize,
}

impl ExplorationSampler {
    fn new(policy: &QGaussianPolicy, pe: &PeConfig) -> Result<Self> {
        let spec = match pe.exploration {
            ExplorationLaw::UniformBall => None,
            ExplorationLaw::QGaussianClipped => {
                if policy.is_deterministic() {
                    None
                } else {
                    Some(policy.action_noise_spec()?)
                }
            }
        };
        Ok(Self {
            law: pe.exploration,
            r_nu: pe.r_nu,
            spec,
            dim: policy.control_dim(),
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match (self.law, &self.spec) {
            (ExplorationLaw::UniformBall, _) => uniform_ball(self.dim, self.r_nu, rng),
            (ExplorationLaw::QGaussianClipped, None) => DVector::zeros(self.dim),
            (ExplorationLaw::QGaussianClipped, Some(spec)) => {
                for _ in 0..10_000 {
                    let nu = sample_q_gaussian(spec, rng);
                    if nu.norm() <= self.r_nu {
                        return nu;
                    }
                }
                // pathological covariance: fall back to the ball boundary
                let nu = sample_q_gaussian(spec, rng);
                let norm = nu.norm();
                if norm > 0.0 {
                    nu * (self.r_nu / norm)
                } else {
                    nu
                }
            }
        }
    }
}

fn joint_outer(x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    &z * z.transpose()
}

/// A batch of pairs plus a divergence flag raised when some trajectory's
/// state norm crossed the runaway threshold.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<SamplePair>,
    pub diverged: bool,
}

/// Anything that can produce moment pairs for a behavior policy: a live
/// simulator, logged data, or (in tests) the exact moment operators.
pub trait PairSource {
    fn next_pairs(&mut self, policy: &QGaussianPolicy) -> Result<PairBatch>;
}

/// Rollout-based pair source backed by the model simulator.
///
/// Each trajectory owns a counter-derived RNG stream
/// (`stream = iteration * M + trajectory`), so batches are reproducible for
/// a given seed regardless of scheduling, and rows are consumed
/// trajectory-major, time-minor. In online mode trajectories continue across
/// iterations instead of resetting to fresh initial states; a trajectory
/// that crossed the divergence threshold is restarted from a fresh draw.
pub struct SimulatedRollouts<'a> {
    model: &'a LqModel,
    pe: PeConfig,
    seed: u64,
    online: bool,
    iteration: u64,
    states: Vec<Option<DVector<f64>>>,
    /// State norm beyond which a trajectory counts as diverged.
    pub divergence_norm: f64,
}

impl<'a> SimulatedRollouts<'a> {
    pub fn new(model: &'a LqModel, pe: PeConfig, seed: u64, online: bool) -> Result<Self> {
        pe.validate()?;
        let m = pe.trajectories;
        Ok(Self {
            model,
            pe,
            seed,
            online,
            iteration: 0,
            states: vec![None; m],
            divergence_norm: 1e6,
        })
    }

    pub fn pe(&self) -> &PeConfig {
        &self.pe
    }

    fn stream(&self, trajectory: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.iteration * self.pe.trajectories as u64 + trajectory as u64 + 1);
        rng
    }
}

impl PairSource for SimulatedRollouts<'_> {
    fn next_pairs(&mut self, policy: &QGaussianPolicy) -> Result<PairBatch> {
        let sampler = ExplorationSampler::new(policy, &self.pe)?;
        let m_state = self.model.state_dim();
        let mut pairs = Vec::with_capacity(self.pe.samples_per_iteration());
        let mut diverged = false;
        for j in 0..self.pe.trajectories {
            let mut rng = self.stream(j);
            let mut x = match (self.online, self.states[j].take()) {
                (true, Some(prev)) => prev,
                _ => uniform_ball(m_state, self.pe.r_x, &mut rng),
            };
            let mut u = policy.mean(&x) + sampler.draw(&mut rng);
            for _ in 0..self.pe.horizon {
                let x_next = self.model.step(&x, &u, &mut rng)?;
                let u_next = policy.mean(&x_next) + sampler.draw(&mut rng);
                pairs.push(SamplePair {
                    z: joint_outer(&x, &u),
                    x_plus: &x_next * x_next.transpose(),
                    z_plus: joint_outer(&x_next, &u_next),
                });
                if x_next.norm() > self.divergence_norm {
                    diverged = true;
                }
                x = x_next;
                u = u_next;
            }
            if self.online {
                self.states[j] = if x.norm() > self.divergence_norm {
                    None // restart this trajectory next iteration
                } else {
                    Some(x)
                };
            }
        }
        self.iteration += 1;
        Ok(PairBatch { pairs, diverged })
    }
}

/// Generate one batch of rollout pairs from fresh initial states.
pub fn generate_rollouts(
    model: &LqModel,
    policy: &QGaussianPolicy,
    pe: &PeConfig,
    seed: u64,
) -> Result<Vec<SamplePair>> {
    let mut source = SimulatedRollouts::new(model, pe.clone(), seed, false)?;
    Ok(source.next_pairs(policy)?.pairs)
}

/// Noise-free pair source built from the exact moment operators: for each
/// spanning `Z` it returns `X+ = E(Z)` and `Z+ = M(E(Z))`, so the sampling
/// error of every row is exactly zero. Used to validate that the data-driven
/// loop collapses to model-based policy iteration.
pub struct ExactMoments<'a> {
    model: &'a LqModel,
    basis: Vec<DMatrix<f64>>,
}

impl<'a> ExactMoments<'a> {
    pub fn new(model: &'a LqModel) -> Self {
        let d = model.state_dim() + model.control_dim();
        // rank-1 PSD spanning set of the symmetric matrices, plus the zero
        // matrix: its row pins the intercept coordinate, which the spanning
        // rows alone leave coupled to the Theta block
        let mut basis = Vec::with_capacity(symvec::sym_len(d) + 1);
        basis.push(DMatrix::zeros(d, d));
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            basis.push(&e * e.transpose());
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e[j] = 1.0;
                basis.push(&e * e.transpose());
            }
        }
        Self { model, basis }
    }
}

impl PairSource for ExactMoments<'_> {
    fn next_pairs(&mut self, policy: &QGaussianPolicy) -> Result<PairBatch> {
        let pairs = self
            .basis
            .iter()
            .map(|z| {
                let x_plus = crate::model::moment_push(self.model, z);
                let z_plus = crate::model::moment_lift(&x_plus, policy);
                SamplePair {
                    z: z.clone(),
                    x_plus,
                    z_plus,
                }
            })
            .collect();
        Ok(PairBatch {
            pairs,
            diverged: false,
        })
    }
}

/// Build the regression row of a pair under the evaluated policy. Only
/// cost-side model quantities enter: the stage-cost matrix H = diag(Q, R),
/// the discount, and the policy's entropy offset.
pub fn make_row(pair: &SamplePair, model: &LqModel, policy: &QGaussianPolicy) -> Result<RegressionRow> {
    let g = model.gamma();
    let diff = &pair.z - &pair.z_plus * g;
    let a_sym = vec_s(&diff)?;
    let g_sym = vec_s(&pair.z)?;
    let len = a_sym.len();
    let mut a = DVector::zeros(len + 1);
    a.rows_mut(0, len).copy_from(&a_sym);
    a[len] = 1.0 - g;
    let mut instr = DVector::zeros(len + 1);
    instr.rows_mut(0, len).copy_from(&g_sym);
    instr[len] = 1.0;
    let h = model.stage_cost_matrix();
    let b = (&h * &pair.z).trace() + dp::stage_offset(model, policy)?;
    Ok(RegressionRow { a, b, g: instr })
}

/// Batch instrumental-variable estimate
/// `theta_hat = (sum g_i a_i')^{-1} (sum g_i b_i)`.
///
/// Errors with the deficient rank when the cross matrix is singular (PE
/// violation).
pub fn iv_batch(rows: &[RegressionRow], state_dim: usize, control_dim: usize) -> Result<ThetaMatrix> {
    let need = symvec::sym_len(state_dim + control_dim) + 1;
    if rows.is_empty() {
        return Err(Error::PersistentExcitation { rank: 0, need });
    }
    let dim = rows[0].a.len();
    if dim != need {
        return Err(Error::DimensionMismatch(format!(
            "rows have dimension {dim}, expected {need}"
        )));
    }
    let mut cross = DMatrix::zeros(dim, dim);
    let mut moment = DVector::zeros(dim);
    for row in rows {
        cross += &row.g * row.a.transpose();
        moment += &row.g * row.b;
    }
    let svd = cross.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-10 * max_sv.max(f64::MIN_POSITIVE))
        .count();
    if rank < dim {
        return Err(Error::PersistentExcitation { rank, need });
    }
    let theta = cross.lu().solve(&moment).ok_or(Error::PersistentExcitation {
        rank,
        need,
    })?;
    ThetaMatrix::from_parameter_vector(&theta, state_dim, control_dim)
}

/// One recursive instrumental-variable update:
///
/// ```text
/// L = S g / (1 + a' S g)
/// theta <- theta + L (b - a' theta)
/// S     <- S - L (a' S)
/// ```
pub fn iv_recursive_update(state: &IvEstimatorState, row: &RegressionRow) -> Result<IvEstimatorState> {
    let mut next = state.clone();
    iv_recursive_update_inplace(&mut next, row)?;
    Ok(next)
}

pub(crate) fn iv_recursive_update_inplace(
    state: &mut IvEstimatorState,
    row: &RegressionRow,
) -> Result<()> {
    let sg = &state.s * &row.g;
    let denominator = 1.0 + row.a.dot(&sg);
    if denominator.abs() < 1e-14 {
        return Err(Error::DegenerateUpdate { denominator });
    }
    let l = sg / denominator;
    let innovation = row.b - row.a.dot(&state.theta_hat);
    state.theta_hat += &l * innovation;
    let at_s = row.a.transpose() * &state.s;
    state.s -= &l * at_s;
    Ok(())
}

/// Offline vs online data regime of the approximate policy-iteration loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiMode {
    Offline,
    Online,
}

/// Controls for `approximate_pi`.
#[derive(Debug, Clone)]
pub struct ApproxPiConfig {
    pub iterations: usize,
    /// Carry `(theta_hat, S)` across outer iterations. The loop carries both
    /// by default; resetting S to its initial confidence each iteration is
    /// used by the exact-data oracle, which re-estimates a moving target.
    pub carry_estimator: bool,
    /// Eigenvalue floor applied when projecting the learned exploration
    /// covariance to positive definiteness.
    pub sigma_floor: f64,
    /// Radius of the reporting distribution for the objective diagnostic.
    pub report_scale: f64,
}

impl Default for ApproxPiConfig {
    fn default() -> Self {
        Self {
            iterations: 40,
            carry_estimator: true,
            sigma_floor: 1e-8,
            report_scale: 1.0,
        }
    }
}

/// One record of the data-driven loop. The gain logged at iteration t is the
/// behavior gain derived from the estimate after t-1 data batches.
#[derive(Debug, Clone)]
pub struct ApproxPiRecord {
    pub iteration: usize,
    pub gain: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub gain_error: f64,
    /// Exact entropy-inclusive objective of the held policy, when the model
    /// admits evaluation (diagnostic only; the algorithm never reads it).
    pub objective: Option<f64>,
    pub reused_previous_gain: bool,
}

#[derive(Debug, Clone)]
pub struct ApproxPiHistory {
    pub records: Vec<ApproxPiRecord>,
}

impl ApproxPiHistory {
    pub fn final_gain_error(&self) -> f64 {
        self.records.last().map(|r| r.gain_error).unwrap_or(f64::NAN)
    }
}

fn policy_from_estimate(
    theta_hat: &DVector<f64>,
    model: &LqModel,
    sigma_floor: f64,
) -> Result<QGaussianPolicy> {
    let m = model.state_dim();
    let n = model.control_dim();
    let theta = ThetaMatrix::from_parameter_vector(theta_hat, m, n)?;
    let uu = theta.uu();
    let chol = Cholesky::new(uu).ok_or_else(|| {
        Error::NotPositiveDefinite("estimated Theta_uu failed Cholesky".into())
    })?;
    let k = chol.solve(&theta.ux());
    let sigma = if model.tau() == 0.0 {
        DMatrix::zeros(n, n)
    } else {
        let raw = chol.inverse() * (model.tau() * model.q().alpha(n));
        let sym = (&raw + raw.transpose()) * 0.5;
        let mut eig = sym.symmetric_eigen();
        for v in eig.eigenvalues.iter_mut() {
            *v = v.max(sigma_floor);
        }
        let floored = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues)
            * eig.eigenvectors.transpose();
        (&floored + floored.transpose()) * 0.5
    };
    QGaussianPolicy::new(k, sigma, model.q())
}

/// Approximate policy iteration on Q-functions with recursive
/// instrumental-variable estimation.
///
/// Per outer iteration: derive `(K_t, Sigma_t)` from the current estimate,
/// draw N fresh pairs from the source under that behavior policy, and apply
/// the N recursive updates. `(theta_hat, S)` carry across iterations. If the
/// derived gain destabilizes the rollouts (divergence flag) or Theta_uu is
/// not positive definite, the iteration re-runs with the previous gain and is
/// flagged; estimation continues either way. The model argument supplies
/// cost-side quantities and the exact-solution diagnostics only — all
/// dynamics information reaches the estimator through the source.
pub fn approximate_pi(
    model: &LqModel,
    source: &mut dyn PairSource,
    initial: &IvEstimatorState,
    reference_gain: &DMatrix<f64>,
    cfg: &ApproxPiConfig,
) -> Result<ApproxPiHistory> {
    let expected = symvec::sym_len(model.state_dim() + model.control_dim()) + 1;
    if initial.theta_hat.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "estimator state has dimension {}, expected {expected}",
            initial.theta_hat.len()
        )));
    }
    let k_star_norm = reference_gain.norm().max(f64::MIN_POSITIVE);
    let mut state = initial.clone();
    let initial_s = initial.s.clone();
    let mut previous_policy: Option<QGaussianPolicy> = None;
    let mut history = ApproxPiHistory {
        records: Vec::with_capacity(cfg.iterations),
    };
    for t in 1..=cfg.iterations {
        let mut reused = false;
        let policy = match policy_from_estimate(&state.theta_hat, model, cfg.sigma_floor) {
            Ok(p) => p,
            Err(e) => match &previous_policy {
                Some(prev) => {
                    reused = true;
                    prev.clone()
                }
                None => return Err(e),
            },
        };
        let mut batch = source.next_pairs(&policy)?;
        let mut active = policy;
        if batch.diverged {
            if let Some(prev) = &previous_policy {
                reused = true;
                active = prev.clone();
                batch = source.next_pairs(&active)?;
            }
        }
        if !cfg.carry_estimator {
            state.s = initial_s.clone();
        }
        for pair in &batch.pairs {
            let row = make_row(pair, model, &active)?;
            iv_recursive_update_inplace(&mut state, &row)?;
        }
        let objective = dp::policy_evaluate(model, &active).ok().map(|(value, _)| {
            cfg.report_scale * cfg.report_scale * value.p().trace() + value.c()
        });
        history.records.push(ApproxPiRecord {
            iteration: t,
            gain: active.gain().clone(),
            sigma: active.sigma().clone(),
            gain_error: (active.gain() - reference_gain).norm() / k_star_norm,
            objective,
            reused_previous_gain: reused,
        });
        previous_policy = Some(active);
    }
    Ok(history)
}

/// Initial estimate of Algorithm-style runs: every parameter entry set to
/// `fill` and `S_0 = beta0 I`.
pub fn filled_initial_state(
    state_dim: usize,
    control_dim: usize,
    fill: f64,
    beta0: f64,
) -> Result<IvEstimatorState> {
    let len = symvec::sym_len(state_dim + control_dim) + 1;
    IvEstimatorState::new(DVector::from_element(len, fill), beta0)
}
