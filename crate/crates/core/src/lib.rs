//! Tsallis-entropy-regularized linear-quadratic control with multiplicative
//! noise.
//!
//! The crate provides three routes to the optimal feedback policy of the
//! discounted LQ problem whose stage cost carries a deformed-entropy bonus:
//!
//! - [`solver`]: the exact solution `(P, c, K*, Sigma*)` by damped fixed-point
//!   iteration on the regularized Riccati equation, with the optimal policy a
//!   q-Gaussian `N_q(-K* x, Sigma*)`;
//! - [`dp`]: model-based policy iteration on quadratic Q-functions with the
//!   Theta parametrization and Tsallis policy improvement;
//! - [`lstd`]: fully data-driven policy iteration that estimates Theta from
//!   sampled moment pairs by instrumental-variable least squares, batch or
//!   recursive, in offline and online data regimes.
//!
//! [`qcalc`] holds the Tsallis statistics primitives (deformed exp/log,
//! q-Gaussian density/normalizer/entropy, exact sampling), [`model`] the
//! noisy dynamics and exact moment operators, and [`mv`] the mean-variance
//! portfolio environment that embeds into the scalar-state LQ problem.
//!
//! All randomness flows through caller-provided seeds; runs are reproducible
//! bit-for-bit for a fixed seed.

pub mod dp;
pub mod error;
pub mod lstd;
pub mod model;
pub mod mv;
pub mod qcalc;
pub mod serialize;
pub mod solver;
pub mod symvec;

pub use dp::{
    model_based_pi, policy_evaluate, policy_improve, q_value, stage_offset, theta_from_value,
    PiHistory, ThetaMatrix,
};
pub use error::{Error, Result};
pub use lstd::{
    approximate_pi, generate_rollouts, iv_batch, iv_recursive_update, make_row, ApproxPiConfig,
    ApproxPiHistory, ApproxPiRecord, ExplorationLaw, IvEstimatorState, PairSource, PeConfig,
    PiMode, RegressionRow, SamplePair, SimulatedRollouts,
};
pub use model::{is_ms_stabilizing, moment_lift, moment_push, LqModel, NoiseChannel, QGaussianPolicy};
pub use mv::{simulate_wealth, MarketSpec, MvNoiseMode, MvProblem, WealthStats};
pub use qcalc::{
    entropy_offset_constant, q_entropy_closed_form, q_exp, q_gaussian_density, q_log,
    q_log_product, sample_q_gaussian, z_q, DeformationParam, QGaussianSpec,
};
pub use solver::{
    optimal_covariance, optimal_gain, riccati_residual, solve, QuadraticValue, SolveInfo,
    SolverConfig,
};
pub use symvec::{sym_len, unvec_s, vec_s};
