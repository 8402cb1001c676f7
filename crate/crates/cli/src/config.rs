//! Experiment configuration files (JSON). The schema is documented in
//! `docs/config-schema.json`; every numeric range is validated before any
//! computation starts.

use serde::{Deserialize, Serialize};
use tsallis_lq::serialize::LqModelFile;
use tsallis_lq::{
    DeformationParam, Error, ExplorationLaw, LqModel, MarketSpec, MvNoiseMode, MvProblem, PeConfig,
    Result,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketConfig {
    pub riskfree: f64,
    pub mean_excess: Vec<f64>,
    pub excess_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvConfig {
    pub market: MarketConfig,
    #[serde(rename = "R")]
    pub r_cost: Vec<Vec<f64>>,
    pub target: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub q: f64,
    #[serde(default = "default_noise_mode")]
    pub noise_mode: NoiseModeConfig,
}

fn default_noise_mode() -> NoiseModeConfig {
    NoiseModeConfig::PerAsset
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModeConfig {
    PerAsset,
    PaperScalar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemConfig {
    Mv(MvConfig),
    Model(LqModelFile),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeSection {
    pub trajectories: usize,
    pub horizon: usize,
    pub r_nu: f64,
    pub r_x: f64,
    #[serde(default = "default_exploration")]
    pub exploration: ExplorationConfig,
}

fn default_exploration() -> ExplorationConfig {
    ExplorationConfig::QGaussianClipped
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationConfig {
    QGaussianClipped,
    UniformBall,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerConfig {
    Tsallis { q: f64 },
    Shannon,
    None,
}

impl RegularizerConfig {
    pub fn label(&self) -> String {
        match self {
            RegularizerConfig::Tsallis { .. } => "tsallis".into(),
            RegularizerConfig::Shannon => "shannon".into(),
            RegularizerConfig::None => "none".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Q,
    Gamma,
    Tau,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvSimSection {
    pub x0: f64,
    pub horizon: usize,
    pub paths: usize,
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub pe: PeSection,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: ModeConfig,
    pub regularizer: RegularizerConfig,
    /// When present, multi-curve runs (one curve per regularizer).
    #[serde(default)]
    pub regularizers: Option<Vec<RegularizerConfig>>,
    pub beta0: f64,
    pub theta0_fill: f64,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub mv_sim: Option<MvSimSection>,
}

fn default_mode() -> ModeConfig {
    ModeConfig::Offline
}

fn matrix(rows: &[Vec<f64>]) -> Result<nalgebra::DMatrix<f64>> {
    tsallis_lq::serialize::rows_to_matrix(&rows.to_vec())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Range checks performed before any computation.
    pub fn validate(&self) -> Result<()> {
        let check_q = |q: f64| -> Result<()> {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "q must lie in (0, 1], got {q}"
                )));
            }
            Ok(())
        };
        let check_gamma = |g: f64| -> Result<()> {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "gamma must lie in (0, 1), got {g}"
                )));
            }
            Ok(())
        };
        let check_tau = |t: f64| -> Result<()> {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!("tau must be >= 0, got {t}")));
            }
            Ok(())
        };
        match &self.problem {
            ProblemConfig::Mv(mv) => {
                check_q(mv.q)?;
                check_gamma(mv.gamma)?;
                check_tau(mv.tau)?;
            }
            ProblemConfig::Model(file) => {
                check_q(file.q)?;
                check_gamma(file.gamma)?;
                check_tau(file.tau)?;
            }
        }
        if let RegularizerConfig::Tsallis { q } = self.regularizer {
            check_q(q)?;
        }
        if let Some(list) = &self.regularizers {
            for reg in list {
                if let RegularizerConfig::Tsallis { q } = reg {
                    check_q(*q)?;
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::InvalidParameter("sweep values must be non-empty".into()));
            }
            for &v in &sweep.values {
                match sweep.parameter {
                    SweepParameter::Q => check_q(v)?,
                    SweepParameter::Gamma => check_gamma(v)?,
                    SweepParameter::Tau => check_tau(v)?,
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.beta0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta0 must be > 0, got {}",
                self.beta0
            )));
        }
        self.pe_config().validate()?;
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
            }
        }
        Ok(())
    }

    pub fn pe_config(&self) -> PeConfig {
        PeConfig {
            trajectories: self.pe.trajectories,
            horizon: self.pe.horizon,
            r_nu: self.pe.r_nu,
            r_x: self.pe.r_x,
            exploration: match self.pe.exploration {
                ExplorationConfig::QGaussianClipped => ExplorationLaw::QGaussianClipped,
                ExplorationConfig::UniformBall => ExplorationLaw::UniformBall,
            },
        }
    }

    /// The base model before any regularizer override.
    pub fn base_model(&self) -> Result<LqModel> {
        match &self.problem {
            ProblemConfig::Mv(_) => self.mv_problem()?.expect("mv config").to_lq(),
            ProblemConfig::Model(file) => file.into_model(),
        }
    }

    /// The MV problem when the config carries one.
    pub fn mv_problem(&self) -> Result<Option<MvProblem>> {
        match &self.problem {
            ProblemConfig::Mv(mv) => {
                let market = MarketSpec::new(
                    mv.market.riskfree,
                    nalgebra::DVector::from_vec(mv.market.mean_excess.clone()),
                    matrix(&mv.market.excess_cov)?,
                )?;
                Ok(Some(MvProblem {
                    market,
                    r_cost: matrix(&mv.r_cost)?,
                    target: mv.target,
                    lambda: mv.lambda,
                    gamma: mv.gamma,
                    tau: mv.tau,
                    q: DeformationParam::new(mv.q)?,
                    noise_mode: match mv.noise_mode {
                        NoiseModeConfig::PerAsset => MvNoiseMode::PerAsset,
                        NoiseModeConfig::PaperScalar => MvNoiseMode::PaperScalar,
                    },
                }))
            }
            ProblemConfig::Model(_) => Ok(None),
        }
    }

    /// Regularizer list for multi-curve runs; falls back to the single
    /// configured regularizer.
    pub fn regularizer_list(&self) -> Vec<RegularizerConfig> {
        self.regularizers
            .clone()
            .unwrap_or_else(|| vec![self.regularizer])
    }
}
