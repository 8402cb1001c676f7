//! JSON file formats for models and solver results.
//!
//! Matrices are serialized as nested arrays in row-major order; the model
//! fields carry the same names used throughout: `A`, `B`, `channels` (list
//! of `{C, D}`), `channel_cov`, `Q`, `R`, `gamma`, `tau`, and the
//! deformation parameter `q`. See `docs/config-schema.json` in the
//! repository for the full schema.

use crate::error::{Error, Result};
use crate::model::{LqModel, NoiseChannel, QGaussianPolicy};
use crate::qcalc::DeformationParam;
use crate::solver::{QuadraticValue, SolveInfo};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Row-major nested-array encoding of a matrix.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Serialization("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelFile {
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
}

/// On-disk form of an `LqModel`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqModelFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    pub channels: Vec<ChannelFile>,
    pub channel_cov: Rows,
    #[serde(rename = "Q")]
    pub q_cost: Rows,
    #[serde(rename = "R")]
    pub r_cost: Rows,
    pub gamma: f64,
    pub tau: f64,
    pub q: f64,
}

impl LqModelFile {
    pub fn from_model(model: &LqModel) -> Self {
        Self {
            a: matrix_to_rows(model.a()),
            b: matrix_to_rows(model.b()),
            channels: model
                .channels()
                .iter()
                .map(|ch| ChannelFile {
                    c: matrix_to_rows(ch.c()),
                    d: matrix_to_rows(ch.d()),
                })
                .collect(),
            channel_cov: matrix_to_rows(model.channel_cov()),
            q_cost: matrix_to_rows(model.q_cost()),
            r_cost: matrix_to_rows(model.r_cost()),
            gamma: model.gamma(),
            tau: model.tau(),
            q: model.q().q(),
        }
    }

    pub fn into_model(&self) -> Result<LqModel> {
        let channels = self
            .channels
            .iter()
            .map(|ch| Ok(NoiseChannel::new(rows_to_matrix(&ch.c)?, rows_to_matrix(&ch.d)?)))
            .collect::<Result<Vec<_>>>()?;
        LqModel::new(
            rows_to_matrix(&self.a)?,
            rows_to_matrix(&self.b)?,
            channels,
            rows_to_matrix(&self.channel_cov)?,
            rows_to_matrix(&self.q_cost)?,
            rows_to_matrix(&self.r_cost)?,
            self.gamma,
            self.tau,
            DeformationParam::new(self.q)?,
        )
    }
}

pub fn model_to_json(model: &LqModel) -> String {
    serde_json::to_string_pretty(&LqModelFile::from_model(model)).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<LqModel> {
    let file: LqModelFile =
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    file.into_model()
}

/// On-disk form of an exact solution `(P, c, K*, Sigma*)` with convergence
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    #[serde(rename = "P")]
    pub p: Rows,
    pub c: f64,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "Sigma")]
    pub sigma: Rows,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SolutionFile {
    pub fn from_parts(value: &QuadraticValue, policy: &QGaussianPolicy, info: &SolveInfo) -> Self {
        Self {
            p: matrix_to_rows(value.p()),
            c: value.c(),
            k: matrix_to_rows(policy.gain()),
            sigma: matrix_to_rows(policy.sigma()),
            residual_norm: info.residual_norm,
            iterations: info.iterations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn gain_matrix(&self) -> Result<DMatrix<f64>> {
        rows_to_matrix(&self.k)
    }
}
