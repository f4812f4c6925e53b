//! Rotational alignment algorithms.
//!
//! Every algorithm returns an [`AlignmentResult`] whose rotation `W` maps the
//! source space onto the destination space by right multiplication.

mod finetune;
mod procrustes;
mod wasserstein;

pub use finetune::{
    finetune_loss, finetune_rotation, loss_terms, FinetuneConfig, FinetuneContext, LossParts,
    LossTerm,
};
pub use procrustes::{
    cluster_center_procrustes, identity_alignment, identity_correspondence, oracle_procrustes,
    orthogonal_procrustes, procrustes_matrices,
};
pub use wasserstein::{
    landmark_init, wasserstein_procrustes, OtMode, WassersteinConfig, WassersteinInit,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::rotation::Rotation;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub method: String,
    pub rotation: Rotation,
    /// Effective configuration, echoed for provenance.
    pub config: serde_json::Value,
    /// Fine-tuning loss per accepted step, or Wasserstein transport cost per stage.
    pub loss_trace: Vec<f64>,
    pub underdetermined: bool,
    pub oracle: bool,
}

impl AlignmentResult {
    pub fn new(method: impl Into<String>, rotation: Rotation) -> Self {
        AlignmentResult {
            method: method.into(),
            rotation,
            config: serde_json::Value::Object(Default::default()),
            loss_trace: Vec::new(),
            underdetermined: false,
            oracle: false,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(json::to_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct AlignmentJson {
    method: String,
    dim: usize,
    #[serde(serialize_with = "json::rows_f64")]
    matrix: Vec<Vec<f64>>,
    #[serde(serialize_with = "json::f64")]
    det: f64,
    #[serde(serialize_with = "json::f64")]
    orthogonality_error: f64,
    underdetermined: bool,
    oracle: bool,
    config: serde_json::Value,
    #[serde(serialize_with = "json::vec_f64")]
    loss_trace: Vec<f64>,
}

impl Serialize for AlignmentResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AlignmentJson {
            method: self.method.clone(),
            dim: self.rotation.dim(),
            matrix: json::matrix_rows(self.rotation.matrix()),
            det: self.rotation.det(),
            orthogonality_error: self.rotation.orthogonality_error(),
            underdetermined: self.underdetermined,
            oracle: self.oracle,
            config: self.config.clone(),
            loss_trace: self.loss_trace.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AlignmentResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = AlignmentJson::deserialize(d)?;
        let m =
            json::matrix_from_rows(&j.matrix).ok_or_else(|| D::Error::custom("ragged matrix"))?;
        if m.nrows() != j.dim || m.ncols() != j.dim {
            return Err(D::Error::custom(format!(
                "matrix is {}×{}, header says dim {}",
                m.nrows(),
                m.ncols(),
                j.dim
            )));
        }
        let rotation = Rotation::new(m).map_err(D::Error::custom)?;
        Ok(AlignmentResult {
            method: j.method,
            rotation,
            config: j.config,
            loss_trace: j.loss_trace,
            underdetermined: j.underdetermined,
            oracle: j.oracle,
        })
    }
}

pub(crate) fn check_same_dim(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context,
            left: a,
            right: b,
        });
    }
    Ok(())
}
