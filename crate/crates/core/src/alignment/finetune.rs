//! Projected gradient descent on
//! L(W) = |log det W| + ‖U − WᵀWU‖²_F − symmetric GMM score.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_same_dim, AlignmentResult};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, symmetric_score_grad, GmmModel, SymmetricMode, DEFAULT_EM_ITERS};
use crate::rng::RngSeed;
use crate::rotation::{polar, Rotation};

const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub gmm_components: usize,
    pub seed: RngSeed,
    /// Columns of U: source records sampled once per run.
    pub batch: usize,
    pub symmetric_mode: SymmetricMode,
    pub em_iters: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            iterations: 100,
            learning_rate: 1e-3,
            gmm_components: 10,
            seed: RngSeed(0),
            batch: 256,
            symmetric_mode: SymmetricMode::Max,
            em_iters: DEFAULT_EM_ITERS,
        }
    }
}

/// Everything the loss needs besides W.
#[derive(Debug, Clone)]
pub struct FinetuneContext<'a> {
    pub source: &'a EmbeddingSet,
    pub destination: &'a EmbeddingSet,
    pub gmm_source: GmmModel,
    pub gmm_destination: GmmModel,
    /// D×b, one embedding per column.
    pub u: DMatrix<f64>,
    pub mode: SymmetricMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub det: f64,
    pub orthogonality: f64,
    pub score: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.det + self.orthogonality - self.score
    }
}

impl<'a> FinetuneContext<'a> {
    /// Fits both GMMs and draws U.
    pub fn build(
        source: &'a EmbeddingSet,
        destination: &'a EmbeddingSet,
        cfg: &FinetuneConfig,
    ) -> Result<Self> {
        check_same_dim("finetune_rotation", source.dim(), destination.dim())?;
        let k = cfg.gmm_components;
        if k == 0 {
            return Err(Error::InvalidConfig(
                "fine-tuning needs at least one GMM component".into(),
            ));
        }
        let smallest = source.len().min(destination.len());
        if k > smallest / 10 {
            return Err(Error::InvalidConfig(format!(
                "{k} GMM components need at least {} records per set, smallest set has {smallest}",
                10 * k
            )));
        }
        if cfg.batch == 0 {
            return Err(Error::InvalidConfig(
                "fine-tuning batch must be positive".into(),
            ));
        }
        let gmm_source = fit_gmm(source, k, cfg.seed.derive("gmm-source"), cfg.em_iters)
            .map_err(|e| e.in_stage("fit source GMM"))?;
        let gmm_destination = fit_gmm(
            destination,
            k,
            cfg.seed.derive("gmm-destination"),
            cfg.em_iters,
        )
        .map_err(|e| e.in_stage("fit destination GMM"))?;
        let b = cfg.batch.min(source.len());
        let mut rng = cfg.seed.derive("batch").rng();
        let mut idx = rand::seq::index::sample(&mut rng, source.len(), b).into_vec();
        idx.sort_unstable();
        let u = source.vectors().select_rows(&idx).transpose();
        Ok(FinetuneContext {
            source,
            destination,
            gmm_source,
            gmm_destination,
            u,
            mode: cfg.symmetric_mode,
        })
    }
}

/// One loss term and its gradient with respect to W.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// |log det W|, ‖U − WᵀWU‖²_F and the symmetric score, each with its gradient.
pub fn loss_terms(w: &DMatrix<f64>, ctx: &FinetuneContext) -> Result<[LossTerm; 3]> {
    let det = w.determinant();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let log_det = det.ln();
    let inv = w
        .clone()
        .try_inverse()
        .ok_or(Error::NonPositiveDeterminant { det })?;
    // subgradient 0 at the kink
    let sign = if log_det == 0.0 {
        0.0
    } else {
        log_det.signum()
    };
    let det_term = LossTerm {
        value: log_det.abs(),
        grad: inv.transpose() * sign,
    };

    let r = &ctx.u - w.transpose() * w * &ctx.u;
    let gm = &r * ctx.u.transpose();
    let orth_term = LossTerm {
        value: r.norm_squared(),
        grad: (w * gm.transpose() + w * &gm) * -2.0,
    };

    let (score, g_score) = symmetric_score_grad(
        ctx.source,
        w,
        ctx.destination,
        &ctx.gmm_source,
        &ctx.gmm_destination,
        ctx.mode,
    )?;
    Ok([
        det_term,
        orth_term,
        LossTerm {
            value: score,
            grad: g_score,
        },
    ])
}

/// Loss, gradient and the three terms at `w`.
pub fn finetune_loss(
    w: &DMatrix<f64>,
    ctx: &FinetuneContext,
) -> Result<(f64, DMatrix<f64>, LossParts)> {
    let [det, orth, score] = loss_terms(w, ctx)?;
    let parts = LossParts {
        det: det.value,
        orthogonality: orth.value,
        score: score.value,
    };
    Ok((parts.total(), det.grad + orth.grad - score.grad, parts))
}

/// Starts from `w0` (mapping `source` onto `destination`) and descends the
/// fine-tuning loss. Every iterate is projected back onto the orthogonal
/// group; a step that does not lower the loss is halved up to 10 times,
/// after which the run stops.
pub fn finetune_rotation(
    w0: &Rotation,
    source: &EmbeddingSet,
    destination: &EmbeddingSet,
    cfg: &FinetuneConfig,
) -> Result<AlignmentResult> {
    check_same_dim("finetune_rotation", w0.dim(), source.dim())?;
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || cfg.iterations == 0 {
        return Err(Error::InvalidConfig(
            "fine-tuning needs a positive learning rate and iteration count".into(),
        ));
    }
    let ctx = FinetuneContext::build(source, destination, cfg)?;
    let mut w = w0.matrix().clone();
    let (mut loss, mut grad, mut parts) = finetune_loss(&w, &ctx)?;
    let mut trace = vec![loss];
    let mut step = cfg.learning_rate;
    for _ in 0..cfg.iterations {
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = polar(&(&w - &grad * step))?;
            if cand.determinant() > 0.0 {
                let (l, g, p) = finetune_loss(&cand, &ctx)?;
                if l <= loss {
                    accepted = Some((cand, l, g, p));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, l, g, p)) => {
                w = cand;
                loss = l;
                grad = g;
                parts = p;
                trace.push(loss);
            }
            None => break,
        }
    }
    log::debug!(
        "fine-tune: {} steps, loss {loss:.6} (det {:.3e}, orth {:.3e}, score {:.6})",
        trace.len() - 1,
        parts.det,
        parts.orthogonality,
        parts.score
    );
    let mut r = AlignmentResult::new(
        "procrustes-cluster+finetune",
        Rotation::from_matrix_or_project(w)?,
    );
    r.loss_trace = trace;
    r.config = json!({
        "iterations": cfg.iterations,
        "learning_rate": cfg.learning_rate,
        "gmm_components": cfg.gmm_components,
        "seed": cfg.seed,
        "batch": cfg.batch,
        "symmetric_mode": cfg.symmetric_mode,
        "em_iters": cfg.em_iters,
    });
    Ok(r)
}
