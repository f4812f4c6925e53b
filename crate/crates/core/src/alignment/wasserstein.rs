//! Unsupervised alignment: alternate an optimal matching between random
//! batches with a projected gradient step on the matched squared distance,
//! growing the batch each stage.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::procrustes::{cluster_center_procrustes, identity_correspondence, procrustes_matrices};
use super::{check_same_dim, AlignmentResult};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::rng::RngSeed;
use crate::rotation::{polar, Rotation};
use crate::transport::{
    configured_threads, exact_assignment, sinkhorn, squared_euclidean, CostMatrix, SinkhornConfig,
};

/// Largest batch matched exactly under [`OtMode::Auto`].
pub const AUTO_EXACT_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtMode {
    /// Exact up to 512 rows, Sinkhorn with row-argmax rounding above.
    #[default]
    Auto,
    Exact,
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WassersteinInit {
    Identity,
    /// Class-centroid Procrustes; needs labels on both sides.
    ClusterCenters,
    /// Label-free: k-means landmarks on each side matched by their
    /// rotation-invariant distance profiles.
    #[default]
    Landmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WassersteinConfig {
    pub initial_batch: usize,
    pub batch_growth_factor: f64,
    pub epochs_per_stage: usize,
    pub stages: usize,
    pub learning_rate: f64,
    pub seed: RngSeed,
    pub ot_mode: OtMode,
    pub init: WassersteinInit,
    /// k-means clusters per side for the landmark start.
    pub landmarks: usize,
    /// Landmark starts tried; the one with the lowest transport cost is kept.
    pub init_restarts: usize,
    /// Rows per side in the stage-end transport-cost evaluation.
    pub eval_rows: usize,
    pub sinkhorn: SinkhornConfigSer,
}

/// Serializable mirror of [`SinkhornConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfigSer {
    pub reg: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl From<SinkhornConfigSer> for SinkhornConfig {
    fn from(s: SinkhornConfigSer) -> Self {
        SinkhornConfig {
            reg: s.reg,
            max_iters: s.max_iters,
            tol: s.tol,
        }
    }
}

impl Default for SinkhornConfigSer {
    fn default() -> Self {
        let d = SinkhornConfig::default();
        SinkhornConfigSer {
            reg: d.reg,
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

impl Default for WassersteinConfig {
    fn default() -> Self {
        WassersteinConfig {
            initial_batch: 128,
            batch_growth_factor: 2.0,
            epochs_per_stage: 50,
            stages: 5,
            learning_rate: 5e-3,
            seed: RngSeed(0),
            ot_mode: OtMode::Auto,
            init: WassersteinInit::Landmark,
            landmarks: 10,
            init_restarts: 8,
            eval_rows: 512,
            sinkhorn: SinkhornConfigSer::default(),
        }
    }
}

impl WassersteinConfig {
    /// Batch size used in stage `s` (0-based).
    pub fn batch_at(&self, s: usize) -> usize {
        (self.initial_batch as f64 * self.batch_growth_factor.powi(s as i32) + 1e-9).floor()
            as usize
    }

    pub fn validate(&self, n_min: usize) -> Result<()> {
        if self.initial_batch == 0 || self.stages == 0 || self.epochs_per_stage == 0 {
            return Err(Error::InvalidConfig(
                "initial_batch, stages and epochs_per_stage must be positive".into(),
            ));
        }
        if !(self.batch_growth_factor > 1.0 && self.batch_growth_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "batch_growth_factor must exceed 1, got {}",
                self.batch_growth_factor
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let last = self.batch_at(self.stages - 1);
        if last > n_min {
            return Err(Error::InvalidConfig(format!(
                "final batch {} × {}^{} = {last} exceeds the smaller input set ({n_min} records)",
                self.initial_batch,
                self.batch_growth_factor,
                self.stages - 1
            )));
        }
        if self.ot_mode == OtMode::Exact && last > crate::transport::MAX_ASSIGNMENT {
            return Err(Error::InvalidConfig(format!(
                "exact matching is limited to {} rows, final batch is {last}",
                crate::transport::MAX_ASSIGNMENT
            )));
        }
        if self.init == WassersteinInit::Landmark && self.landmarks < 2 {
            return Err(Error::InvalidConfig(
                "landmark start needs at least 2 clusters".into(),
            ));
        }
        if self.init_restarts == 0 {
            return Err(Error::InvalidConfig(
                "init_restarts must be positive".into(),
            ));
        }
        if self.eval_rows == 0 {
            return Err(Error::InvalidConfig("eval_rows must be positive".into()));
        }
        Ok(())
    }
}

fn sample_rows(n: usize, k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}

/// Column matched to each row of `c`.
fn match_batch(c: &CostMatrix, mode: OtMode, sk: &SinkhornConfig) -> Result<Vec<usize>> {
    let exact = match mode {
        OtMode::Exact => true,
        OtMode::Sinkhorn => false,
        OtMode::Auto => c.rows() <= AUTO_EXACT_LIMIT && c.rows() == c.cols(),
    };
    if exact {
        exact_assignment(c)
    } else {
        Ok(sinkhorn(c, sk)?.row_argmax())
    }
}

/// Mean matched squared distance between fixed subsamples of `xw` and `y`.
struct CostProbe {
    xi: Vec<usize>,
    yi: Vec<usize>,
}

impl CostProbe {
    fn new(nx: usize, ny: usize, rows: usize, seed: RngSeed) -> Self {
        let m = rows.min(nx).min(ny);
        let mut rng = seed.rng();
        let mut xi = sample_rows(nx, m, &mut rng);
        let mut yi = sample_rows(ny, m, &mut rng);
        xi.sort_unstable();
        yi.sort_unstable();
        CostProbe { xi, yi }
    }

    fn cost(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        w: &DMatrix<f64>,
        threads: usize,
    ) -> Result<f64> {
        let xs = x.select_rows(&self.xi) * w;
        let ys = y.select_rows(&self.yi);
        let c = squared_euclidean(&xs, &ys, threads)?;
        let perm = exact_assignment(&c)?;
        Ok(c.assignment_cost(&perm) / perm.len() as f64)
    }
}

/// Label-free starting rotation for `x·W ≈ y`.
///
/// Each side is summarised by `k` k-means centroids. Centroids are matched
/// across sides by their norms and sorted inter-centroid distances, which a
/// rotation leaves unchanged, and the matching is refined by alternating
/// Procrustes and re-matching. Points are then matched by their distances to
/// the matched centroids, and Procrustes on those point pairs gives a second
/// candidate. The candidate with the lower sampled transport cost wins.
pub fn landmark_init(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    k: usize,
    seed: RngSeed,
) -> Result<Rotation> {
    let threads = configured_threads();
    let km_cfg = KMeansConfig {
        k,
        max_iters: 300,
        restarts: 8,
    };
    let cx = kmeans(x, km_cfg, seed.derive("landmarks-source"))?.centroids;
    let cy = kmeans(y, km_cfg, seed.derive("landmarks-destination"))?.centroids;

    let descriptor = |c: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let d = squared_euclidean(c, c, 1)?;
        let mut out = DMatrix::zeros(k, k);
        for i in 0..k {
            let mut row: Vec<f64> = (0..k)
                .filter(|&j| j != i)
                .map(|j| d.get(i, j).sqrt())
                .collect();
            row.sort_by(f64::total_cmp);
            out[(i, 0)] = c.row(i).norm();
            for (j, v) in row.into_iter().enumerate() {
                out[(i, j + 1)] = v;
            }
        }
        Ok(out)
    };
    let mut pi = exact_assignment(&squared_euclidean(&descriptor(&cx)?, &descriptor(&cy)?, 1)?)?;
    for _ in 0..10 {
        let w = procrustes_matrices(&cx, &cy.select_rows(&pi), false)?;
        let next = exact_assignment(&squared_euclidean(&(&cx * w.matrix()), &cy, 1)?)?;
        if next == pi {
            break;
        }
        pi = next;
    }
    let cy = cy.select_rows(&pi);
    let w_centroids = procrustes_matrices(&cx, &cy, false)?;

    let signature = |p: &DMatrix<f64>, c: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let d = squared_euclidean(p, c, threads)?;
        Ok(DMatrix::from_fn(p.nrows(), k + 1, |i, j| {
            if j < k {
                d.get(i, j).sqrt()
            } else {
                p.row(i).norm()
            }
        }))
    };
    let mut rng = seed.derive("landmark-points").rng();
    let xi = sample_rows(x.nrows(), x.nrows().min(2048), &mut rng);
    let yi = sample_rows(y.nrows(), y.nrows().min(2048), &mut rng);
    let xs = x.select_rows(&xi);
    let ys = y.select_rows(&yi);
    let sig = squared_euclidean(&signature(&xs, &cx)?, &signature(&ys, &cy)?, threads)?;
    let nn: Vec<usize> = (0..xs.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..ys.nrows() {
                if sig.get(i, j) < sig.get(i, best) {
                    best = j;
                }
            }
            best
        })
        .collect();
    let w_points = procrustes_matrices(&xs, &ys.select_rows(&nn), false)?;

    let probe = CostProbe::new(x.nrows(), y.nrows(), 512, seed.derive("landmark-probe"));
    let cp = probe.cost(x, y, w_points.matrix(), threads)?;
    let cc = probe.cost(x, y, w_centroids.matrix(), threads)?;
    log::debug!("landmark start: point-matched cost {cp:.4}, centroid cost {cc:.4}");
    Ok(if cp <= cc { w_points } else { w_centroids })
}

/// Rotation `W` with `x·W` distributed like `y`. No pairing, labels or equal
/// sizes are assumed. The loss trace holds the transport cost after each stage.
pub fn wasserstein_procrustes(
    x: &EmbeddingSet,
    y: &EmbeddingSet,
    cfg: &WassersteinConfig,
) -> Result<AlignmentResult> {
    check_same_dim("wasserstein_procrustes", x.dim(), y.dim())?;
    cfg.validate(x.len().min(y.len()))?;
    let threads = configured_threads();
    let sk: SinkhornConfig = cfg.sinkhorn.into();
    let (xm, ym) = (x.vectors(), y.vectors());

    let probe = CostProbe::new(x.len(), y.len(), cfg.eval_rows, cfg.seed.derive("eval"));
    let mut w = match cfg.init {
        WassersteinInit::Identity => Rotation::identity(x.dim())?,
        WassersteinInit::ClusterCenters => {
            let corr: BTreeMap<u32, u32> = identity_correspondence(x);
            cluster_center_procrustes(x, y, &corr, false)?.rotation
        }
        WassersteinInit::Landmark => {
            let mut best: Option<(f64, Rotation)> = None;
            for r in 0..cfg.init_restarts {
                let cand =
                    landmark_init(xm, ym, cfg.landmarks, cfg.seed.derive(&format!("init-{r}")))?;
                let cost = probe.cost(xm, ym, cand.matrix(), threads)?;
                log::debug!("landmark start {r}: transport cost {cost:.6}");
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, cand));
                }
            }
            best.expect("init_restarts > 0").1
        }
    }
    .into_matrix();
    let init_cost = probe.cost(xm, ym, &w, threads)?;

    // the squared-distance gradient grows with the squared embedding norm;
    // dividing it out makes the learning rate scale-free
    let scale = (xm.norm_squared() / x.len() as f64 + ym.norm_squared() / y.len() as f64) / 2.0;
    if !(scale > 0.0) {
        return Err(Error::InvalidInput(
            "both embedding sets are all zeros".into(),
        ));
    }
    let mut rng = cfg.seed.derive("batches").rng();
    let mut trace = Vec::with_capacity(cfg.stages);
    for stage in 0..cfg.stages {
        let b = cfg.batch_at(stage);
        for _ in 0..cfg.epochs_per_stage {
            let xi = sample_rows(x.len(), b, &mut rng);
            let yi = sample_rows(y.len(), b, &mut rng);
            let xb = xm.select_rows(&xi);
            let yb = ym.select_rows(&yi);
            let xw = &xb * &w;
            let c = squared_euclidean(&xw, &yb, threads)?;
            let pi = match_batch(&c, cfg.ot_mode, &sk)
                .map_err(|e| e.in_stage(format!("stage {stage} matching")))?;
            let g = xb.transpose() * (xw - yb.select_rows(&pi)) * (2.0 / (b as f64 * scale));
            w = polar(&(&w - g * cfg.learning_rate))?;
        }
        let cost = probe.cost(xm, ym, &w, threads)?;
        log::debug!("wasserstein stage {stage}: batch {b}, transport cost {cost:.6}");
        trace.push(cost);
    }

    let mut r = AlignmentResult::new("wasserstein", Rotation::from_matrix_or_project(w)?);
    r.loss_trace = trace;
    r.config = serde_json::to_value(cfg)?;
    r.config["threads"] = json!(threads);
    r.config["init_cost"] = json!(init_cost);
    Ok(r)
}
