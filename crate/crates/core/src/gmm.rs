//! Diagonal-covariance Gaussian mixtures and the likelihood scores used as an
//! alignment loss.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::json;
use crate::kmeans::{kmeans, KMeansConfig};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub prior: f64,
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

impl Component {
    fn log_norm(&self) -> f64 {
        let d = self.mean.len() as f64;
        -0.5 * (d * (2.0 * PI).ln() + self.var.iter().map(|v| v.ln()).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    components: Vec<Component>,
    /// EM log-likelihood (mean per record) after each E-step.
    pub training_trace: Vec<f64>,
    /// Components re-seeded during EM, in order. The trace is monotone only
    /// between re-seeds.
    pub reseeds: Vec<usize>,
}

impl GmmModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let d = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::InvalidInput("GMM needs at least one component".into()))?;
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.var.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "GMM component {i} has the wrong dimension"
                )));
            }
            if !(c.prior > 0.0 && c.prior <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "GMM component {i} has prior {}",
                    c.prior
                )));
            }
            if c.var.iter().any(|&v| !(v > 0.0 && v.is_finite()))
                || c.mean.iter().any(|m| !m.is_finite())
            {
                return Err(Error::InvalidInput(format!(
                    "GMM component {i} has invalid parameters"
                )));
            }
            total += c.prior;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "GMM priors sum to {total}, not 1"
            )));
        }
        Ok(GmmModel {
            components,
            training_trace: Vec::new(),
            reseeds: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    #[serde(serialize_with = "json::f64")]
    prior: f64,
    #[serde(serialize_with = "json::vec_f64")]
    mean: Vec<f64>,
    #[serde(serialize_with = "json::vec_f64")]
    var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GmmJson {
    dim: usize,
    #[serde(rename = "K")]
    k: usize,
    components: Vec<ComponentJson>,
}

impl Serialize for GmmModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GmmJson {
            dim: self.dim(),
            k: self.k(),
            components: self
                .components
                .iter()
                .map(|c| ComponentJson {
                    prior: c.prior,
                    mean: c.mean.iter().copied().collect(),
                    var: c.var.iter().copied().collect(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GmmModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = GmmJson::deserialize(d)?;
        let comps: Vec<Component> = j
            .components
            .into_iter()
            .map(|c| Component {
                prior: c.prior,
                mean: DVector::from_vec(c.mean),
                var: DVector::from_vec(c.var),
            })
            .collect();
        if comps.len() != j.k || comps.iter().any(|c| c.mean.len() != j.dim) {
            return Err(serde::de::Error::custom(
                "GMM header disagrees with its components",
            ));
        }
        GmmModel::new(comps).map_err(serde::de::Error::custom)
    }
}

/// log N(z; μ, diag σ²) for an already-mapped point `z`.
fn log_gaussian_mapped(z: &[f64], c: &Component) -> f64 {
    let mut q = 0.0;
    for ((&zj, &m), &v) in z.iter().zip(c.mean.iter()).zip(c.var.iter()) {
        let d = zj - m;
        q += d * d / v;
    }
    c.log_norm() - 0.5 * q
}

fn map_row(e: &[f64], w: &DMatrix<f64>) -> Result<Vec<f64>> {
    if e.len() != w.nrows() {
        return Err(Error::DimensionMismatch {
            context: "embedding vs rotation",
            left: e.len(),
            right: w.nrows(),
        });
    }
    Ok((0..w.ncols())
        .map(|j| (0..e.len()).map(|i| e[i] * w[(i, j)]).sum())
        .collect())
}

/// −½·(D·log 2π + log|Σ| + (eW − μ)ᵀΣ⁻¹(eW − μ)), without the prior.
pub fn log_gaussian(e: &[f64], w: &DMatrix<f64>, c: &Component) -> Result<f64> {
    let z = map_row(e, w)?;
    if z.len() != c.mean.len() {
        return Err(Error::DimensionMismatch {
            context: "mapped embedding vs GMM component",
            left: z.len(),
            right: c.mean.len(),
        });
    }
    Ok(log_gaussian_mapped(&z, c))
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-component log p_i + log N for a mapped point.
fn weighted_logs(z: &[f64], gmm: &GmmModel) -> Vec<f64> {
    gmm.components
        .iter()
        .map(|c| c.prior.ln() + log_gaussian_mapped(z, c))
        .collect()
}

/// log Σᵢ pᵢ·N(eW; μᵢ, Σᵢ).
pub fn gmm_loglik(e: &[f64], w: &DMatrix<f64>, gmm: &GmmModel) -> Result<f64> {
    let z = map_row(e, w)?;
    if z.len() != gmm.dim() {
        return Err(Error::DimensionMismatch {
            context: "mapped embedding vs GMM",
            left: z.len(),
            right: gmm.dim(),
        });
    }
    Ok(log_sum_exp(&weighted_logs(&z, gmm)))
}

fn check_dims(e: &EmbeddingSet, w: &DMatrix<f64>, gmm: &GmmModel) -> Result<()> {
    if e.dim() != w.nrows() {
        return Err(Error::DimensionMismatch {
            context: "embedding set vs rotation",
            left: e.dim(),
            right: w.nrows(),
        });
    }
    if w.ncols() != gmm.dim() {
        return Err(Error::DimensionMismatch {
            context: "rotation vs GMM",
            left: w.ncols(),
            right: gmm.dim(),
        });
    }
    Ok(())
}

/// Mean of [`gmm_loglik`] over the set.
pub fn score_set(e: &EmbeddingSet, w: &DMatrix<f64>, gmm: &GmmModel) -> Result<f64> {
    Ok(score_set_grad_inner(e.vectors(), w, gmm, false)?.0)
}

/// Score and its gradient with respect to `w`.
pub fn score_set_grad(
    e: &EmbeddingSet,
    w: &DMatrix<f64>,
    gmm: &GmmModel,
) -> Result<(f64, DMatrix<f64>)> {
    check_dims(e, w, gmm)?;
    let (s, g) = score_set_grad_inner(e.vectors(), w, gmm, true)?;
    Ok((s, g.expect("gradient requested")))
}

fn score_set_grad_inner(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    gmm: &GmmModel,
    want_grad: bool,
) -> Result<(f64, Option<DMatrix<f64>>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot score an empty set".into()));
    }
    if x.ncols() != w.nrows() || w.ncols() != gmm.dim() {
        return Err(Error::DimensionMismatch {
            context: "score_set: embedding vs rotation vs GMM",
            left: x.ncols(),
            right: gmm.dim(),
        });
    }
    let z = x * w;
    let d = z.ncols();
    let mut dz = if want_grad {
        Some(DMatrix::zeros(n, d))
    } else {
        None
    };
    let mut total = 0.0;
    let mut row = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            row[j] = z[(i, j)];
        }
        let a = weighted_logs(&row, gmm);
        let ll = log_sum_exp(&a);
        total += ll;
        if let Some(dz) = dz.as_mut() {
            for (k, c) in gmm.components.iter().enumerate() {
                let gamma = (a[k] - ll).exp();
                if gamma == 0.0 {
                    continue;
                }
                for j in 0..d {
                    dz[(i, j)] -= gamma * (row[j] - c.mean[j]) / c.var[j];
                }
            }
        }
    }
    let grad = dz.map(|dz| x.transpose() * dz / n as f64);
    Ok((total / n as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetricMode {
    /// Better of the two directions.
    #[default]
    Max,
    /// Worse of the two directions.
    Min,
}

/// Combination of `score_set(E_t, W, gmm_a)` and `score_set(E_a, Wᵀ, gmm_t)`.
pub fn symmetric_score(
    e_t: &EmbeddingSet,
    w: &DMatrix<f64>,
    e_a: &EmbeddingSet,
    gmm_t: &GmmModel,
    gmm_a: &GmmModel,
    mode: SymmetricMode,
) -> Result<f64> {
    let s1 = score_set(e_t, w, gmm_a)?;
    let s2 = score_set(e_a, &w.transpose(), gmm_t)?;
    Ok(match mode {
        SymmetricMode::Max => s1.max(s2),
        SymmetricMode::Min => s1.min(s2),
    })
}

/// [`symmetric_score`] and the gradient of the selected direction.
pub fn symmetric_score_grad(
    e_t: &EmbeddingSet,
    w: &DMatrix<f64>,
    e_a: &EmbeddingSet,
    gmm_t: &GmmModel,
    gmm_a: &GmmModel,
    mode: SymmetricMode,
) -> Result<(f64, DMatrix<f64>)> {
    let (s1, g1) = score_set_grad(e_t, w, gmm_a)?;
    let (s2, g2) = score_set_grad(e_a, &w.transpose(), gmm_t)?;
    let first = match mode {
        SymmetricMode::Max => s1 >= s2,
        SymmetricMode::Min => s1 <= s2,
    };
    Ok(if first {
        (s1, g1)
    } else {
        (s2, g2.transpose())
    })
}

pub const DEFAULT_EM_ITERS: usize = 200;
const EMPTY_MASS: f64 = 1e-9;
const MAX_COLLAPSES: usize = 3;

/// Default component count: one per class when labels exist, else 8.
pub fn default_components(e: &EmbeddingSet) -> usize {
    match (e.is_labelled(), e.num_classes()) {
        (true, Some(k)) if k > 0 => k as usize,
        _ => 8,
    }
}

/// 1e−6 × mean per-dimension variance of `x`.
pub fn variance_floor(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mean_var = x
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / x.ncols() as f64;
    if mean_var > 0.0 {
        1e-6 * mean_var
    } else {
        1e-12
    }
}

/// EM from a k-means++ start.
pub fn fit_gmm(e: &EmbeddingSet, k: usize, seed: RngSeed, max_iters: usize) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("GMM needs K ≥ 1".into()));
    }
    if e.len() < 10 * k {
        return Err(Error::InsufficientData(format!(
            "fitting {k} components needs at least {} records, got {}",
            10 * k,
            e.len()
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig(
            "GMM max_iters must be positive".into(),
        ));
    }
    let x = e.vectors();
    let (n, d) = x.shape();
    let floor = variance_floor(x);
    let global_var: DVector<f64> = DVector::from_iterator(
        d,
        x.column_iter().map(|c| {
            let m = c.mean();
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).max(floor)
        }),
    );

    let km = kmeans(
        x,
        KMeansConfig {
            k,
            max_iters: 100,
            restarts: 1,
        },
        seed.derive("gmm-init"),
    )?;
    let mut comps: Vec<Component> = (0..k)
        .map(|j| {
            let members: Vec<usize> = (0..n).filter(|&i| km.assignments[i] == j).collect();
            let mean = km.centroids.row(j).transpose();
            let var = if members.len() > 1 {
                DVector::from_iterator(
                    d,
                    (0..d).map(|c| {
                        let s: f64 = members.iter().map(|&i| (x[(i, c)] - mean[c]).powi(2)).sum();
                        (s / members.len() as f64).max(floor)
                    }),
                )
            } else {
                global_var.clone()
            };
            Component {
                prior: (members.len().max(1)) as f64,
                mean,
                var,
            }
        })
        .collect();
    let total: f64 = comps.iter().map(|c| c.prior).sum();
    comps.iter_mut().for_each(|c| c.prior /= total);

    let mut trace = Vec::new();
    let mut reseeds = Vec::new();
    let mut collapses = vec![0usize; k];
    let mut resp = DMatrix::<f64>::zeros(n, k);
    let mut row = vec![0.0; d];
    let mut point_ll = vec![0.0; n];
    for _ in 0..max_iters {
        // E-step
        let model = GmmModel {
            components: comps.clone(),
            training_trace: vec![],
            reseeds: vec![],
        };
        let mut ll = 0.0;
        for i in 0..n {
            for j in 0..d {
                row[j] = x[(i, j)];
            }
            let a = weighted_logs(&row, &model);
            let l = log_sum_exp(&a);
            point_ll[i] = l;
            ll += l;
            for c in 0..k {
                resp[(i, c)] = (a[c] - l).exp();
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::NonFinite("GMM log-likelihood"));
        }
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= 1e-10 * prev.abs().max(1.0));
        trace.push(ll);
        if converged {
            break;
        }

        // M-step
        for c in 0..k {
            let nk: f64 = resp.column(c).sum();
            if nk < EMPTY_MASS {
                collapses[c] += 1;
                if collapses[c] >= MAX_COLLAPSES {
                    return Err(Error::GmmDegenerate {
                        component: c,
                        times: collapses[c],
                    });
                }
                // worst-explained point, lowest index on ties
                let worst = (0..n)
                    .min_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)))
                    .unwrap_or(0);
                log::warn!("GMM component {c} is empty; re-seeding at record {worst}");
                point_ll[worst] = f64::INFINITY;
                comps[c].mean = x.row(worst).transpose();
                comps[c].var = global_var.clone();
                comps[c].prior = 1.0 / n as f64;
                reseeds.push(c);
                continue;
            }
            let mut mean = DVector::zeros(d);
            for i in 0..n {
                let r = resp[(i, c)];
                if r != 0.0 {
                    for j in 0..d {
                        mean[j] += r * x[(i, j)];
                    }
                }
            }
            mean /= nk;
            let mut var = DVector::zeros(d);
            for i in 0..n {
                let r = resp[(i, c)];
                if r != 0.0 {
                    for j in 0..d {
                        var[j] += r * (x[(i, j)] - mean[j]).powi(2);
                    }
                }
            }
            var /= nk;
            var.iter_mut().for_each(|v| *v = v.max(floor));
            comps[c] = Component {
                prior: nk / n as f64,
                mean,
                var,
            };
        }
        let total: f64 = comps.iter().map(|c| c.prior).sum();
        comps.iter_mut().for_each(|c| c.prior /= total);
    }
    let mut model = GmmModel::new(comps)?;
    model.training_trace = trace;
    model.reseeds = reseeds;
    Ok(model)
}
