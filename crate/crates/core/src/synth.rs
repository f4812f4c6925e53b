//! Synthetic two-encoder world.
//!
//! A latent sample `z` (class centers, users around their class, records
//! around their user) is the attacker's embedding. The target encoder sees
//! the same sample through a hidden rotation Q, a fixed smooth residual field
//! and isotropic noise:
//!
//! `e_target = z·Q + nonlinearity·s·r(z) + noise_scale·ε`
//!
//! with `r(v) = sin(ω·v·Aᵀ + φ)·C` and `s` chosen so that `s·r(z)` has the
//! same RMS norm as `z`. The rotation that maps target embeddings back onto
//! attack embeddings is therefore Qᵀ.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::rotation::{random_rotation, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: RngSeed,
    pub users: usize,
    pub records_per_user: usize,
    pub dim: usize,
    pub classes: Option<usize>,
    pub class_scale: f64,
    pub user_scale: f64,
    /// Per-record spread around the user center.
    pub record_scale: f64,
    pub noise_scale: f64,
    pub nonlinearity: f64,
    /// Per-dimension variance falls off as (1 + j)^(−decay).
    pub spectrum_decay: f64,
    pub residual_frequency: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: RngSeed(0),
            users: 240,
            records_per_user: 10,
            dim: 64,
            classes: Some(10),
            class_scale: 4.0,
            user_scale: 1.0,
            record_scale: 1.0,
            noise_scale: 0.3,
            nonlinearity: 0.2,
            spectrum_decay: 1.0,
            residual_frequency: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.users < 2 {
            return bad(format!("users must be at least 2, got {}", self.users));
        }
        if self.records_per_user < 2 {
            return bad(format!(
                "records_per_user must be at least 2, got {}",
                self.records_per_user
            ));
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.classes == Some(0) {
            return bad("classes must be positive when given".into());
        }
        if let Some(k) = self.classes {
            if k > self.users {
                return bad(format!(
                    "{k} classes need at least {k} users, got {}",
                    self.users
                ));
            }
        }
        for (name, v) in [
            ("class_scale", self.class_scale),
            ("user_scale", self.user_scale),
            ("record_scale", self.record_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.nonlinearity) {
            return bad(format!(
                "nonlinearity must lie in [0, 1], got {}",
                self.nonlinearity
            ));
        }
        if !self.spectrum_decay.is_finite() || !self.residual_frequency.is_finite() {
            return bad("spectrum_decay and residual_frequency must be finite".into());
        }
        Ok(())
    }

    /// Per-dimension standard deviations, scaled to unit mean variance.
    pub fn spectrum(&self) -> DVector<f64> {
        let var = DVector::from_fn(self.dim, |j, _| (1.0 + j as f64).powf(-self.spectrum_decay));
        let mean = var.mean();
        var.map(|v| (v / mean).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldOutput {
    pub config: WorldConfig,
    pub e_attack: EmbeddingSet,
    pub e_target: EmbeddingSet,
    /// Q, with `e_target ≈ e_attack · Q`.
    pub hidden_rotation: Rotation,
    /// `pairing[i]` is the attack record produced from the same latent sample
    /// as target record i.
    pub pairing: Vec<usize>,
    /// s in `nonlinearity·s·r(z)`; 0 when the residual is off.
    pub residual_scale: f64,
}

impl WorldOutput {
    /// Ground-truth alignment from the target space onto the attack space.
    pub fn true_alignment(&self) -> Rotation {
        self.hidden_rotation.transpose()
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

/// Scales each column j by `sd[j]·k`.
fn scale_cols(mut m: DMatrix<f64>, sd: &DVector<f64>, k: f64) -> DMatrix<f64> {
    for (j, mut c) in m.column_iter_mut().enumerate() {
        c *= sd[j] * k;
    }
    m
}

fn rms_norm(m: &DMatrix<f64>) -> f64 {
    (m.norm_squared() / m.nrows() as f64).sqrt()
}

struct Residual {
    a: DMatrix<f64>,
    phase: DVector<f64>,
    c: DMatrix<f64>,
    omega: f64,
}

impl Residual {
    fn sample(dim: usize, omega: f64, rng: &mut impl Rng) -> Self {
        let mut a = gaussian(dim, dim, rng);
        for mut r in a.row_iter_mut() {
            let n = r.norm();
            r /= n;
        }
        let phase = DVector::from_fn(dim, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        let c = gaussian(dim, dim, rng);
        Residual { a, phase, c, omega }
    }

    fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = v * self.a.transpose() * self.omega;
        for mut r in h.row_iter_mut() {
            for (j, x) in r.iter_mut().enumerate() {
                *x = (*x + self.phase[j]).sin();
            }
        }
        h * &self.c
    }
}

pub fn generate_world(cfg: &WorldConfig) -> Result<WorldOutput> {
    cfg.validate()?;
    let d = cfg.dim;
    let sd = cfg.spectrum();
    let seed = cfg.seed;

    let user_centers = match cfg.classes {
        Some(k) => {
            let classes = scale_cols(
                gaussian(k, d, &mut seed.derive("class-centers").rng()),
                &sd,
                cfg.class_scale,
            );
            let offsets = scale_cols(
                gaussian(cfg.users, d, &mut seed.derive("user-centers").rng()),
                &sd,
                cfg.user_scale,
            );
            DMatrix::from_fn(cfg.users, d, |u, j| classes[(u % k, j)] + offsets[(u, j)])
        }
        None => {
            // every user is its own class
            let spread = cfg.class_scale.hypot(cfg.user_scale);
            scale_cols(
                gaussian(cfg.users, d, &mut seed.derive("user-centers").rng()),
                &sd,
                spread,
            )
        }
    };
    let n = cfg.users * cfg.records_per_user;
    let jitter = scale_cols(
        gaussian(n, d, &mut seed.derive("records").rng()),
        &sd,
        cfg.record_scale,
    );
    let z = DMatrix::from_fn(n, d, |i, j| {
        user_centers[(i / cfg.records_per_user, j)] + jitter[(i, j)]
    });

    let q = random_rotation(d, seed.derive("rotation"))?;
    let mut target = &z * q.matrix();
    let mut residual_scale = 0.0;
    if cfg.nonlinearity > 0.0 {
        let field = Residual::sample(
            d,
            cfg.residual_frequency,
            &mut seed.derive("residual").rng(),
        );
        let r = field.apply(&z);
        let rn = rms_norm(&r);
        if rn > 0.0 {
            residual_scale = rms_norm(&z) / rn;
            target += r * (cfg.nonlinearity * residual_scale);
        }
    }
    if cfg.noise_scale > 0.0 {
        target += gaussian(n, d, &mut seed.derive("noise").rng()) * cfg.noise_scale;
    }

    let width = (cfg.users - 1).to_string().len();
    let ids: Vec<String> = (0..n)
        .map(|i| format!("user{:0width$}", i / cfg.records_per_user))
        .collect();
    let labels: Vec<Option<u32>> = (0..n)
        .map(|i| cfg.classes.map(|k| ((i / cfg.records_per_user) % k) as u32))
        .collect();
    let num_classes = cfg.classes.map(|k| k as u32);
    let e_attack = EmbeddingSet::new(ids.clone(), labels.clone(), z, num_classes)?;
    let e_target = EmbeddingSet::new(ids, labels, target, num_classes)?;
    Ok(WorldOutput {
        config: *cfg,
        e_attack,
        e_target,
        hidden_rotation: q,
        pairing: (0..n).collect(),
        residual_scale,
    })
}

/// Partition sizes for `n` users: ⌊n·f⌋ each, the remainder handed out by
/// largest fractional part (earlier parts first on ties).
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one split fraction".into(),
        ));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    let frac = |i: usize| exact[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    if let Some(p) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InsufficientData(format!(
            "{n} users cannot fill {} parts (part {p} would be empty)",
            fractions.len()
        )));
    }
    Ok(sizes)
}

/// Random user-disjoint partition of the users of `set`.
pub fn split_disjoint(
    set: &EmbeddingSet,
    fractions: &[f64],
    seed: RngSeed,
) -> Result<Vec<BTreeSet<String>>> {
    let mut users: Vec<String> = set.users().into_iter().map(String::from).collect();
    let sizes = partition_sizes(users.len(), fractions)?;
    users.shuffle(&mut seed.derive("split").rng());
    let mut parts = Vec::with_capacity(sizes.len());
    let mut rest = users.as_slice();
    for s in sizes {
        let (head, tail) = rest.split_at(s);
        parts.push(head.iter().cloned().collect());
        rest = tail;
    }
    Ok(parts)
}

/// Rows of `set` grouped by user.
pub fn rows_by_user(set: &EmbeddingSet) -> BTreeMap<&str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for i in 0..set.len() {
        m.entry(set.user_id(i)).or_default().push(i);
    }
    m
}
