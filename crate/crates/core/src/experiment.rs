//! The attack grid: one synthetic world, a user-disjoint attacker/target
//! split, every requested alignment method, one report per method.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alignment::{
    cluster_center_procrustes, finetune_rotation, identity_alignment, identity_correspondence,
    oracle_procrustes, wasserstein_procrustes, AlignmentResult, FinetuneConfig, WassersteinConfig,
};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::gmm::SymmetricMode;
use crate::json;
use crate::metrics::{evaluate_attack, AttackReport, EvalConfig};
use crate::synth::{generate_world, split_disjoint, WorldConfig, WorldOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Identity,
    ProcrustesCluster,
    ProcrustesClusterFinetune,
    Wasserstein,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Identity,
        Method::ProcrustesCluster,
        Method::ProcrustesClusterFinetune,
        Method::Wasserstein,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::ProcrustesCluster => "procrustes-cluster",
            Method::ProcrustesClusterFinetune => "procrustes-cluster+finetune",
            Method::Wasserstein => "wasserstein",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown method {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub methods: Vec<Method>,
    /// Share of users whose records the attacker holds; the rest are targets.
    pub attack_fraction: f64,
    /// Force det = +1 on the cluster-center Procrustes solution.
    pub proper_rotation: bool,
    pub finetune: FinetuneConfig,
    pub wasserstein: WassersteinConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            methods: Method::ALL.to_vec(),
            attack_fraction: 0.5,
            proper_rotation: true,
            finetune: FinetuneConfig {
                iterations: 200,
                gmm_components: 20,
                symmetric_mode: SymmetricMode::Min,
                ..FinetuneConfig::default()
            },
            wasserstein: WassersteinConfig {
                initial_batch: 64,
                stages: 4,
                ..WassersteinConfig::default()
            },
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("the method list is empty".into()));
        }
        if !(self.attack_fraction > 0.0 && self.attack_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "attack_fraction must lie strictly between 0 and 1, got {}",
                self.attack_fraction
            )));
        }
        self.world.validate()
    }

    /// Copy with the per-stage seeds derived from the world seed.
    pub fn with_derived_seeds(&self) -> Self {
        let mut c = self.clone();
        c.finetune.seed = self.world.seed.derive("finetune");
        c.wasserstein.seed = self.world.seed.derive("wasserstein");
        c
    }
}

/// Sets seen by the attacker and the target after the user split.
#[derive(Debug, Clone)]
pub struct AttackData {
    /// Attacker-encoder embeddings of the attacker's users.
    pub attack: EmbeddingSet,
    /// Stolen target templates (target users).
    pub target: EmbeddingSet,
    /// Attacker-encoder embeddings of the target users, row-paired with `target`.
    pub truth: EmbeddingSet,
    /// Target-encoder embeddings of the attacker's users, row-paired with `attack`.
    pub oracle_target: EmbeddingSet,
}

impl AttackData {
    pub fn from_world(world: &WorldOutput, attack_fraction: f64) -> Result<Self> {
        let parts = split_disjoint(
            &world.e_attack,
            &[attack_fraction, 1.0 - attack_fraction],
            world.config.seed,
        )?;
        let rows_of = |users: &std::collections::BTreeSet<String>| -> Vec<usize> {
            (0..world.e_target.len())
                .filter(|&i| users.contains(world.e_target.user_id(i)))
                .collect()
        };
        let attack_rows = rows_of(&parts[0]);
        let target_rows = rows_of(&parts[1]);
        let paired =
            |rows: &[usize]| -> Vec<usize> { rows.iter().map(|&i| world.pairing[i]).collect() };
        Ok(AttackData {
            attack: world.e_attack.select(&paired(&attack_rows))?,
            target: world.e_target.select(&target_rows)?,
            truth: world.e_attack.select(&paired(&target_rows))?,
            oracle_target: world.e_target.select(&attack_rows)?,
        })
    }
}

/// Runs one method, target space → attacker space.
pub fn align(method: Method, data: &AttackData, cfg: &ExperimentConfig) -> Result<AlignmentResult> {
    match method {
        Method::Identity => identity_alignment(data.target.dim()),
        Method::ProcrustesCluster => cluster_center_procrustes(
            &data.target,
            &data.attack,
            &identity_correspondence(&data.target),
            cfg.proper_rotation,
        ),
        Method::ProcrustesClusterFinetune => {
            let start = align(Method::ProcrustesCluster, data, cfg)?;
            let mut r =
                finetune_rotation(&start.rotation, &data.target, &data.attack, &cfg.finetune)?;
            r.underdetermined = start.underdetermined;
            r.config["init"] = json!(start.method);
            Ok(r)
        }
        Method::Wasserstein => wasserstein_procrustes(&data.target, &data.attack, &cfg.wasserstein),
        Method::Oracle => oracle_procrustes(&data.oracle_target, &data.attack),
    }
}

/// Turns an alignment into a scored report.
pub fn report(
    alignment: &AlignmentResult,
    data: &AttackData,
    cfg: &ExperimentConfig,
) -> Result<AttackReport> {
    let mut r = evaluate_attack(
        &data.target,
        &alignment.rotation,
        Some(&data.truth),
        &alignment.method,
        &cfg.eval,
    )?;
    r.oracle = alignment.oracle;
    r.underdetermined = alignment.underdetermined;
    r.config["seed"] = json!(cfg.world.seed);
    r.config["alignment"] = alignment.config.clone();
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub holds: bool,
    pub checked: Vec<String>,
    pub violations: Vec<String>,
}

/// identity < procrustes-cluster ≤ +finetune ≤ wasserstein ≤ oracle on
/// sFAR at the EER threshold, over whichever methods are present, plus
/// identity < 0.10 and oracle > 0.60.
pub fn ordering_check(reports: &[AttackReport]) -> OrderingCheck {
    let value = |m: Method| {
        reports
            .iter()
            .find(|r| r.method == m.name())
            .and_then(|r| r.sfar.eer)
    };
    let present: Vec<(Method, f64)> = Method::ALL
        .iter()
        .filter_map(|&m| value(m).map(|v| (m, v)))
        .collect();
    let mut checked = Vec::new();
    let mut violations = Vec::new();
    for pair in present.windows(2) {
        let ((a, va), (b, vb)) = (pair[0], pair[1]);
        let strict = a == Method::Identity;
        let rel = if strict { "<" } else { "<=" };
        let desc = format!("{a} {rel} {b}");
        if !(if strict { va < vb } else { va <= vb }) {
            violations.push(format!(
                "{desc} ({} vs {})",
                json::fmt17(va),
                json::fmt17(vb)
            ));
        }
        checked.push(desc);
    }
    if let Some(v) = value(Method::Identity) {
        checked.push("identity < 0.10".into());
        if !(v < 0.10) {
            violations.push(format!("identity < 0.10 ({})", json::fmt17(v)));
        }
    }
    if let Some(v) = value(Method::Oracle) {
        checked.push("oracle > 0.60".into());
        if !(v > 0.60) {
            violations.push(format!("oracle > 0.60 ({})", json::fmt17(v)));
        }
    }
    OrderingCheck {
        holds: violations.is_empty(),
        checked,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub attack_records: usize,
    pub target_records: usize,
    pub attack_users: usize,
    pub target_users: usize,
    #[serde(serialize_with = "json::f64")]
    pub residual_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub world: WorldSummary,
    pub reports: Vec<AttackReport>,
    #[serde(skip)]
    pub alignments: Vec<AlignmentResult>,
    pub ordering: OrderingCheck,
    /// Set when a method failed; reports of earlier methods are kept.
    pub failure: Option<StageFailure>,
}

/// Generates the world, splits it and runs every method in order. Stops at
/// the first failing method and records it in `failure`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cfg = cfg.with_derived_seeds();
    let world = generate_world(&cfg.world).map_err(|e| e.in_stage("synth"))?;
    let data =
        AttackData::from_world(&world, cfg.attack_fraction).map_err(|e| e.in_stage("split"))?;
    let summary = WorldSummary {
        attack_records: data.attack.len(),
        target_records: data.target.len(),
        attack_users: data.attack.users().len(),
        target_users: data.target.users().len(),
        residual_scale: world.residual_scale,
    };
    let mut reports = Vec::new();
    let mut alignments = Vec::new();
    let mut failure = None;
    for &m in &cfg.methods {
        let t = Instant::now();
        let outcome = align(m, &data, &cfg).and_then(|a| report(&a, &data, &cfg).map(|r| (a, r)));
        match outcome {
            Ok((a, r)) => {
                log::info!(
                    "{m}: sFAR_EER {:.4}, {:.1}s",
                    r.sfar.eer.unwrap_or(f64::NAN),
                    t.elapsed().as_secs_f64()
                );
                alignments.push(a);
                reports.push(r);
            }
            Err(e) => {
                log::error!("{m} failed: {e}");
                failure = Some(StageFailure {
                    stage: m.name().to_string(),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let ordering = ordering_check(&reports);
    Ok(ExperimentOutput {
        config: cfg,
        world: summary,
        reports,
        alignments,
        ordering,
        failure,
    })
}
