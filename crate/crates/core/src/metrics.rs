//! Verification and spoofing metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::json;
use crate::rotation::{apply_alignment, Rotation};

/// a·b / (‖a‖‖b‖), clamped to [−1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine",
            left: a.len(),
            right: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine of a zero vector is undefined".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit length; errors on a zero row.
fn unit_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (i, mut r) in out.row_iter_mut().enumerate() {
        let n = r.norm();
        if n == 0.0 {
            return Err(Error::InvalidInput(format!(
                "record {i} is the zero vector; cosine is undefined"
            )));
        }
        r /= n;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl TrialScores {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(&impostor).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("trial scores"));
        }
        Ok(TrialScores { genuine, impostor })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    PerRecord,
    MeanPerUser,
}

fn same_content(a: &EmbeddingSet, b: &EmbeddingSet) -> bool {
    a.user_ids() == b.user_ids() && a.vectors() == b.vectors()
}

/// Genuine and impostor cosine scores of `probe` against `enroll`.
///
/// When both sets hold the same records, each unordered pair of distinct
/// records is scored once and self-pairs are skipped; with mean-per-user
/// pooling a record is then compared with its own user's template computed
/// without it.
pub fn build_trials(
    enroll: &EmbeddingSet,
    probe: &EmbeddingSet,
    pooling: Pooling,
) -> Result<TrialScores> {
    if enroll.dim() != probe.dim() {
        return Err(Error::DimensionMismatch {
            context: "build_trials: enrollment vs probe",
            left: enroll.dim(),
            right: probe.dim(),
        });
    }
    let eu: std::collections::BTreeSet<&str> = enroll.users().into_iter().collect();
    let overlap = probe.users().into_iter().filter(|u| eu.contains(u)).count();
    if overlap < 2 {
        return Err(Error::InsufficientData(format!(
            "trials need at least 2 users present in both sets, found {overlap}"
        )));
    }
    let self_mode = same_content(enroll, probe);
    let p = unit_rows(probe.vectors())?;
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    match pooling {
        Pooling::PerRecord => {
            let e = unit_rows(enroll.vectors())?;
            let s = &p * e.transpose();
            for i in 0..probe.len() {
                let start = if self_mode { i + 1 } else { 0 };
                for j in start..enroll.len() {
                    let v = s[(i, j)].clamp(-1.0, 1.0);
                    if probe.user_id(i) == enroll.user_id(j) {
                        genuine.push(v);
                    } else {
                        impostor.push(v);
                    }
                }
            }
        }
        Pooling::MeanPerUser => {
            let mut sums: BTreeMap<&str, (DVector<f64>, usize)> = BTreeMap::new();
            for i in 0..enroll.len() {
                let e = sums
                    .entry(enroll.user_id(i))
                    .or_insert_with(|| (DVector::zeros(enroll.dim()), 0));
                e.0 += enroll.vectors().row(i).transpose();
                e.1 += 1;
            }
            for i in 0..probe.len() {
                let x: Vec<f64> = probe.vectors().row(i).iter().copied().collect();
                for (user, (sum, count)) in &sums {
                    let own = *user == probe.user_id(i);
                    let template: Vec<f64> = if own && self_mode {
                        if *count < 2 {
                            continue;
                        }
                        (sum - probe.vectors().row(i).transpose())
                            .iter()
                            .map(|v| v / (*count - 1) as f64)
                            .collect()
                    } else {
                        sum.iter().map(|v| v / *count as f64).collect()
                    };
                    let v = cosine(&x, &template)?;
                    if own {
                        genuine.push(v);
                    } else {
                        impostor.push(v);
                    }
                }
            }
            let _ = p;
        }
    }
    if genuine.is_empty() {
        return Err(Error::InsufficientData(
            "no genuine trials: every user needs at least 2 records when a set is scored against itself".into(),
        ));
    }
    if impostor.is_empty() {
        return Err(Error::InsufficientData("no impostor trials".into()));
    }
    TrialScores::new(genuine, impostor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Sweep every distinct score as a threshold, accepting scores ≥ t, and keep
/// the one with the smallest |FAR − FRR| (lowest threshold on ties).
pub fn compute_eer(trials: &TrialScores) -> Result<Eer> {
    let (ng, ni) = (trials.genuine.len(), trials.impostor.len());
    if ng == 0 || ni == 0 {
        return Err(Error::InsufficientData(
            "EER needs genuine and impostor scores".into(),
        ));
    }
    let mut g = trials.genuine.clone();
    let mut im = trials.impostor.clone();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = g.iter().chain(&im).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    // gi: genuine below t; ii: impostors below t
    let (mut gi, mut ii) = (0usize, 0usize);
    let mut best: Option<(f64, Eer)> = None;
    for &t in &all {
        while gi < ng && g[gi] < t {
            gi += 1;
        }
        while ii < ni && im[ii] < t {
            ii += 1;
        }
        let frr = gi as f64 / ng as f64;
        let far = (ni - ii) as f64 / ni as f64;
        let gap = (far - frr).abs();
        if best.as_ref().is_none_or(|(b, _)| gap < *b) {
            best = Some((
                gap,
                Eer {
                    eer: (far + frr) / 2.0,
                    threshold: t,
                    far,
                    frr,
                },
            ));
        }
    }
    Ok(best.expect("non-empty scores").1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarThreshold {
    pub tau: f64,
    /// False when too few impostor scores exist to reach the requested rate
    /// (the threshold then sits above the highest score).
    pub resolvable: bool,
}

/// Smallest τ with at most x% of impostor scores ≥ τ.
///
/// The allowance is k = ⌊n·x/100⌋ scores. τ is the lowest impostor score
/// whose upper tail holds at most k scores; when no score qualifies (k = 0,
/// or ties at the top), τ is the next float above the maximum and the
/// threshold is marked unresolvable.
pub fn far_threshold(impostor: &[f64], x_percent: f64) -> Result<FarThreshold> {
    if !(x_percent > 0.0 && x_percent <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "FAR level must be in (0, 100], got {x_percent}"
        )));
    }
    if impostor.is_empty() {
        return Err(Error::InsufficientData(
            "FAR threshold needs impostor scores".into(),
        ));
    }
    if impostor.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("impostor scores"));
    }
    let n = impostor.len();
    let k = (n as f64 * x_percent / 100.0 + 1e-9).floor() as usize;
    let mut s = impostor.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    // walk down from the top; s[j] is admissible when count(≥ s[j]) ≤ k
    let mut tau = None;
    let mut j = 0;
    while j < n {
        let v = s[j];
        let mut end = j;
        while end < n && s[end] == v {
            end += 1;
        }
        if end <= k {
            tau = Some(v);
            j = end;
        } else {
            break;
        }
    }
    Ok(match tau {
        Some(t) => FarThreshold {
            tau: t,
            resolvable: true,
        },
        None => FarThreshold {
            tau: s[0].next_up(),
            resolvable: false,
        },
    })
}

fn check_paired(a: &EmbeddingSet, b: &EmbeddingSet, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "paired sets",
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.len() != b.len() || a.user_ids() != b.user_ids() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: sets are not paired row by row ({} vs {} records or differing user ids)",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cosine between each template and its spoof.
pub fn paired_cosines(enroll: &EmbeddingSet, spoof: &EmbeddingSet) -> Result<Vec<f64>> {
    check_paired(enroll, spoof, "paired cosines")?;
    let a = unit_rows(enroll.vectors())?;
    let b = unit_rows(spoof.vectors())?;
    Ok((0..a.nrows())
        .map(|i| a.row(i).dot(&b.row(i)).clamp(-1.0, 1.0))
        .collect())
}

/// Fraction of spoofs whose cosine with their template is ≥ τ.
pub fn compute_sfar(enroll: &EmbeddingSet, spoof: &EmbeddingSet, tau: f64) -> Result<f64> {
    let c = paired_cosines(enroll, spoof)?;
    Ok(c.iter().filter(|&&v| v >= tau).count() as f64 / c.len() as f64)
}

fn nearest_centroid(v: &[f64], centroids: &BTreeMap<u32, DVector<f64>>) -> Result<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (&label, c) in centroids {
        let s = cosine(v, c.as_slice())?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((label, s));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::InvalidInput("no centroids given".into()))
}

/// Fraction of records whose spoof lands on the same nearest class centroid
/// (by cosine) as the original.
pub fn classification_accuracy(
    e: &EmbeddingSet,
    spoof: &EmbeddingSet,
    centroids: &BTreeMap<u32, DVector<f64>>,
) -> Result<f64> {
    check_paired(e, spoof, "classification accuracy")?;
    if !e.is_labelled() {
        return Err(Error::MissingLabels(
            "classification accuracy needs a label on every record".into(),
        ));
    }
    let missing: Vec<u32> = e
        .label_set()
        .into_iter()
        .filter(|l| !centroids.contains_key(l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(format!(
            "no centroid for classes {missing:?}"
        )));
    }
    let mut hits = 0;
    for i in 0..e.len() {
        let a: Vec<f64> = e.vectors().row(i).iter().copied().collect();
        let b: Vec<f64> = spoof.vectors().row(i).iter().copied().collect();
        if nearest_centroid(&a, centroids)? == nearest_centroid(&b, centroids)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / e.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub pooling: Pooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfarLevels {
    #[serde(rename = "EER", serialize_with = "json::opt_f64")]
    pub eer: Option<f64>,
    #[serde(rename = "1%", serialize_with = "json::opt_f64")]
    pub far1: Option<f64>,
    #[serde(rename = "0.1%", serialize_with = "json::opt_f64")]
    pub far01: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub method: String,
    pub oracle: bool,
    #[serde(serialize_with = "json::opt_f64")]
    pub accuracy: Option<f64>,
    /// EER of the spoofed templates scored among themselves.
    #[serde(serialize_with = "json::f64")]
    pub eer: f64,
    /// τ at the attacked system's EER operating point.
    #[serde(serialize_with = "json::f64")]
    pub eer_threshold: f64,
    /// EER of the attacked system on genuine templates.
    #[serde(serialize_with = "json::f64")]
    pub system_eer: f64,
    pub thresholds: SfarLevels,
    pub sfar: SfarLevels,
    #[serde(serialize_with = "json::f64")]
    pub mean_cosine: f64,
    pub underdetermined: bool,
    #[serde(serialize_with = "json::f64")]
    pub det: f64,
    pub records: usize,
    pub genuine_trials: usize,
    pub impostor_trials: usize,
    pub warnings: Vec<String>,
    /// Effective settings that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl AttackReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(json::to_pretty(self)?)
    }
}

/// Spoofs every template of `target` with `target · W` and scores the result.
///
/// Templates are compared with `truth` when given (row i of `truth` is what
/// the attacker's encoder would produce for the sample behind row i of
/// `target`), otherwise with `target` itself. Thresholds come from the
/// reference set's own genuine/impostor trials.
pub fn evaluate_attack(
    target: &EmbeddingSet,
    w: &Rotation,
    truth: Option<&EmbeddingSet>,
    method: &str,
    cfg: &EvalConfig,
) -> Result<AttackReport> {
    let spoof = apply_alignment(target, w)?;
    let reference = truth.unwrap_or(target);
    check_paired(reference, &spoof, "evaluate_attack")?;

    let sys =
        build_trials(reference, reference, cfg.pooling).map_err(|e| e.in_stage("system trials"))?;
    let sys_eer = compute_eer(&sys)?;
    let mut warnings = Vec::new();
    let mut level = |x: f64, name: &str| -> Result<Option<f64>> {
        let t = far_threshold(&sys.impostor, x)?;
        if t.resolvable {
            Ok(Some(t.tau))
        } else {
            warnings.push(format!(
                "quantile_unresolvable: sFAR at {name} needs at least {} impostor scores, have {}",
                (100.0 / x).ceil() as usize,
                sys.impostor.len()
            ));
            Ok(None)
        }
    };
    let t1 = level(1.0, "1%")?;
    let t01 = level(0.1, "0.1%")?;
    let cos = paired_cosines(reference, &spoof)?;
    let rate = |tau: f64| cos.iter().filter(|&&v| v >= tau).count() as f64 / cos.len() as f64;

    let spoof_trials =
        build_trials(&spoof, &spoof, cfg.pooling).map_err(|e| e.in_stage("spoof trials"))?;
    let spoof_eer = compute_eer(&spoof_trials)?;

    let accuracy = if reference.is_labelled() {
        Some(classification_accuracy(
            reference,
            &spoof,
            &reference.class_centroids(),
        )?)
    } else {
        None
    };
    Ok(AttackReport {
        method: method.to_string(),
        oracle: false,
        accuracy,
        eer: spoof_eer.eer,
        eer_threshold: sys_eer.threshold,
        system_eer: sys_eer.eer,
        thresholds: SfarLevels {
            eer: Some(sys_eer.threshold),
            far1: t1,
            far01: t01,
        },
        sfar: SfarLevels {
            eer: Some(rate(sys_eer.threshold)),
            far1: t1.map(rate),
            far01: t01.map(rate),
        },
        mean_cosine: cos.iter().sum::<f64>() / cos.len() as f64,
        underdetermined: false,
        det: w.det(),
        records: cos.len(),
        genuine_trials: sys.genuine.len(),
        impostor_trials: sys.impostor.len(),
        warnings,
        config: serde_json::json!({ "pooling": cfg.pooling, "reference": if truth.is_some() { "paired" } else { "target" } }),
    })
}

fn pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.2}%", 100.0 * v),
        None => "-".to_string(),
    }
}

/// Text table with columns Alignment / Accuracy / EER / sFAR_EER / sFAR_1%.
pub fn render_table(reports: &[AttackReport]) -> String {
    let header = ["Alignment", "Accuracy", "EER", "sFAR_EER", "sFAR_1%"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                pct(r.accuracy),
                pct(Some(r.eer)),
                pct(r.sfar.eer),
                pct(r.sfar.far1),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (i, c) in cells.iter().enumerate() {
            let pad = width[i] - c.chars().count();
            if i == 0 {
                let _ = write!(out, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{c}", " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    let total: usize = width.iter().sum::<usize>() + 2 * (width.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in &rows {
        line(&mut out, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(rows: Vec<(&str, Option<u32>, Vec<f64>)>) -> EmbeddingSet {
        EmbeddingSet::from_records(rows).unwrap()
    }

    #[test]
    fn cosine_values() {
        assert_abs_diff_eq!(
            cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn trial_counts() {
        let e = set(vec![
            ("a", None, vec![1.0, 0.1]),
            ("a", None, vec![1.0, 0.2]),
            ("b", None, vec![0.1, 1.0]),
            ("b", None, vec![0.2, 1.0]),
            ("c", None, vec![1.0, 1.0]),
            ("c", None, vec![1.0, 0.9]),
        ]);
        let t = build_trials(&e, &e, Pooling::PerRecord).unwrap();
        assert_eq!((t.genuine.len(), t.impostor.len()), (3, 12));
        let pooled = build_trials(&e, &e, Pooling::MeanPerUser).unwrap();
        assert_eq!((pooled.genuine.len(), pooled.impostor.len()), (6, 12));
    }

    #[test]
    fn single_record_users_have_no_genuine_trials() {
        let e = set(vec![
            ("a", None, vec![1.0, 0.0]),
            ("b", None, vec![0.0, 1.0]),
        ]);
        let err = build_trials(&e, &e, Pooling::PerRecord).unwrap_err();
        assert!(err.to_string().contains("at least 2 records"), "{err}");
        let one = set(vec![
            ("a", None, vec![1.0, 0.0]),
            ("a", None, vec![0.0, 1.0]),
        ]);
        assert!(matches!(
            build_trials(&one, &one, Pooling::PerRecord),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn eer_examples() {
        let sep = TrialScores::new(vec![1.0; 5], vec![0.0; 7]).unwrap();
        assert_eq!(compute_eer(&sep).unwrap().eer, 0.0);
        let same = TrialScores::new(vec![0.1, 0.2, 0.3, 0.4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((compute_eer(&same).unwrap().eer - 0.5).abs() <= 0.25);
        let t = TrialScores::new(vec![0.9, 0.8, 0.4], vec![0.7, 0.3, 0.2]).unwrap();
        let e = compute_eer(&t).unwrap();
        assert_abs_diff_eq!(e.eer, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!((e.far, e.frr), (1.0 / 3.0, 1.0 / 3.0));
        // accept ≥ t: at 0.7 one impostor (0.7) passes and one genuine (0.4) fails
        assert_eq!(e.threshold, 0.7);
    }

    #[test]
    fn far_threshold_examples() {
        let imp: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let all = far_threshold(&imp, 100.0).unwrap();
        assert!(all.tau <= 0.0 && all.resolvable);
        let one = far_threshold(&imp, 1.0).unwrap();
        assert!(one.tau > 0.98 && one.resolvable);
        assert_eq!(imp.iter().filter(|&&s| s >= one.tau).count(), 1);
        let tiny = far_threshold(&imp, 0.1).unwrap();
        assert!(!tiny.resolvable && tiny.tau > 0.99);
        assert!(far_threshold(&imp, 0.0).is_err());
        assert!(far_threshold(&imp, 100.5).is_err());
    }

    #[test]
    fn far_threshold_with_ties_at_top() {
        let t = far_threshold(&[1.0, 1.0, 0.5, 0.2], 25.0).unwrap();
        assert!(!t.resolvable && t.tau > 1.0);
        let t = far_threshold(&[1.0, 0.9, 0.9, 0.5], 50.0).unwrap();
        assert_eq!(t.tau, 1.0);
    }

    #[test]
    fn sfar_examples() {
        let n = 10;
        let enroll = set((0..n)
            .map(|i| (["u0", "u1"][i % 2], None, vec![1.0, 0.0]))
            .collect());
        assert_eq!(compute_sfar(&enroll, &enroll, 1.0).unwrap(), 1.0);
        let orth = enroll
            .with_vectors(DMatrix::from_fn(n, 2, |_, j| j as f64))
            .unwrap();
        assert_eq!(compute_sfar(&enroll, &orth, 0.5).unwrap(), 0.0);
        // spoof i at cosine 0.1·(i+1) with its template
        let spoof = enroll
            .with_vectors(DMatrix::from_fn(n, 2, |i, j| {
                let c = 0.1 * (i + 1) as f64;
                if j == 0 {
                    c
                } else {
                    (1.0 - c * c).max(0.0).sqrt()
                }
            }))
            .unwrap();
        assert_eq!(compute_sfar(&enroll, &spoof, 0.55).unwrap(), 0.5);
        let short = set(vec![("u0", None, vec![1.0, 0.0])]);
        assert!(compute_sfar(&enroll, &short, 0.5).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let e = set(vec![
            ("a", Some(0), vec![1.0, 0.1]),
            ("b", Some(1), vec![0.1, 1.0]),
            ("c", Some(0), vec![0.9, 0.0]),
        ]);
        let c = e.class_centroids();
        assert_eq!(classification_accuracy(&e, &e, &c).unwrap(), 1.0);
        let swapped = e
            .with_vectors(DMatrix::from_row_slice(
                3,
                2,
                &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            ))
            .unwrap();
        assert_eq!(classification_accuracy(&e, &swapped, &c).unwrap(), 0.0);
        let unl = set(vec![
            ("a", None, vec![1.0, 0.0]),
            ("b", None, vec![0.0, 1.0]),
        ]);
        assert!(matches!(
            classification_accuracy(&unl, &unl, &c),
            Err(Error::MissingLabels(_))
        ));
    }

    #[test]
    fn table_layout() {
        let r = AttackReport {
            method: "identity".into(),
            oracle: false,
            accuracy: None,
            eer: 0.5,
            eer_threshold: 0.3,
            system_eer: 0.05,
            thresholds: SfarLevels {
                eer: Some(0.3),
                far1: Some(0.6),
                far01: None,
            },
            sfar: SfarLevels {
                eer: Some(0.0104),
                far1: Some(0.0),
                far01: None,
            },
            mean_cosine: 0.0,
            underdetermined: false,
            det: 1.0,
            records: 10,
            genuine_trials: 1,
            impostor_trials: 1,
            warnings: vec![],
            config: serde_json::json!({"pooling": "per-record"}),
        };
        let t = render_table(std::slice::from_ref(&r));
        let lines: Vec<&str> = t.lines().collect();
        assert!(
            lines[0].starts_with("Alignment  Accuracy     EER  sFAR_EER  sFAR_1%"),
            "{t}"
        );
        assert!(
            lines[2].contains("1.04%") && lines[2].contains(" - "),
            "{t}"
        );
        let json = r.to_json().unwrap();
        let back: AttackReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(json.contains("\"0.1%\": null"));
    }
}
