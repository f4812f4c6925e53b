use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde_json::json;

use super::{check_same_dim, AlignmentResult};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rotation::{svd, Rotation};

/// Orthogonal minimiser of ‖XW − Y‖_F for paired rows: SVD(XᵀY) = UΣVᵀ, W = UVᵀ.
///
/// With `proper` the last singular direction is flipped when needed so that
/// det W = +1.
pub fn procrustes_matrices(x: &DMatrix<f64>, y: &DMatrix<f64>, proper: bool) -> Result<Rotation> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "Procrustes inputs are {}×{} and {}×{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    if x.nrows() < x.ncols() {
        log::debug!(
            "Procrustes on {} pairs in dimension {} is underdetermined",
            x.nrows(),
            x.ncols()
        );
    }
    let (u, _, vt) = svd(&(x.transpose() * y))?;
    let mut w = &u * &vt;
    if proper && w.determinant() < 0.0 {
        let d = u.ncols();
        let mut flip = DMatrix::identity(d, d);
        flip[(d - 1, d - 1)] = -1.0;
        w = u * flip * vt;
    }
    Rotation::from_matrix_or_project(w)
}

/// Procrustes on paired embedding sets (row i of `x` matches row i of `y`).
pub fn orthogonal_procrustes(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<Rotation> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "Procrustes needs paired sets, got {} and {} records",
            x.len(),
            y.len()
        )));
    }
    check_same_dim("orthogonal_procrustes", x.dim(), y.dim())?;
    procrustes_matrices(x.vectors(), y.vectors(), false)
}

/// Identity map from every label of `x` to itself.
pub fn identity_correspondence(x: &EmbeddingSet) -> BTreeMap<u32, u32> {
    x.label_set().into_iter().map(|l| (l, l)).collect()
}

/// Procrustes between per-class centroids of `x` and `y`.
///
/// `correspondence` maps a class of `x` to a class of `y` and must be a
/// bijection covering both label sets.
pub fn cluster_center_procrustes(
    x: &EmbeddingSet,
    y: &EmbeddingSet,
    correspondence: &BTreeMap<u32, u32>,
    proper: bool,
) -> Result<AlignmentResult> {
    check_same_dim("cluster_center_procrustes", x.dim(), y.dim())?;
    for (name, set) in [("source", x), ("destination", y)] {
        if !set.is_labelled() {
            let missing = set.labels().iter().filter(|l| l.is_none()).count();
            return Err(Error::MissingLabels(format!(
                "{name} set has {missing} records without a class label"
            )));
        }
    }
    let lx = x.label_set();
    let ly = y.label_set();
    let keys: BTreeSet<u32> = correspondence.keys().copied().collect();
    let values: BTreeSet<u32> = correspondence.values().copied().collect();
    if values.len() != correspondence.len() {
        return Err(Error::InvalidInput(
            "class correspondence is not one-to-one".into(),
        ));
    }
    let absent_x: Vec<u32> = keys.symmetric_difference(&lx).copied().collect();
    let absent_y: Vec<u32> = values.symmetric_difference(&ly).copied().collect();
    if !absent_x.is_empty() || !absent_y.is_empty() {
        return Err(Error::MissingLabels(format!(
            "correspondence and data disagree; source labels {absent_x:?}, destination labels {absent_y:?}"
        )));
    }
    if correspondence.len() < 2 {
        return Err(Error::InsufficientData(
            "cluster-center Procrustes needs at least 2 classes".into(),
        ));
    }
    let cx = x.class_centroids();
    let cy = y.class_centroids();
    let k = correspondence.len();
    let d = x.dim();
    let mut mx = DMatrix::zeros(k, d);
    let mut my = DMatrix::zeros(k, d);
    for (row, (a, b)) in correspondence.iter().enumerate() {
        mx.row_mut(row).copy_from(&cx[a].transpose());
        my.row_mut(row).copy_from(&cy[b].transpose());
    }
    let rotation = procrustes_matrices(&mx, &my, proper)?;
    let mut r = AlignmentResult::new("procrustes-cluster", rotation);
    r.underdetermined = k < d;
    if r.underdetermined {
        log::warn!(
            "cluster-centre Procrustes from {k} classes in dimension {d} is underdetermined"
        );
    }
    r.config = json!({ "classes": k, "proper_rotation": proper });
    Ok(r)
}

/// Procrustes with the true pairing. An upper bound unavailable to a real attacker.
pub fn oracle_procrustes(
    paired_target: &EmbeddingSet,
    attack: &EmbeddingSet,
) -> Result<AlignmentResult> {
    let rotation = orthogonal_procrustes(paired_target, attack)?;
    let mut r = AlignmentResult::new("oracle", rotation);
    r.oracle = true;
    r.underdetermined = paired_target.len() < paired_target.dim();
    r.config = json!({ "pairs": paired_target.len() });
    Ok(r)
}

pub fn identity_alignment(dim: usize) -> Result<AlignmentResult> {
    Ok(AlignmentResult::new("identity", Rotation::identity(dim)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use crate::rotation::random_rotation;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngSeed(seed).rng();
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn set(m: DMatrix<f64>, labels: impl Fn(usize) -> Option<u32>) -> EmbeddingSet {
        let n = m.nrows();
        EmbeddingSet::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..n).map(labels).collect(),
            m,
            None,
        )
        .unwrap()
    }

    #[test]
    fn self_alignment_is_identity() {
        let x = set(gaussian(40, 6, 1), |_| None);
        let w = orthogonal_procrustes(&x, &x).unwrap();
        assert!((w.matrix() - DMatrix::<f64>::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn planar_quarter_turn() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let w = procrustes_matrices(&x, &(&x * &q), false).unwrap();
        assert!((w.matrix() - q).norm() < 1e-12);
    }

    #[test]
    fn recovers_random_rotation() {
        let q = random_rotation(16, RngSeed(2)).unwrap();
        let x = gaussian(300, 16, 3);
        let y = &x * q.matrix();
        let w = procrustes_matrices(&x, &y, false).unwrap();
        assert!((w.matrix() - q.matrix()).norm() < 1e-8);
    }

    #[test]
    fn scale_invariant() {
        let x = gaussian(50, 5, 4);
        let y = gaussian(50, 5, 5);
        let a = procrustes_matrices(&x, &y, false).unwrap();
        let b = procrustes_matrices(&(&x * 3.7), &(&y * 3.7), false).unwrap();
        assert!((a.matrix() - b.matrix()).norm() < 1e-10);
    }

    #[test]
    fn proper_flag_forces_positive_det() {
        // a pure reflection between the two sets
        let x = gaussian(30, 3, 6);
        let mut refl = DMatrix::identity(3, 3);
        refl[(0, 0)] = -1.0;
        let y = &x * refl;
        let free = procrustes_matrices(&x, &y, false).unwrap();
        assert_abs_diff_eq!(free.det(), -1.0, epsilon = 1e-9);
        let proper = procrustes_matrices(&x, &y, true).unwrap();
        assert_abs_diff_eq!(proper.det(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn cluster_recovers_rotation_with_spanning_centroids() {
        let q = random_rotation(16, RngSeed(7)).unwrap();
        let x = set(
            gaussian(400, 16, 8)
                + DMatrix::from_fn(400, 16, |i, j| if j == i % 16 { 10.0 } else { 0.0 }),
            |i| Some((i % 16) as u32),
        );
        let y = x.with_vectors(x.vectors() * q.matrix()).unwrap();
        let r = cluster_center_procrustes(&x, &y, &identity_correspondence(&x), false).unwrap();
        assert!((r.rotation.matrix() - q.matrix()).norm() < 1e-6);
        assert!(!r.underdetermined);
        let same = cluster_center_procrustes(&x, &x, &identity_correspondence(&x), false).unwrap();
        assert!((same.rotation.matrix() - DMatrix::<f64>::identity(16, 16)).norm() < 1e-8);
    }

    #[test]
    fn cluster_flags_underdetermined_and_missing_labels() {
        let x = set(gaussian(100, 32, 9), |i| Some((i % 10) as u32));
        let r = cluster_center_procrustes(&x, &x, &identity_correspondence(&x), false).unwrap();
        assert!(r.underdetermined);

        let unl = set(gaussian(20, 4, 1), |_| None);
        let err = cluster_center_procrustes(&unl, &unl, &BTreeMap::new(), false).unwrap_err();
        assert!(matches!(err, Error::MissingLabels(_)));

        let y = set(gaussian(100, 32, 10), |i| Some((i % 9) as u32));
        let err =
            cluster_center_procrustes(&x, &y, &identity_correspondence(&x), false).unwrap_err();
        assert!(err.to_string().contains('9'), "{err}");
    }

    #[test]
    fn oracle_is_tagged() {
        let x = set(gaussian(1, 4, 2), |_| None);
        let r = oracle_procrustes(&x, &x).unwrap();
        assert!(r.oracle && r.underdetermined);
        assert!(r.rotation.orthogonality_error() <= 1e-10);
    }
}
