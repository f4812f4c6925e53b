use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Tolerance on ‖WᵀW − I‖_F and on | |det W| − 1 |.
pub const ROTATION_TOL: f64 = 1e-6;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITERS: usize = 10_000;

/// A D×D orthogonal matrix acting on row vectors: `e ↦ e·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    matrix: DMatrix<f64>,
}

impl Rotation {
    /// Validates `matrix` against the orthogonality and determinant tolerances.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c {
            return Err(Error::InvalidRotation(format!(
                "matrix is {r}×{c}, not square"
            )));
        }
        if r < 2 {
            return Err(Error::InvalidRotation(format!(
                "dimension must be at least 2, got {r}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let err = orthogonality_error(&matrix);
        if err > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "‖WᵀW − I‖_F = {err:e} exceeds {ROTATION_TOL:e}"
            )));
        }
        let det = matrix.determinant();
        if (det.abs() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "|det| = {} is not 1",
                det.abs()
            )));
        }
        Ok(Rotation { matrix })
    }

    /// Nearest orthogonal matrix to `m` in Frobenius norm.
    pub fn project(m: &DMatrix<f64>) -> Result<Self> {
        Rotation::new(polar(m)?)
    }

    /// Keeps `m` if it is already within tolerance, otherwise re-projects.
    pub fn from_matrix_or_project(m: DMatrix<f64>) -> Result<Self> {
        if m.is_square() && orthogonality_error(&m) <= ROTATION_TOL {
            if let Ok(r) = Rotation::new(m.clone()) {
                return Ok(r);
            }
        }
        Rotation::project(&m)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Rotation::new(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn det(&self) -> f64 {
        self.matrix.determinant()
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.matrix)
    }

    pub fn transpose(&self) -> Rotation {
        Rotation {
            matrix: self.matrix.transpose(),
        }
    }

    /// `self · other`: apply `self` first, then `other`.
    pub fn compose(&self, other: &Rotation) -> Result<Rotation> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "rotation composition",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Rotation::from_matrix_or_project(&self.matrix * &other.matrix)
    }
}

pub fn orthogonality_error(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    (m.transpose() * m - DMatrix::<f64>::identity(n, n)).norm()
}

/// Orthogonal polar factor U·Vᵀ of `m`.
pub fn polar(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, _, vt) = svd(m)?;
    Ok(u * vt)
}

/// Full SVD `m = U·diag(s)·Vᵀ` with singular values in descending order.
pub fn svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to SVD"));
    }
    let s = m
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::SvdNonConvergence)?;
    let u = s.u.ok_or(Error::SvdNonConvergence)?;
    let vt = s.v_t.ok_or(Error::SvdNonConvergence)?;
    let vals = s.singular_values;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let u = u.select_columns(&order);
    let vt = vt.select_rows(&order);
    Ok((u, order.iter().map(|&i| vals[i]).collect(), vt))
}

/// Haar-distributed rotation with det = +1.
///
/// QR of a Gaussian matrix, columns sign-fixed by diag(R), last column flipped
/// when the determinant comes out negative.
pub fn random_rotation(dim: usize, seed: RngSeed) -> Result<Rotation> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!(
            "rotation dimension must be at least 2, got {dim}"
        )));
    }
    let mut rng = seed.rng();
    let a = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(dim - 1).neg_mut();
    }
    Rotation::from_matrix_or_project(q)
}

/// Every record `e_i` becomes `e_i · W`.
pub fn apply_alignment(e: &EmbeddingSet, w: &Rotation) -> Result<EmbeddingSet> {
    if e.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            context: "apply_alignment: embedding dim vs rotation dim",
            left: e.dim(),
            right: w.dim(),
        });
    }
    e.with_vectors(e.vectors() * w.matrix())
}
