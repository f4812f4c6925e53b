use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// N labelled D-dimensional vectors produced by one encoder.
///
/// Vectors are stored as the rows of an N×D matrix. The set is immutable once
/// built; operations that transform vectors return a new set carrying the same
/// ids and labels in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    user_ids: Vec<String>,
    labels: Vec<Option<u32>>,
    num_classes: Option<u32>,
    vectors: DMatrix<f64>,
}

impl EmbeddingSet {
    /// Builds a set, checking every invariant. `num_classes` declares the label
    /// range; when `None` it is inferred as one past the largest label.
    pub fn new(
        user_ids: Vec<String>,
        labels: Vec<Option<u32>>,
        vectors: DMatrix<f64>,
        num_classes: Option<u32>,
    ) -> Result<Self> {
        let (n, d) = vectors.shape();
        if d < 2 {
            return Err(Error::InvalidEmbeddingSet(format!(
                "dimension must be at least 2, got {d}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidEmbeddingSet("set has no records".into()));
        }
        if user_ids.len() != n || labels.len() != n {
            return Err(Error::InvalidEmbeddingSet(format!(
                "{n} vectors but {} user ids and {} labels",
                user_ids.len(),
                labels.len()
            )));
        }
        if let Some(i) = user_ids.iter().position(|u| u.is_empty()) {
            return Err(Error::InvalidEmbeddingSet(format!(
                "record {i} has an empty user id"
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(Error::InvalidEmbeddingSet(format!(
                "record {} has a non-finite component",
                pos % n
            )));
        }
        let max_label = labels.iter().flatten().max().copied();
        let num_classes = match (num_classes, max_label) {
            (Some(k), Some(m)) if m >= k => {
                return Err(Error::InvalidEmbeddingSet(format!(
                    "class label {m} is not below the declared class count {k}"
                )))
            }
            (Some(k), _) => Some(k),
            (None, Some(m)) => Some(m + 1),
            (None, None) => None,
        };
        Ok(EmbeddingSet {
            user_ids,
            labels,
            num_classes,
            vectors,
        })
    }

    /// Convenience constructor from `(user_id, label, vector)` triples.
    pub fn from_records<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Option<u32>, Vec<f64>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (id, label, v) in records {
            ids.push(id.into());
            labels.push(label);
            rows.push(v);
        }
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidEmbeddingSet(format!(
                "record {i} has {} components, expected {d}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let vectors = DMatrix::from_row_slice(ids.len(), d, &flat);
        Self::new(ids, labels, vectors, None)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.vectors.row(i).into_owned()
    }

    pub fn user_id(&self, i: usize) -> &str {
        &self.user_ids[i]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn num_classes(&self) -> Option<u32> {
        self.num_classes
    }

    /// True when every record carries a class label.
    pub fn is_labelled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Distinct user ids in order of first appearance.
    pub fn users(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.user_ids
            .iter()
            .filter(|u| seen.insert(u.as_str()))
            .map(String::as_str)
            .collect()
    }

    /// Same ids and labels with replacement vectors.
    pub fn with_vectors(&self, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "replacement has {} rows, set has {}",
                vectors.nrows(),
                self.len()
            )));
        }
        Self::new(
            self.user_ids.clone(),
            self.labels.clone(),
            vectors,
            self.num_classes,
        )
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "record index {bad} out of range for a set of {}",
                self.len()
            )));
        }
        let vectors = self.vectors.select_rows(indices);
        Self::new(
            indices.iter().map(|&i| self.user_ids[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            vectors,
            self.num_classes,
        )
    }

    /// Records whose user id is in `users`, original order preserved.
    pub fn select_users(&self, users: &BTreeSet<String>) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| users.contains(&self.user_ids[i]))
            .collect();
        if idx.is_empty() {
            return Err(Error::InvalidInput(
                "user selection matches no records".into(),
            ));
        }
        self.select(&idx)
    }

    /// Mean vector per class label. Unlabelled records are ignored.
    pub fn class_centroids(&self) -> BTreeMap<u32, DVector<f64>> {
        let mut sums: BTreeMap<u32, (DVector<f64>, usize)> = BTreeMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                let entry = sums
                    .entry(*c)
                    .or_insert_with(|| (DVector::zeros(self.dim()), 0));
                entry.0 += self.vectors.row(i).transpose();
                entry.1 += 1;
            }
        }
        sums.into_iter()
            .map(|(c, (s, k))| (c, s / k as f64))
            .collect()
    }

    /// Labels that occur in the set.
    pub fn label_set(&self) -> BTreeSet<u32> {
        self.labels.iter().flatten().copied().collect()
    }
}
