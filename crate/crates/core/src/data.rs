//! In-memory point collections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{dissimilarity, DissimilarityKind, Point, SparseSet};

/// Row-major matrix of dense points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseData {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl DenseData {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::format(format!("non-finite coordinate {bad}")));
        }
        Ok(DenseData { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        DenseData::new(rows.len(), dim, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn select(&self, indices: &[usize]) -> DenseData {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DenseData {
            rows: indices.len(),
            dim: self.dim,
            values,
        }
    }
}

/// A dataset in one of the two supported representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dataset {
    Dense(DenseData),
    Sparse(Vec<SparseSet>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Dense(d) => d.rows(),
            Dataset::Sparse(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Dataset::Sparse(_))
    }

    pub fn point(&self, i: usize) -> Point<'_> {
        match self {
            Dataset::Dense(d) => Point::Dense(d.row(i)),
            Dataset::Sparse(s) => Point::Sparse(&s[i]),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        match self {
            Dataset::Dense(d) => Dataset::Dense(d.select(indices)),
            Dataset::Sparse(s) => Dataset::Sparse(indices.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    /// Number of input features seen by the embedding network: the ambient
    /// dimension for dense data, one past the largest id for sparse sets.
    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Dense(d) => d.dim(),
            Dataset::Sparse(s) => s
                .iter()
                .filter_map(|set| set.ids().last())
                .max()
                .map_or(1, |&m| m as usize + 1),
        }
    }

    pub fn dissimilarity(&self, i: usize, query: Point<'_>, kind: DissimilarityKind) -> Result<f64> {
        dissimilarity(self.point(i), query, kind)
    }
}

/// Dense network input for a point: the point itself, or the 0/1 indicator
/// vector of a sparse set over `dim` features (ids at or beyond `dim` are
/// dropped).
pub fn features(point: Point<'_>, dim: usize) -> Result<Vec<f64>> {
    match point {
        Point::Dense(v) => {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            Ok(v.to_vec())
        }
        Point::Sparse(set) => {
            let mut out = vec![0.0; dim];
            for &id in set.ids() {
                if let Some(slot) = out.get_mut(id as usize) {
                    *slot = 1.0;
                }
            }
            Ok(out)
        }
    }
}

/// Dense feature matrix for a whole dataset.
pub fn feature_matrix(data: &Dataset, dim: usize) -> Result<DenseData> {
    match data {
        Dataset::Dense(d) if d.dim() == dim => Ok(d.clone()),
        _ => {
            let mut values = Vec::with_capacity(data.len() * dim);
            for i in 0..data.len() {
                values.extend(features(data.point(i), dim)?);
            }
            DenseData::new(data.len(), dim, values)
        }
    }
}
