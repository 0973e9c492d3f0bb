//! Canonical q-metric projection: all-pairs shortest paths where a path's
//! length is the q-norm of its edge dissimilarities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;
use crate::qcore::{q_triangle_violation, QExponent, ScaledPower};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProjectionMode {
    Exact,
    /// Relaxation restricted to each node's `knn` nearest neighbors, repeated
    /// for `iterations` sweeps.
    Approximate { knn: usize, iterations: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scale {
    /// Largest entry of the input matrix (1 when the matrix is all zeros).
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub q: QExponent,
    pub mode: ProjectionMode,
    pub scale: Scale,
}

impl ProjectionConfig {
    pub fn exact(q: QExponent) -> Self {
        ProjectionConfig {
            q,
            mode: ProjectionMode::Exact,
            scale: Scale::Auto,
        }
    }

    pub fn approximate(q: QExponent, knn: usize, iterations: usize) -> Self {
        ProjectionConfig {
            q,
            mode: ProjectionMode::Approximate { knn, iterations },
            scale: Scale::Auto,
        }
    }

    fn resolve_scale(&self, d: &DistanceMatrix) -> Result<f64> {
        match self.scale {
            Scale::Auto => {
                let max = d.max_entry();
                Ok(if max > 0.0 { max } else { 1.0 })
            }
            Scale::Fixed(s) if s.is_finite() && s > 0.0 => Ok(s),
            Scale::Fixed(s) => Err(Error::config(format!("projection scale {s} must be positive"))),
        }
    }
}

/// A distance matrix known to satisfy the q-triangle inequality for `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedMatrix {
    matrix: DistanceMatrix,
    q: QExponent,
    scale_used: f64,
}

impl ProjectedMatrix {
    /// Tags an existing matrix with `q` without checking the inequality
    /// (e.g. a matrix read back from disk).
    pub fn from_tagged(matrix: DistanceMatrix, q: QExponent) -> Self {
        let max = matrix.max_entry();
        ProjectedMatrix {
            matrix,
            q,
            scale_used: if max > 0.0 { max } else { 1.0 },
        }
    }

    pub fn matrix(&self) -> &DistanceMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DistanceMatrix {
        self.matrix
    }

    pub fn q(&self) -> QExponent {
        self.q
    }

    pub fn scale_used(&self) -> f64 {
        self.scale_used
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Precomputes what [`extend_with_query`] needs so that many queries can
    /// be extended against the same matrix.
    pub fn query_extension(&self) -> QueryExtension<'_> {
        QueryExtension::new(self, self.scale_used)
    }
}

pub fn project(d: &DistanceMatrix, config: &ProjectionConfig) -> Result<ProjectedMatrix> {
    config.q.validate()?;
    match config.mode {
        ProjectionMode::Exact => {
            let scale = config.resolve_scale(d)?;
            Ok(exact_with_scale(d, config.q, scale))
        }
        ProjectionMode::Approximate { .. } => canonical_approx(d, config),
    }
}

pub fn canonical_exact(d: &DistanceMatrix, q: QExponent) -> Result<ProjectedMatrix> {
    project(d, &ProjectionConfig::exact(q))
}

fn powered_matrix(d: &DistanceMatrix, power: ScaledPower) -> Vec<f64> {
    d.entries().par_iter().map(|&v| power.lift(v)).collect()
}

/// Roots the powered matrix, clamps each entry by the one-hop edge and
/// symmetrizes by taking the smaller of the two directions.
fn finish(d: &DistanceMatrix, powered: &[f64], power: ScaledPower, q: QExponent) -> ProjectedMatrix {
    let n = d.n();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let p = powered[i * n + j].min(powered[j * n + i]);
            let v = power.lower(p).min(d.get(i, j));
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    ProjectedMatrix {
        matrix: DistanceMatrix::from_parts_unchecked(n, out),
        q,
        scale_used: power.scale,
    }
}

fn exact_with_scale(d: &DistanceMatrix, q: QExponent, scale: f64) -> ProjectedMatrix {
    let n = d.n();
    let power = ScaledPower::new(q, scale);
    let weights = powered_matrix(d, power);
    // One dense single-source run per source; rows are disjoint.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|source| shortest_from(&weights, n, source, q))
        .collect();
    let powered: Vec<f64> = rows.into_iter().flatten().collect();
    finish(d, &powered, power, q)
}

/// Dijkstra over a complete graph with powered weights, using `q_combine`
/// as path concatenation. The linear scan for the closest unsettled node is
/// optimal for dense graphs.
fn shortest_from(weights: &[f64], n: usize, source: usize, q: QExponent) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for (v, (&dv, &done)) in dist.iter().zip(&settled).enumerate() {
            if !done && dv < best_dist {
                best = v;
                best_dist = dv;
            }
        }
        if best == usize::MAX {
            break;
        }
        settled[best] = true;
        let row = &weights[best * n..(best + 1) * n];
        for ((dv, &w), &done) in dist.iter_mut().zip(row).zip(&settled) {
            if !done {
                let candidate = q.combine(best_dist, w);
                if candidate < *dv {
                    *dv = candidate;
                }
            }
        }
    }
    dist
}

/// Nearest neighbors of every node under the original dissimilarities,
/// ties broken by lower index.
fn neighborhoods(d: &DistanceMatrix, k: usize) -> Vec<Vec<usize>> {
    let n = d.n();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect()
}

pub fn canonical_approx(d: &DistanceMatrix, config: &ProjectionConfig) -> Result<ProjectedMatrix> {
    config.q.validate()?;
    let ProjectionMode::Approximate { knn, iterations } = config.mode else {
        return Err(Error::config("canonical_approx requires approximate mode"));
    };
    let n = d.n();
    if knn == 0 || knn >= n {
        return Err(Error::config(format!(
            "knn must lie in [1, {}) for {n} points, got {knn}",
            n
        )));
    }
    let q = config.q;
    let power = ScaledPower::new(q, config.resolve_scale(d)?);
    let nbrs = neighborhoods(d, knn);
    let mut w = powered_matrix(d, power);
    for _ in 0..iterations {
        let prev = &w;
        let mut next: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut row = prev[i * n..(i + 1) * n].to_vec();
                for &j in &nbrs[i] {
                    let wij = prev[i * n + j];
                    let via = &prev[j * n..(j + 1) * n];
                    for (slot, &wjt) in row.iter_mut().zip(via) {
                        let candidate = q.combine(wij, wjt);
                        if candidate < *slot {
                            *slot = candidate;
                        }
                    }
                }
                row
            })
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = next[i * n + j].min(next[j * n + i]);
                next[i * n + j] = m;
                next[j * n + i] = m;
            }
        }
        w = next;
    }
    Ok(finish(d, &w, power, q))
}

/// Projected distances from a query to every dataset point, given the
/// query's original dissimilarities. Implements
/// `E(o, x)^q = min_u d(o, u)^q ⊕ D_q(u, x)^q`, which is exact because a
/// shortest path from the query enters the dataset once and the in-dataset
/// remainder is already optimal.
pub struct QueryExtension<'a> {
    projected: &'a ProjectedMatrix,
    power: ScaledPower,
    powered: Vec<f64>,
}

impl<'a> QueryExtension<'a> {
    fn new(projected: &'a ProjectedMatrix, scale: f64) -> Self {
        let power = ScaledPower::new(projected.q, scale);
        QueryExtension {
            projected,
            power,
            powered: powered_matrix(&projected.matrix, power),
        }
    }

    pub fn extend(&self, query_dissims: &[f64]) -> Result<Vec<f64>> {
        let n = self.projected.n();
        if query_dissims.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: query_dissims.len(),
            });
        }
        if let Some(bad) = query_dissims.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidMatrix(format!(
                "query dissimilarity {bad} is not a finite nonnegative value"
            )));
        }
        let max_query = query_dissims.iter().copied().fold(0.0, f64::max);
        if ScaledPower::overflows(self.power.q) && max_query > self.power.scale {
            // Rescale so powered query values stay within range.
            return QueryExtension::new(self.projected, max_query).extend(query_dissims);
        }
        let q = self.projected.q;
        let lifted: Vec<f64> = query_dissims.iter().map(|&v| self.power.lift(v)).collect();
        let mut best = vec![f64::INFINITY; n];
        for (u, &pu) in lifted.iter().enumerate() {
            let row = &self.powered[u * n..(u + 1) * n];
            for (b, &w) in best.iter_mut().zip(row) {
                let c = q.combine(pu, w);
                if c < *b {
                    *b = c;
                }
            }
        }
        Ok(best
            .into_iter()
            .zip(query_dissims)
            .map(|(p, &direct)| self.power.lower(p).min(direct))
            .collect())
    }
    /// The projection of the dataset with this query added as an extra
    /// node; see [`ExtendedSpace`].
    pub fn space(&self, query_dissims: &[f64]) -> Result<ExtendedSpace<'a>> {
        Ok(ExtendedSpace {
            projected: self.projected,
            query: self.extend(query_dissims)?,
        })
    }
}

/// Dataset plus one query, projected together. A path through the query
/// can be shorter than any path inside the dataset, so dataset pairs
/// become `min(D_q(x, y), E(o, x) ⊕ E(o, y))`. Unlike the projected matrix
/// paired with [`QueryExtension::extend`] alone, this space satisfies the
/// q-triangle inequality across all triples, query included.
pub struct ExtendedSpace<'a> {
    projected: &'a ProjectedMatrix,
    query: Vec<f64>,
}

impl ExtendedSpace<'_> {
    pub fn query_distance(&self, i: usize) -> f64 {
        self.query[i]
    }

    pub fn query_distances(&self) -> &[f64] {
        &self.query
    }

    pub fn into_query_distances(self) -> Vec<f64> {
        self.query
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.query[i], self.query[j]);
        let through = match self.projected.q {
            QExponent::Infinity => a.max(b),
            q => {
                let top = a.max(b);
                if top == 0.0 {
                    0.0
                } else {
                    let p = ScaledPower::new(q, top);
                    p.lower(p.lift(a) + p.lift(b))
                }
            }
        };
        self.projected.get(i, j).min(through)
    }
}

pub fn extend_with_query(dq: &ProjectedMatrix, query_dissims: &[f64], q: QExponent) -> Result<Vec<f64>> {
    if q != dq.q {
        return Err(Error::config(format!(
            "query extension at q = {q} against a matrix projected at q = {}",
            dq.q
        )));
    }
    dq.query_extension().extend(query_dissims)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleViolation {
    pub i: usize,
    pub j: usize,
    /// Intermediate point.
    pub k: usize,
    pub amount: f64,
}

/// Every ordered triple `(i, j, k)` with `d(i,j)` exceeding the q-triangle
/// bound through `k` by more than `tol`.
pub fn verify_q_triangle(m: &DistanceMatrix, q: QExponent, tol: f64) -> Vec<TriangleViolation> {
    let n = m.n();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut found = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let dij = m.get(i, j);
                for k in (0..n).filter(|&k| k != i && k != j) {
                    let amount = q_triangle_violation(dij, m.get(i, k), m.get(j, k), q);
                    if amount > tol {
                        found.push(TriangleViolation { i, j, k, amount });
                    }
                }
            }
            found
        })
        .collect()
}
