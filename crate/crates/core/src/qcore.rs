//! Dissimilarity kernels and q-exponent arithmetic.
//!
//! Multi-hop path arithmetic for a finite `q` is carried out on *powered*
//! values `(d / scale)^q`: the path length of a hop sequence is then just the
//! sum of its powered edges, and the root is taken once at the end. For
//! `q = ∞` the powered value is the (scaled) distance itself and sums become
//! maxima.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order of a q-metric: a finite real `>= 1` or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum QExponent {
    Finite(f64),
    Infinity,
}

impl QExponent {
    pub const ONE: QExponent = QExponent::Finite(1.0);

    pub fn finite(q: f64) -> Result<Self> {
        let q = QExponent::Finite(q);
        q.validate()?;
        Ok(q)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            QExponent::Finite(q) if q.is_finite() && q >= 1.0 => Ok(()),
            QExponent::Finite(q) => Err(Error::InvalidExponent(q)),
            QExponent::Infinity => Ok(()),
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, QExponent::Infinity)
    }

    /// The exponent as a float; `f64::INFINITY` for [`QExponent::Infinity`].
    pub fn value(self) -> f64 {
        match self {
            QExponent::Finite(q) => q,
            QExponent::Infinity => f64::INFINITY,
        }
    }

    /// Lifts a nonnegative value into the powered domain.
    #[inline]
    pub fn power(self, x: f64) -> f64 {
        match self {
            QExponent::Finite(q) if q == 1.0 => x,
            QExponent::Finite(q) if q == 2.0 => x * x,
            QExponent::Finite(q) => x.powf(q),
            QExponent::Infinity => x,
        }
    }

    /// Inverse of [`QExponent::power`].
    #[inline]
    pub fn root(self, p: f64) -> f64 {
        match self {
            QExponent::Finite(q) if q == 1.0 => p,
            QExponent::Finite(q) if q == 2.0 => p.sqrt(),
            QExponent::Finite(q) => p.powf(q.recip()),
            QExponent::Infinity => p,
        }
    }

    /// Concatenates two powered path lengths.
    #[inline]
    pub fn combine(self, a: f64, b: f64) -> f64 {
        q_combine(a, b, self)
    }
}

impl PartialOrd for QExponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for QExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QExponent::Finite(q) => write!(f, "{q}"),
            QExponent::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for QExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(QExponent::Infinity),
            other => {
                let q: f64 = other
                    .parse()
                    .map_err(|_| Error::config(format!("cannot parse q exponent {s:?}")))?;
                if q == f64::INFINITY {
                    return Ok(QExponent::Infinity);
                }
                QExponent::finite(q)
            }
        }
    }
}

/// Maps distances into the powered domain after dividing by a positive
/// scale, keeping `q`-th powers of large distances inside `f64` range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledPower {
    pub q: QExponent,
    pub scale: f64,
}

impl ScaledPower {
    /// A non-positive or non-finite scale falls back to 1. Exponents that
    /// cannot overflow (`q = 1` and `q = ∞`) are never rescaled, so their
    /// arithmetic stays exact on the original values.
    pub fn new(q: QExponent, scale: f64) -> Self {
        let scale = if Self::overflows(q) && scale.is_finite() && scale > 0.0 {
            scale
        } else {
            1.0
        };
        ScaledPower { q, scale }
    }

    pub fn overflows(q: QExponent) -> bool {
        matches!(q, QExponent::Finite(v) if v != 1.0)
    }

    #[inline]
    pub fn lift(&self, d: f64) -> f64 {
        self.q.power(d / self.scale)
    }

    #[inline]
    pub fn lower(&self, p: f64) -> f64 {
        self.q.root(p) * self.scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DissimilarityKind {
    Euclidean,
    Manhattan,
    Cosine,
    Correlation,
    Jaccard,
}

impl DissimilarityKind {
    pub fn is_sparse(self) -> bool {
        matches!(self, DissimilarityKind::Jaccard)
    }

    pub fn name(self) -> &'static str {
        match self {
            DissimilarityKind::Euclidean => "euclidean",
            DissimilarityKind::Manhattan => "manhattan",
            DissimilarityKind::Cosine => "cosine",
            DissimilarityKind::Correlation => "correlation",
            DissimilarityKind::Jaccard => "jaccard",
        }
    }
}

impl fmt::Display for DissimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DissimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => DissimilarityKind::Euclidean,
            "manhattan" | "l1" => DissimilarityKind::Manhattan,
            "cosine" => DissimilarityKind::Cosine,
            "correlation" => DissimilarityKind::Correlation,
            "jaccard" => DissimilarityKind::Jaccard,
            _ => return Err(Error::config(format!("unknown dissimilarity {s:?}"))),
        })
    }
}

/// Set of item ids, strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SparseSet(Vec<u32>);

impl SparseSet {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format("sparse set ids must be strictly increasing"));
        }
        Ok(SparseSet(ids))
    }

    pub fn from_unsorted(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SparseSet(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Borrowed view of a single point.
#[derive(Clone, Copy, Debug)]
pub enum Point<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseSet),
}

pub fn dissimilarity(a: Point<'_>, b: Point<'_>, kind: DissimilarityKind) -> Result<f64> {
    match (kind, a, b) {
        (DissimilarityKind::Jaccard, Point::Sparse(a), Point::Sparse(b)) => Ok(jaccard(a, b)),
        (DissimilarityKind::Jaccard, _, _) => Err(Error::RepresentationMismatch {
            kind,
            found: "dense",
        }),
        (_, Point::Dense(a), Point::Dense(b)) => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    found: b.len(),
                });
            }
            match kind {
                DissimilarityKind::Euclidean => Ok(euclidean(a, b)),
                DissimilarityKind::Manhattan => Ok(manhattan(a, b)),
                DissimilarityKind::Cosine => cosine(a, b),
                DissimilarityKind::Correlation => correlation(a, b),
                DissimilarityKind::Jaccard => unreachable!(),
            }
        }
        (_, Point::Sparse(_), _) | (_, _, Point::Sparse(_)) => Err(Error::RepresentationMismatch {
            kind,
            found: "sparse",
        }),
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// sqrt(na * nb) rather than sqrt(na) * sqrt(nb) so that d(a, a) is exactly 0.
fn cosine_of(a: &[f64], b: &[f64], zero: Error) -> Result<f64> {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return Err(zero);
    }
    Ok((1.0 - dot(a, b) / (na * nb).sqrt()).max(0.0))
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_of(a, b, Error::ZeroNorm)
}

fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    let center = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - mean).collect::<Vec<_>>()
    };
    if a.is_empty() {
        return Err(Error::ConstantVector);
    }
    cosine_of(&center(a), &center(b), Error::ConstantVector)
}

fn jaccard(a: &SparseSet, b: &SparseSet) -> f64 {
    let (a, b) = (a.ids(), b.ids());
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - common;
    1.0 - common as f64 / union as f64
}

/// q-norm of a sequence of edge dissimilarities (maximum for `q = ∞`).
pub fn q_path_length(edges: &[f64], q: QExponent) -> Result<f64> {
    if edges.is_empty() {
        return Err(Error::EmptyPath);
    }
    if let Some(bad) = edges.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::InvalidMatrix(format!("edge dissimilarity {bad} is not a finite nonnegative value")));
    }
    let max = edges.iter().copied().fold(0.0, f64::max);
    if edges.len() == 1 || q.is_infinite() || max == 0.0 {
        return Ok(if edges.len() == 1 { edges[0] } else { max });
    }
    let scaled = ScaledPower::new(q, max);
    let total: f64 = edges.iter().map(|&d| scaled.lift(d)).sum();
    Ok(scaled.lower(total))
}

/// Semiring addition on powered lengths: `+` for finite q, `max` for infinity.
#[inline]
pub fn q_combine(a: f64, b: f64, q: QExponent) -> f64 {
    match q {
        QExponent::Finite(_) => a + b,
        QExponent::Infinity => a.max(b),
    }
}

/// Amount by which `d(x,y)` breaks the q-triangle inequality through `z`;
/// zero when the inequality holds.
pub fn q_triangle_violation(dxy: f64, dxz: f64, dyz: f64, q: QExponent) -> f64 {
    match q {
        QExponent::Infinity => (dxy - dxz.max(dyz)).max(0.0),
        QExponent::Finite(_) => (q.power(dxy) - q.power(dxz) - q.power(dyz)).max(0.0),
    }
}
