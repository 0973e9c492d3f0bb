//! Nearest-neighbor search in q-metric spaces.
//!
//! Arbitrary dissimilarities are projected onto q-metrics through q-norm
//! shortest paths, a network is trained so that Euclidean distances between
//! its outputs approximate the projected distances, and queries are answered
//! with a vantage-point tree that prunes with the q-triangle inequality.

mod codec;
pub mod data;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod matrix;
pub mod pipeline;
pub mod projection;
pub mod qcore;
pub mod vptree;

pub use data::{Dataset, DenseData};
pub use error::{Error, Result};
pub use matrix::DistanceMatrix;
pub use pipeline::{build_index, load_index, save_index, Index, IndexConfig, QueryResult};
pub use projection::{ProjectedMatrix, ProjectionConfig, ProjectionMode};
pub use qcore::{DissimilarityKind, Point, QExponent, SparseSet};
pub use vptree::{VantagePolicy, VpTree};
