//! Offline index construction and online querying.
//!
//! Build: sample a subset, compute its dissimilarities, project them onto a
//! q-metric, train the embedding on the projected targets, embed the whole
//! dataset and index the embedded points with a q-pruning VP-tree.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::data::{feature_matrix, features, Dataset, DenseData};
use crate::embedding::{embed_all, train, MlpParams, Mode, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::formats::{self, encode_model, read_model};
use crate::matrix::DistanceMatrix;
use crate::projection::{project, ProjectionConfig};
use crate::qcore::{dissimilarity, euclidean, DissimilarityKind, Point, QExponent, SparseSet};
use crate::vptree::{Pruning, VantagePolicy, VpTree};

pub const QIDX_MAGIC: &[u8; 4] = b"QIDX";
pub const QIDX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub kind: DissimilarityKind,
    pub q: QExponent,
    pub projection: ProjectionConfig,
    /// The embedding dimension `s` is `training.output_dim`.
    pub training: TrainConfig,
    pub subset_size: usize,
    pub seed: u64,
    /// Exponent used for tree pruning; defaults to `q`.
    pub prune_q: Option<QExponent>,
    pub vantage: VantagePolicy,
}

impl IndexConfig {
    /// Exact projection of a subset of `subset_size` points and the desk
    /// training preset, all at exponent `q`.
    pub fn new(kind: DissimilarityKind, q: QExponent, subset_size: usize, seed: u64) -> IndexConfig {
        let mut training = TrainConfig::desk(q);
        training.seed = seed;
        IndexConfig {
            kind,
            q,
            projection: ProjectionConfig::exact(q),
            training,
            subset_size,
            seed,
            prune_q: None,
            vantage: VantagePolicy::Random,
        }
    }

    pub fn prune_exponent(&self) -> QExponent {
        self.prune_q.unwrap_or(self.q)
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.q.validate()?;
        if self.projection.q != self.q || self.training.q != self.q {
            return Err(Error::config(format!(
                "projection (q = {}) and training (q = {}) must use the index exponent q = {}",
                self.projection.q, self.training.q, self.q
            )));
        }
        if self.subset_size < 2 {
            return Err(Error::config("projection subset needs at least 2 points"));
        }
        if self.subset_size > dataset_len {
            return Err(Error::config(format!(
                "projection subset of {} exceeds the dataset size {dataset_len}",
                self.subset_size
            )));
        }
        if let Some(q) = self.prune_q {
            q.validate()?;
        }
        self.training.validate()
    }
}

/// Deployable artifact: model, embedded dataset, tree and the original
/// points for exact reranking.
#[derive(Clone, Debug, PartialEq)]
pub struct Index {
    pub config: IndexConfig,
    pub params: MlpParams,
    pub feature_dim: usize,
    pub embedded: DenseData,
    pub tree: VpTree,
    pub dataset: Dataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
    pub comparisons: usize,
    pub preprocess_time: Duration,
    pub search_time: Duration,
}

pub fn build_index(dataset: &Dataset, config: &IndexConfig) -> Result<Index> {
    build_index_reported(dataset, config).map(|(index, _)| index)
}

/// As [`build_index`], also returning the training trajectory.
pub fn build_index_reported(dataset: &Dataset, config: &IndexConfig) -> Result<(Index, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::config("cannot index an empty dataset"));
    }
    config.validate(dataset.len())?;
    if config.kind.is_sparse() != dataset.is_sparse() {
        return Err(Error::RepresentationMismatch {
            kind: config.kind,
            found: if dataset.is_sparse() { "sparse" } else { "dense" },
        });
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut subset = sample(&mut rng, n, config.subset_size).into_vec();
    subset.sort_unstable();
    let sub = dataset.select(&subset);

    let d = DistanceMatrix::from_dataset(&sub, config.kind)?;
    let targets = project(&d, &config.projection)?;

    let feature_dim = dataset.feature_dim();
    let sub_features = feature_matrix(&sub, feature_dim)?;
    let (params, report) = train(&sub_features, &targets, &config.training)?;

    let all_features = feature_matrix(dataset, feature_dim)?;
    let embedded = embed_all(&params, &all_features)?;
    let ids: Vec<usize> = (0..n).collect();
    let tree = VpTree::build(
        &ids,
        |i, j| euclidean(embedded.row(i), embedded.row(j)),
        config.prune_exponent(),
        config.seed,
        config.vantage,
    )?;
    Ok((
        Index {
            config: config.clone(),
            params,
            feature_dim,
            embedded,
            tree,
            dataset: dataset.clone(),
        },
        report,
    ))
}

impl Index {
    pub fn len(&self) -> usize {
        self.embedded.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_query(&self, query: Point<'_>) -> Result<()> {
        match (query, &self.dataset) {
            (Point::Dense(v), Dataset::Dense(d)) if v.len() != d.dim() => Err(Error::DimensionMismatch {
                expected: d.dim(),
                found: v.len(),
            }),
            (Point::Dense(_), Dataset::Sparse(_)) => Err(Error::RepresentationMismatch {
                kind: self.config.kind,
                found: "dense",
            }),
            (Point::Sparse(_), Dataset::Dense(_)) => Err(Error::RepresentationMismatch {
                kind: self.config.kind,
                found: "sparse",
            }),
            _ => Ok(()),
        }
    }

    /// Embeds the query and searches the tree with Euclidean distances in
    /// embedding space.
    pub fn query(&self, query: Point<'_>, k: usize) -> Result<QueryResult> {
        self.query_with(query, k, Pruning::Tree)
    }

    pub fn query_with(&self, query: Point<'_>, k: usize, pruning: Pruning) -> Result<QueryResult> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        self.check_query(query)?;
        let t0 = Instant::now();
        let x = features(query, self.feature_dim)?;
        let e = self.params.forward(&x, Mode::Infer)?;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query embedding".into()));
        }
        let t1 = Instant::now();
        let out = self
            .tree
            .search_knn_with(|i| euclidean(&e, self.embedded.row(i)), k, pruning)?;
        let t2 = Instant::now();
        Ok(QueryResult {
            ids: out.ids(),
            distances: out.distances(),
            comparisons: out.comparisons,
            preprocess_time: t1 - t0,
            search_time: t2 - t1,
        })
    }

    /// Broad search for `big_k` candidates in embedding space, then exact
    /// reranking of those candidates under the original dissimilarity.
    /// The reranking evaluations are added to `comparisons`.
    pub fn two_stage_query(&self, query: Point<'_>, k: usize, big_k: usize) -> Result<QueryResult> {
        self.two_stage_query_with(query, k, big_k, Pruning::Tree)
    }

    /// [`Index::two_stage_query`] with an explicit pruning mode for the
    /// broad search. With [`Pruning::Off`] the candidates are the exact
    /// top `big_k` in embedding space, so they are nested in `big_k`.
    pub fn two_stage_query_with(&self, query: Point<'_>, k: usize, big_k: usize, pruning: Pruning) -> Result<QueryResult> {
        if big_k < k {
            return Err(Error::config(format!("K = {big_k} must be at least k = {k}")));
        }
        let broad = self.query_with(query, big_k, pruning)?;
        let t0 = Instant::now();
        let mut scored = Vec::with_capacity(broad.ids.len());
        for &id in &broad.ids {
            scored.push((id, dissimilarity(self.dataset.point(id), query, self.config.kind)?));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        let rerank = t0.elapsed();
        Ok(QueryResult {
            ids: scored.iter().map(|s| s.0).collect(),
            distances: scored.iter().map(|s| s.1).collect(),
            comparisons: broad.comparisons + broad.ids.len(),
            preprocess_time: broad.preprocess_time,
            search_time: broad.search_time + rerank,
        })
    }
}

/// `QIDX`, version, config JSON block, QMLP block, u32 feature dim,
/// embedded matrix (u32 rows, u32 s, f64 row-major), tree records, then
/// the dataset: u8 0 dense (u32 rows, u32 dim, f64 row-major) or 1 sparse
/// (u32 count, per row u32 length and ids).
pub fn encode_index(index: &Index) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(QIDX_MAGIC);
    w.u32(QIDX_VERSION);
    let json = serde_json::to_vec(&index.config).map_err(|e| Error::format(e.to_string()))?;
    w.block(&json);
    w.block(&encode_model(&index.params)?);
    w.len_u32(index.feature_dim)?;
    w.len_u32(index.embedded.rows())?;
    w.len_u32(index.embedded.dim())?;
    for &v in index.embedded.values() {
        w.f64(v);
    }
    index.tree.write(&mut w)?;
    match &index.dataset {
        Dataset::Dense(d) => {
            w.u8(0);
            w.len_u32(d.rows())?;
            w.len_u32(d.dim())?;
            for &v in d.values() {
                w.f64(v);
            }
        }
        Dataset::Sparse(sets) => {
            w.u8(1);
            w.len_u32(sets.len())?;
            for s in sets {
                w.len_u32(s.len())?;
                for &id in s.ids() {
                    w.u32(id);
                }
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_index(bytes: &[u8]) -> Result<Index> {
    let mut r = Reader::new(bytes);
    r.magic(QIDX_MAGIC)?;
    let version = r.u32()?;
    if version != QIDX_VERSION {
        return Err(Error::format(format!(
            "index version {version}, expected {QIDX_VERSION}"
        )));
    }
    let config: IndexConfig =
        serde_json::from_slice(r.block()?).map_err(|e| Error::format(format!("index config: {e}")))?;
    let model_bytes = r.block()?;
    let mut mr = Reader::new(model_bytes);
    let params = read_model(&mut mr)?;
    mr.finish()?;
    let feature_dim = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let s = r.u32()? as usize;
    let total = rows.checked_mul(s).ok_or_else(|| Error::format("declared size overflows"))?;
    r.expect_at_least(total, 8)?;
    let values: Vec<f64> = (0..total).map(|_| r.f64()).collect::<Result<_>>()?;
    let embedded = DenseData::new(rows, s, values)?;
    let tree = VpTree::read(&mut r)?;
    let dataset = match r.u8()? {
        0 => {
            let n = r.u32()? as usize;
            let dim = r.u32()? as usize;
            let total = n.checked_mul(dim).ok_or_else(|| Error::format("declared size overflows"))?;
            r.expect_at_least(total, 8)?;
            let values: Vec<f64> = (0..total).map(|_| r.f64()).collect::<Result<_>>()?;
            Dataset::Dense(DenseData::new(n, dim, values)?)
        }
        1 => {
            let n = r.u32()? as usize;
            r.expect_at_least(n, 4)?;
            let mut sets = Vec::with_capacity(n);
            for _ in 0..n {
                let len = r.u32()? as usize;
                r.expect_at_least(len, 4)?;
                let ids: Vec<u32> = (0..len).map(|_| r.u32()).collect::<Result<_>>()?;
                sets.push(SparseSet::new(ids)?);
            }
            Dataset::Sparse(sets)
        }
        tag => return Err(Error::format(format!("unknown dataset tag {tag}"))),
    };
    r.finish()?;

    let consistent = dataset.len() == rows
        && tree.len() == rows
        && tree.nodes().iter().all(|n| n.vantage < rows)
        && params.output_dim() == s
        && params.input_dim() == feature_dim
        && tree.q() == config.prune_exponent();
    if !consistent {
        return Err(Error::format("index sections disagree on sizes or exponent"));
    }
    Ok(Index {
        config,
        params,
        feature_dim,
        embedded,
        tree,
        dataset,
    })
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<()> {
    formats::write_bytes(path.as_ref(), &encode_index(index)?)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index> {
    decode_index(&formats::read_bytes(path.as_ref())?)
}
