//! Ground truth, accuracy metrics and the benchmark runner.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::DistanceMatrix;
use crate::pipeline::{build_index, Index, IndexConfig};
use crate::projection::{canonical_exact, ProjectedMatrix};
use crate::qcore::{dissimilarity, DissimilarityKind, QExponent};
use crate::vptree::{VantagePolicy, VpTree};

/// True k nearest neighbors per query, ascending by distance with ties
/// ordered by lower id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: usize,
    pub ids: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// `(id, distance)` pairs sorted by distance then id, keeping the first `k`.
fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored
}

pub fn brute_force_knn(data: &Dataset, queries: &Dataset, k: usize, kind: DissimilarityKind) -> Result<GroundTruth> {
    if k == 0 || k > data.len() {
        return Err(Error::config(format!(
            "k = {k} must lie in 1..={} (dataset size)",
            data.len()
        )));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.point(qi);
            let scored = (0..data.len())
                .map(|i| Ok((i, dissimilarity(data.point(i), q, kind)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(top_k(scored, k))
        })
        .collect::<Result<_>>()?;
    Ok(GroundTruth {
        k,
        ids: rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect(),
        distances: rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect(),
    })
}

/// `|truth[..k] ∩ approx[..k]| / k`; a short `approx` counts missing
/// entries as misses.
pub fn recall_at_k(truth: &[usize], approx: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("recall needs k >= 1"));
    }
    if truth.len() < k {
        return Err(Error::config(format!("truth list has {} < k = {k} entries", truth.len())));
    }
    let t = &truth[..k];
    let hits = approx.iter().take(k).filter(|a| t.contains(a)).count();
    Ok(hits as f64 / k as f64)
}

fn displacement_sum(truth: &[usize], approx: &[usize], k: usize) -> Result<f64> {
    if truth.len() != k || approx.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: if truth.len() != k { truth.len() } else { approx.len() },
        });
    }
    let mut sum = 0usize;
    for (i, a) in approx.iter().enumerate() {
        let pi = truth.iter().position(|t| t == a).map_or(k + 1, |p| p + 1);
        sum += (i + 1).abs_diff(pi);
    }
    Ok(sum as f64)
}

/// `(1/k) Σ |i - π(approx_i)|` with 1-based positions and `π = k + 1` for
/// items absent from the true top-k.
pub fn rank_order_abs(truth: &[usize], approx: &[usize], k: usize) -> Result<f64> {
    Ok(displacement_sum(truth, approx, k)? / k as f64)
}

/// Displacement as a percentage of the indexed size: `Σ |i - π| · 100 / (n k)`.
pub fn rank_order_rel(truth: &[usize], approx: &[usize], k: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::config("indexed size must be positive"));
    }
    Ok(displacement_sum(truth, approx, k)? * 100.0 / (n as f64 * k as f64))
}

/// Rewrites `approx` so that returning any member of an exact-tie group of
/// the truth counts as returning the truth's own choice. `approx_dists`
/// are the true distances of the returned items. An item whose distance
/// equals the truth distance at its own position takes that truth id;
/// other tied items take the unused tied truth id nearest their position.
pub fn remap_ties(truth_ids: &[usize], truth_dists: &[f64], approx_ids: &[usize], approx_dists: &[f64]) -> Vec<usize> {
    let k = truth_ids.len().min(truth_dists.len());
    let mut used = vec![false; k];
    let mut out: Vec<Option<usize>> = vec![None; approx_ids.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        if i < k && approx_dists.get(i) == Some(&truth_dists[i]) {
            used[i] = true;
            *slot = Some(truth_ids[i]);
        }
    }
    for (i, slot) in out.iter_mut().enumerate() {
        if slot.is_some() {
            continue;
        }
        let d = approx_dists.get(i).copied().unwrap_or(f64::NAN);
        let nearest = (0..k)
            .filter(|&p| !used[p] && truth_dists[p] == d)
            .min_by_key(|&p| p.abs_diff(i));
        *slot = Some(match nearest {
            Some(p) => {
                used[p] = true;
                truth_ids[p]
            }
            None => approx_ids[i],
        });
    }
    out.into_iter().map(|o| o.expect("filled")).collect()
}

/// Seeded shuffle then split: the first `round(ratio · n)` shuffled ids
/// (at least 1, at most `n - 1`) index, the rest query.
pub fn split_dataset(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::config("splitting needs at least 2 points"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let queries = ids.split_off(cut);
    Ok((ids, queries))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Brute,
    OneStage,
    TwoStage { big_k: usize },
    /// Exact projection of the whole dataset with each query added, searched
    /// with a q-pruning tree over that space.
    ProjectedExact,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Brute => "brute".into(),
            Method::OneStage => "one-stage".into(),
            Method::TwoStage { big_k } => format!("two-stage-{big_k}"),
            Method::ProjectedExact => "projected-exact".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub method: Method,
    pub kind: DissimilarityKind,
    pub k: usize,
    pub q_sweep: Vec<QExponent>,
    /// Timed passes over the query set, after one untimed warm-up.
    pub repetitions: usize,
    /// Template for learned methods; `q` is overwritten per sweep entry.
    pub index: Option<IndexConfig>,
    pub seed: u64,
    /// Compare against the truth with exact-tie groups treated as
    /// interchangeable.
    pub tie_aware: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-query outcome kept by the runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub ids: Vec<usize>,
    pub comparisons: usize,
    pub recall: f64,
    pub rank_order_abs: f64,
    pub rank_order_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub q: String,
    pub k: usize,
    pub n: usize,
    pub queries: usize,
    pub recall: f64,
    pub rank_order_abs: Summary,
    pub rank_order_rel: Summary,
    pub comparisons: Summary,
    pub qps_excl: f64,
    pub qps_incl: f64,
    #[serde(skip)]
    pub per_query: Vec<QueryRecord>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    /// One JSON object per line.
    pub fn json_line(&self) -> String {
        serde_json::json!({
            "method": self.method,
            "q": self.q,
            "k": self.k,
            "n": self.n,
            "queries": self.queries,
            "recall": self.recall,
            "rank_order_abs": self.rank_order_abs.mean,
            "rank_order_abs_std": self.rank_order_abs.std,
            "rank_order_rel": self.rank_order_rel.mean,
            "rank_order_rel_std": self.rank_order_rel.std,
            "comparisons_mean": self.comparisons.mean,
            "comparisons_std": self.comparisons.std,
            "comparisons_max": self.comparisons.max,
            "qps_excl": self.qps_excl,
            "qps_incl": self.qps_incl,
            "config": self.config,
        })
        .to_string()
    }

    pub fn table_header() -> &'static str {
        "method\tq\tk\tn\trecall\trank_order_abs\trank_order_rel\tcomparisons_mean\tcomparisons_std\tcomparisons_max\tqps_excl\tqps_incl"
    }

    pub fn table_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.method,
            self.q,
            self.k,
            self.n,
            self.recall,
            self.rank_order_abs.mean,
            self.rank_order_rel.mean,
            self.comparisons.mean,
            self.comparisons.std,
            self.comparisons.max,
            self.qps_excl,
            self.qps_incl
        )
    }
}

/// A searcher prepared once per configuration.
enum Prepared {
    Brute,
    Learned(Box<Index>, Option<usize>),
    Projected {
        projected: ProjectedMatrix,
        seed: u64,
    },
}

struct Answer {
    ids: Vec<usize>,
    comparisons: usize,
    preprocess: Duration,
}

impl Prepared {
    fn answer(&self, data: &Dataset, query: crate::qcore::Point<'_>, k: usize, kind: DissimilarityKind) -> Result<Answer> {
        match self {
            Prepared::Brute => {
                let scored = (0..data.len())
                    .map(|i| Ok((i, dissimilarity(data.point(i), query, kind)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Answer {
                    ids: top_k(scored, k).into_iter().map(|x| x.0).collect(),
                    comparisons: data.len(),
                    preprocess: Duration::ZERO,
                })
            }
            Prepared::Learned(index, big_k) => {
                let r = match big_k {
                    Some(big) => index.two_stage_query(query, k, (*big).max(k))?,
                    None => index.query(query, k)?,
                };
                Ok(Answer {
                    ids: r.ids,
                    comparisons: r.comparisons,
                    preprocess: r.preprocess_time,
                })
            }
            Prepared::Projected { projected, seed } => {
                // The query can shorten dataset pairs, so the tree is built
                // per query over the jointly projected space.
                let t0 = Instant::now();
                let raw = (0..data.len())
                    .map(|i| dissimilarity(data.point(i), query, kind))
                    .collect::<Result<Vec<_>>>()?;
                let space = projected.query_extension().space(&raw)?;
                let ids: Vec<usize> = (0..data.len()).collect();
                let tree = VpTree::build(&ids, |i, j| space.distance(i, j), projected.q(), *seed, VantagePolicy::Random)?;
                let preprocess = t0.elapsed();
                let out = tree.search_knn(|i| space.query_distance(i), k)?;
                Ok(Answer {
                    ids: out.ids(),
                    comparisons: out.comparisons,
                    preprocess,
                })
            }
        }
    }
}

/// Runs every query under each exponent of the sweep (once for `brute`)
/// and aggregates accuracy, comparison counts and throughput.
pub fn run_benchmark(data: &Dataset, queries: &Dataset, config: &BenchConfig) -> Result<Vec<MetricsReport>> {
    if queries.is_empty() {
        return Err(Error::config("benchmark needs at least one query"));
    }
    let truth = brute_force_knn(data, queries, config.k, config.kind)?;
    let sweep: Vec<Option<QExponent>> = match config.method {
        Method::Brute => vec![None],
        _ if config.q_sweep.is_empty() => return Err(Error::config("empty q sweep")),
        _ => config.q_sweep.iter().copied().map(Some).collect(),
    };
    let mut reports = Vec::with_capacity(sweep.len());
    for q in sweep {
        let prepared = prepare(data, config, q)?;
        // Warm-up pass, also the pass the accuracy metrics come from.
        let mut records = Vec::with_capacity(queries.len());
        for qi in 0..queries.len() {
            let ans = prepared.answer(data, queries.point(qi), config.k, config.kind)?;
            records.push(score(data, queries, qi, &truth, ans.ids, ans.comparisons, config)?);
        }
        let mut total = Duration::ZERO;
        let mut prep = Duration::ZERO;
        for _ in 0..config.repetitions {
            for qi in 0..queries.len() {
                let t0 = Instant::now();
                let ans = prepared.answer(data, queries.point(qi), config.k, config.kind)?;
                total += t0.elapsed();
                prep += ans.preprocess;
            }
        }
        let timed = (config.repetitions * queries.len()) as f64;
        let rate = |d: Duration| if d.is_zero() { f64::INFINITY } else { timed / d.as_secs_f64() };
        let (qps_incl, qps_excl) = if config.repetitions == 0 {
            (0.0, 0.0)
        } else {
            (rate(total), rate(total.saturating_sub(prep)))
        };
        let pick = |f: fn(&QueryRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        reports.push(MetricsReport {
            method: config.method.name(),
            q: q.map_or_else(|| "-".to_string(), |q| q.to_string()),
            k: config.k,
            n: data.len(),
            queries: queries.len(),
            recall: Summary::of(&pick(|r| r.recall)).mean,
            rank_order_abs: Summary::of(&pick(|r| r.rank_order_abs)),
            rank_order_rel: Summary::of(&pick(|r| r.rank_order_rel)),
            comparisons: Summary::of(&pick(|r| r.comparisons as f64)),
            qps_excl,
            qps_incl,
            per_query: records,
            config: serde_json::to_value(config).map_err(|e| Error::format(e.to_string()))?,
        });
    }
    Ok(reports)
}

fn prepare(data: &Dataset, config: &BenchConfig, q: Option<QExponent>) -> Result<Prepared> {
    match (config.method, q) {
        (Method::Brute, _) => Ok(Prepared::Brute),
        (Method::ProjectedExact, Some(q)) => {
            let d = DistanceMatrix::from_dataset(data, config.kind)?;
            let projected = canonical_exact(&d, q)?;
            Ok(Prepared::Projected {
                projected,
                seed: config.seed,
            })
        }
        (Method::OneStage | Method::TwoStage { .. }, Some(q)) => {
            let mut ic = config
                .index
                .clone()
                .ok_or_else(|| Error::config("learned methods need an index configuration"))?;
            ic.q = q;
            ic.projection.q = q;
            ic.training.q = q;
            ic.kind = config.kind;
            let index = build_index(data, &ic)?;
            let big_k = match config.method {
                Method::TwoStage { big_k } => Some(big_k),
                _ => None,
            };
            Ok(Prepared::Learned(Box::new(index), big_k))
        }
        _ => Err(Error::config("missing exponent")),
    }
}

fn score(
    data: &Dataset,
    queries: &Dataset,
    qi: usize,
    truth: &GroundTruth,
    mut ids: Vec<usize>,
    comparisons: usize,
    config: &BenchConfig,
) -> Result<QueryRecord> {
    let k = config.k;
    let t_ids = &truth.ids[qi];
    if config.tie_aware {
        let d = ids
            .iter()
            .map(|&i| dissimilarity(data.point(i), queries.point(qi), config.kind))
            .collect::<Result<Vec<_>>>()?;
        ids = remap_ties(t_ids, &truth.distances[qi], &ids, &d);
    }
    let mut padded = ids.clone();
    // Absent slots behave like items outside the truth.
    padded.resize(k, usize::MAX);
    Ok(QueryRecord {
        recall: recall_at_k(t_ids, &ids, k)?,
        rank_order_abs: rank_order_abs(t_ids, &padded, k)?,
        rank_order_rel: rank_order_rel(t_ids, &padded, k, data.len())?,
        ids,
        comparisons,
    })
}
