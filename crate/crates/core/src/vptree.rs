//! Vantage-point tree with q-power pruning.
//!
//! Each node splits the remaining points at the balanced median of their
//! distances to the vantage point: the left child gets the `⌈(n-1)/2⌉`
//! closest (ties ordered by index), the right child the rest. Besides the
//! split radius `mu` (largest left distance) a node keeps `mu_out`, the
//! smallest right distance, so pruning can use whichever bound is tighter.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::qcore::{QExponent, ScaledPower};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VantagePolicy {
    /// Seeded uniform choice among the node's points.
    Random,
    /// The first point of the node's slice; useful for hand traces.
    First,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VpNode {
    pub vantage: usize,
    pub mu: f64,
    pub mu_out: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

/// Immutable tree over a set of point indices. Nodes live in an arena in
/// preorder; `root` is node 0 when present.
#[derive(Clone, Debug, PartialEq)]
pub struct VpTree {
    nodes: Vec<VpNode>,
    q: QExponent,
    scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneDecision {
    LeftOnly,
    Both,
    RightOnly,
    /// Neither child can hold a strictly better point.
    Neither,
}

impl PruneDecision {
    fn visits_left(self) -> bool {
        matches!(self, PruneDecision::LeftOnly | PruneDecision::Both)
    }

    fn visits_right(self) -> bool {
        matches!(self, PruneDecision::RightOnly | PruneDecision::Both)
    }
}

/// Which inequality the search may rely on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pruning {
    /// Use the exponent the tree was built with.
    Tree,
    Exponent(QExponent),
    /// Visit every node.
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    /// `(index, distance)` ascending by distance, then index.
    pub results: Vec<(usize, f64)>,
    pub comparisons: usize,
    pub both_decisions: usize,
    /// Set when more neighbors were requested than the tree holds.
    pub truncated: bool,
}

impl SearchOutcome {
    pub fn ids(&self) -> Vec<usize> {
        self.results.iter().map(|r| r.0).collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.1).collect()
    }
}

/// Pruning decision for a single split radius.
///
/// Finite `q`: left only iff `d^q <= mu^q - tau^q`, right only iff
/// `d^q > mu^q + tau^q`. At `q = ∞` the decision uses the strong triangle
/// inequality directly, see [`prune_split`].
pub fn prune_decision(d: f64, mu: f64, tau: f64, q: QExponent) -> PruneDecision {
    prune_split(d, mu, mu, tau, ScaledPower::new(q, 1.0))
}

/// Pruning with separate bounds for the two children: every left point is
/// within `mu_in` of the vantage and every right point at least `mu_out`.
///
/// For `q = ∞` a subtree is skipped when the strong triangle inequality
/// forces all of its points to be at distance `>= tau`:
/// right points satisfy `d(z,t) = d(v,t) >= mu_out` whenever `d < mu_out`,
/// left points satisfy `d(z,t) = d` whenever `d > mu_in`.
pub(crate) fn prune_split(d: f64, mu_in: f64, mu_out: f64, tau: f64, power: ScaledPower) -> PruneDecision {
    if tau == f64::INFINITY {
        return PruneDecision::Both;
    }
    let (skip_right, skip_left) = match power.q {
        QExponent::Infinity => (d < mu_out && tau <= mu_out, d > mu_in && tau <= d),
        QExponent::Finite(_) => {
            let dp = power.lift(d);
            let tp = power.lift(tau);
            (
                dp <= power.lift(mu_out) - tp,
                dp > power.lift(mu_in) + tp,
            )
        }
    };
    match (skip_left, skip_right) {
        (false, false) => PruneDecision::Both,
        (false, true) => PruneDecision::LeftOnly,
        (true, false) => PruneDecision::RightOnly,
        (true, true) => PruneDecision::Neither,
    }
}

impl VpTree {
    /// Builds a tree over `indices` with `dist(i, j)` as the distance
    /// between two indexed points.
    pub fn build(
        indices: &[usize],
        dist: impl Fn(usize, usize) -> f64,
        q: QExponent,
        seed: u64,
        policy: VantagePolicy,
    ) -> Result<VpTree> {
        q.validate()?;
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in indices {
            if !seen.insert(i) {
                return Err(Error::DuplicateIndex(i));
            }
            if i > u32::MAX as usize {
                return Err(Error::config(format!("point index {i} exceeds u32 range")));
            }
        }
        let mut builder = Builder {
            nodes: Vec::with_capacity(indices.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            policy,
            dist: &dist,
            max_dist: 0.0,
        };
        let mut work: Vec<usize> = indices.to_vec();
        builder.build(&mut work)?;
        let scale = builder.max_dist;
        Ok(VpTree {
            nodes: builder.nodes,
            q,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn q(&self) -> QExponent {
        self.q
    }

    /// Largest vantage distance seen during construction; the scale used
    /// for powered comparisons.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn nodes(&self) -> &[VpNode] {
        &self.nodes
    }

    pub fn root(&self) -> Option<&VpNode> {
        self.nodes.first()
    }

    pub fn height(&self) -> usize {
        fn h(nodes: &[VpNode], at: Option<usize>) -> usize {
            at.map_or(0, |i| 1 + h(nodes, nodes[i].left).max(h(nodes, nodes[i].right)))
        }
        h(&self.nodes, (!self.nodes.is_empty()).then_some(0))
    }

    /// k-nearest-neighbor search with the tree's own exponent.
    pub fn search_knn(&self, query_dist: impl FnMut(usize) -> f64, k: usize) -> Result<SearchOutcome> {
        self.search_knn_with(query_dist, k, Pruning::Tree)
    }

    pub fn search_knn_with(
        &self,
        mut query_dist: impl FnMut(usize) -> f64,
        k: usize,
        pruning: Pruning,
    ) -> Result<SearchOutcome> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        let power = match pruning {
            Pruning::Tree => Some(ScaledPower::new(self.q, self.scale)),
            Pruning::Exponent(q) => {
                q.validate()?;
                Some(ScaledPower::new(q, self.scale))
            }
            Pruning::Off => None,
        };
        let mut state = SearchState {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
            comparisons: 0,
            both: 0,
        };
        if !self.nodes.is_empty() {
            self.visit(0, &mut query_dist, power, &mut state)?;
        }
        let mut results: Vec<(usize, f64)> = state.heap.into_iter().map(|c| (c.index, c.dist)).collect();
        results.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(SearchOutcome {
            results,
            comparisons: state.comparisons,
            both_decisions: state.both,
            truncated: k > self.nodes.len(),
        })
    }

    fn visit(
        &self,
        at: usize,
        query_dist: &mut impl FnMut(usize) -> f64,
        power: Option<ScaledPower>,
        state: &mut SearchState,
    ) -> Result<()> {
        let node = &self.nodes[at];
        let d = query_dist(node.vantage);
        if !(d >= 0.0) {
            return Err(Error::NonFinite(format!(
                "query distance {d} to point {}",
                node.vantage
            )));
        }
        state.comparisons += 1;
        state.offer(node.vantage, d);
        if node.left.is_none() && node.right.is_none() {
            return Ok(());
        }
        let Some(power) = power else {
            for child in [node.left, node.right].into_iter().flatten() {
                self.visit(child, query_dist, None, state)?;
            }
            return Ok(());
        };
        if state.tau() == 0.0 {
            return Ok(());
        }
        let decision = prune_split(d, node.mu, node.mu_out, state.tau(), power);
        if decision == PruneDecision::Both {
            state.both += 1;
        }
        let left_first = d <= node.mu;
        let (first, second) = if left_first {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        let visits = |dec: PruneDecision, left: bool| {
            if left {
                dec.visits_left()
            } else {
                dec.visits_right()
            }
        };
        if let Some(c) = first.filter(|_| visits(decision, left_first)) {
            self.visit(c, query_dist, Some(power), state)?;
        }
        if let Some(c) = second.filter(|_| visits(decision, !left_first)) {
            // tau may have shrunk while searching the first side.
            let again = prune_split(d, node.mu, node.mu_out, state.tau(), power);
            if visits(again, !left_first) {
                self.visit(c, query_dist, Some(power), state)?;
            }
        }
        Ok(())
    }

    /// Preorder records: vantage (u32), mu (f64), mu_out (f64), child flags
    /// (bit 0 left, bit 1 right).
    pub(crate) fn write(&self, w: &mut Writer) -> Result<()> {
        crate::formats::write_q(w, self.q);
        w.f64(self.scale);
        w.len_u32(self.nodes.len())?;
        if !self.nodes.is_empty() {
            self.write_node(0, w);
        }
        Ok(())
    }

    fn write_node(&self, at: usize, w: &mut Writer) {
        let n = &self.nodes[at];
        w.u32(n.vantage as u32);
        w.f64(n.mu);
        w.f64(n.mu_out);
        w.u8(u8::from(n.left.is_some()) | (u8::from(n.right.is_some()) << 1));
        if let Some(l) = n.left {
            self.write_node(l, w);
        }
        if let Some(r) = n.right {
            self.write_node(r, w);
        }
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<VpTree> {
        let q = crate::formats::read_q(r)?;
        let scale = r.f64()?;
        let count = r.u32()? as usize;
        r.expect_at_least(count, 21)?;
        let mut nodes = Vec::with_capacity(count);
        if count > 0 {
            read_node(r, &mut nodes, count)?;
        }
        if nodes.len() != count {
            return Err(Error::format(format!(
                "tree declares {count} nodes, records hold {}",
                nodes.len()
            )));
        }
        let mut seen = HashSet::with_capacity(count);
        for n in &nodes {
            if !seen.insert(n.vantage) {
                return Err(Error::format(format!("vantage {} appears twice", n.vantage)));
            }
            if !(n.mu >= 0.0 && n.mu_out >= 0.0) {
                return Err(Error::format("negative or NaN split radius"));
            }
        }
        Ok(VpTree { nodes, q, scale })
    }
}

fn read_node(r: &mut Reader<'_>, nodes: &mut Vec<VpNode>, limit: usize) -> Result<usize> {
    if nodes.len() >= limit {
        return Err(Error::format("more tree records than declared"));
    }
    let at = nodes.len();
    let vantage = r.u32()? as usize;
    let mu = r.f64()?;
    let mu_out = r.f64()?;
    let flags = r.u8()?;
    if flags > 3 {
        return Err(Error::format(format!("bad tree node flags {flags:#x}")));
    }
    nodes.push(VpNode {
        vantage,
        mu,
        mu_out,
        left: None,
        right: None,
    });
    if flags & 1 != 0 {
        nodes[at].left = Some(read_node(r, nodes, limit)?);
    }
    if flags & 2 != 0 {
        nodes[at].right = Some(read_node(r, nodes, limit)?);
    }
    Ok(at)
}

struct Builder<'a, F> {
    nodes: Vec<VpNode>,
    rng: ChaCha8Rng,
    policy: VantagePolicy,
    dist: &'a F,
    max_dist: f64,
}

impl<F: Fn(usize, usize) -> f64> Builder<'_, F> {
    fn build(&mut self, points: &mut [usize]) -> Result<Option<usize>> {
        if points.is_empty() {
            return Ok(None);
        }
        let pick = match self.policy {
            VantagePolicy::Random => self.rng.random_range(0..points.len()),
            VantagePolicy::First => 0,
        };
        points.swap(0, pick);
        let vantage = points[0];
        let rest = &mut points[1..];
        let mut keyed = Vec::with_capacity(rest.len());
        for &p in rest.iter() {
            let d = (self.dist)(vantage, p);
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidMatrix(format!(
                    "distance {d} between points {vantage} and {p}"
                )));
            }
            keyed.push((d, p));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (slot, &(_, p)) in rest.iter_mut().zip(&keyed) {
            *slot = p;
        }
        let n_left = rest.len().div_ceil(2);
        let mu = if n_left > 0 { keyed[n_left - 1].0 } else { 0.0 };
        let mu_out = keyed.get(n_left).map_or(mu, |k| k.0);
        if let Some(&(d, _)) = keyed.last() {
            self.max_dist = self.max_dist.max(d);
        }

        let at = self.nodes.len();
        self.nodes.push(VpNode {
            vantage,
            mu,
            mu_out,
            left: None,
            right: None,
        });
        let (left, right) = rest.split_at_mut(n_left);
        let l = self.build(left)?;
        let r = self.build(right)?;
        self.nodes[at].left = l;
        self.nodes[at].right = r;
        Ok(Some(at))
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

/// Bounded worst-first queue of the k best candidates.
struct SearchState {
    k: usize,
    heap: BinaryHeap<Candidate>,
    comparisons: usize,
    both: usize,
}

impl SearchState {
    fn offer(&mut self, index: usize, dist: f64) {
        let c = Candidate { dist, index };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if self.heap.peek().is_some_and(|worst| c < *worst) {
            self.heap.pop();
            self.heap.push(c);
        }
    }

    fn tau(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        }
    }
}
