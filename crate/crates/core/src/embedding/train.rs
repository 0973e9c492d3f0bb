//! Minibatch trainer: AdamW with cosine warm restarts.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{objective_and_grad, Batch, LossWeights};
use super::{Gradients, MlpParams, Mode};
use crate::data::DenseData;
use crate::error::{Error, Result};
use crate::projection::ProjectedMatrix;
use crate::qcore::QExponent;

/// Cosine annealing with warm restarts, evaluated at fractional epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub period: f64,
    pub multiplier: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: f64) -> f64 {
        let mut t = epoch.max(0.0);
        let mut period = self.period;
        while t >= period {
            t -= period;
            period *= self.multiplier;
        }
        self.base * 0.5 * (1.0 + (std::f64::consts::PI * t / period).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub q: QExponent,
    pub hidden: Vec<usize>,
    /// Embedding dimension `s`; `None` means `min(input_dim, 64)`.
    pub output_dim: Option<usize>,
    pub dropout: f64,
    pub alpha_d: f64,
    pub alpha_t: f64,
    pub epochs: usize,
    pub batch_pairs: usize,
    pub batch_triples: usize,
    /// Optimizer steps per epoch; `None` covers the pair set once, capped
    /// at [`TrainConfig::MAX_DEFAULT_STEPS`].
    pub steps_per_epoch: Option<usize>,
    pub lr: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fixed summation order for gradient accumulation.
    pub deterministic: bool,
}

impl TrainConfig {
    pub const MAX_DEFAULT_STEPS: usize = 64;

    /// Full-size architecture and optimizer constants.
    pub fn full(q: QExponent) -> TrainConfig {
        TrainConfig {
            q,
            hidden: vec![1048, 512, 1012],
            output_dim: None,
            dropout: 0.2,
            alpha_d: 1.0,
            alpha_t: 0.3,
            epochs: 100,
            batch_pairs: 256,
            batch_triples: 256,
            steps_per_epoch: None,
            lr: LrSchedule {
                base: 1e-3,
                period: 50.0,
                multiplier: 2.0,
            },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            seed: 0,
            deterministic: true,
        }
    }

    /// The same recipe with hidden widths reduced for desk-scale data.
    pub fn desk(q: QExponent) -> TrainConfig {
        TrainConfig {
            hidden: vec![128, 64, 128],
            ..TrainConfig::full(q)
        }
    }

    pub fn resolved_output_dim(&self, input_dim: usize) -> usize {
        self.output_dim.unwrap_or_else(|| input_dim.clamp(1, 64))
    }

    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.resolved_output_dim(input_dim));
        dims
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_d: self.alpha_d,
            alpha_t: self.alpha_t,
            q: self.q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.output_dim == Some(0) {
            return Err(Error::config("output dimension must be at least 1"));
        }
        if self.batch_pairs == 0 && self.alpha_d > 0.0 {
            return Err(Error::config("batch_pairs must be positive"));
        }
        if self.batch_triples == 0 && self.alpha_t > 0.0 {
            return Err(Error::config("batch_triples must be positive"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("steps_per_epoch must be positive"));
        }
        let lr = &self.lr;
        if !(lr.base >= 0.0 && lr.period > 0.0 && lr.multiplier >= 1.0) {
            return Err(Error::config(format!("invalid learning-rate schedule {lr:?}")));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::config("optimizer moments must lie in [0, 1) with eps > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Parameters before the first update: seeded initialization, tagged
    /// with `q` and the target scale.
    pub fn initial_params(&self, input_dim: usize, scale: f64) -> Result<MlpParams> {
        let mut p = MlpParams::init(&self.dims(input_dim), self.dropout, self.seed)?;
        p.q = self.q;
        p.scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
        Ok(p)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean stress per epoch, in units of the target scale.
    pub stress: Vec<f64>,
    /// Mean triangle loss per epoch, same units.
    pub triangle: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub target_scale: f64,
    pub steps: usize,
    /// Mean stress over every training pair with dropout off, after training.
    pub final_stress: f64,
    /// `sqrt(Σ(e - t)² / Σ t²)` over every training pair after training.
    pub normalized_stress: f64,
    pub gradient_check: Option<f64>,
}

/// Fits `Φ` so embedded distances of `points` match `targets`.
pub fn train(points: &DenseData, targets: &ProjectedMatrix, config: &TrainConfig) -> Result<(MlpParams, TrainReport)> {
    config.validate()?;
    let m = points.rows();
    if m < 2 {
        return Err(Error::config(format!("training needs at least 2 points, got {m}")));
    }
    if targets.n() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: targets.n(),
        });
    }
    if targets.q() != config.q {
        return Err(Error::config(format!(
            "targets are projected at q = {}, training asks for q = {}",
            targets.q(),
            config.q
        )));
    }
    let scale = targets.matrix().max_entry();
    let initial = config.initial_params(points.dim(), scale)?;
    let mut report = TrainReport {
        target_scale: initial.scale,
        ..TrainReport::default()
    };
    if config.epochs == 0 {
        let (fs, ns) = full_stress(&initial, points, targets)?;
        report.final_stress = fs;
        report.normalized_stress = ns;
        return Ok((initial, report));
    }

    let inv_scale = 1.0 / initial.scale;
    let mut net = initial.clone();
    net.scale = 1.0;
    let weights = config.weights();
    let total_pairs = m * (m - 1) / 2;
    let pair_batch = config.batch_pairs.min(total_pairs);
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| total_pairs.div_ceil(pair_batch.max(1)).clamp(1, TrainConfig::MAX_DEFAULT_STEPS));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_7A1E);
    let mut adam = AdamW::new(&net);

    for epoch in 0..config.epochs {
        let (mut stress_sum, mut tri_sum) = (0.0, 0.0);
        let mut lr = 0.0;
        for step in 0..steps {
            lr = config.lr.at(epoch as f64 + step as f64 / steps as f64);
            let batch = sample_batch(
                &mut rng,
                points,
                targets,
                inv_scale,
                if weights.alpha_d > 0.0 { pair_batch } else { 0 },
                if weights.alpha_t > 0.0 && m >= 3 { config.batch_triples } else { 0 },
            );
            let batch_weights = LossWeights {
                alpha_t: if batch.triples.is_empty() { 0.0 } else { weights.alpha_t },
                ..weights
            };
            let (value, grads) =
                objective_and_grad(&net, &batch, &batch_weights, Mode::Train(&mut rng), config.deterministic)
                    .map_err(|e| match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
                        other => other,
                    })?;
            adam.step(&mut net, &grads, lr, config);
            stress_sum += value.stress;
            tri_sum += value.triangle;
            report.steps += 1;
        }
        report.stress.push(stress_sum / steps as f64);
        report.triangle.push(tri_sum / steps as f64);
        report.learning_rate.push(lr);
        if net.parameters().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameters diverged in epoch {epoch}")));
        }
    }
    net.scale = initial.scale;
    let (fs, ns) = full_stress(&net, points, targets)?;
    report.final_stress = fs;
    report.normalized_stress = ns;
    Ok((net, report))
}

/// Inference-mode stress over every pair, in target-scale units, and the
/// normalized stress.
fn full_stress(params: &MlpParams, points: &DenseData, targets: &ProjectedMatrix) -> Result<(f64, f64)> {
    let emb = super::embed_all(params, points)?;
    let m = points.rows();
    let scale = params.scale;
    let (mut sq, mut norm, mut count) = (0.0, 0.0, 0usize);
    for i in 0..m {
        for j in (i + 1)..m {
            let e = crate::qcore::euclidean(emb.row(i), emb.row(j));
            let t = targets.get(i, j);
            sq += ((t - e) / scale).powi(2);
            norm += (t / scale).powi(2);
            count += 1;
        }
    }
    let mean = if count == 0 { 0.0 } else { sq / count as f64 };
    let normalized = if norm > 0.0 { (sq / norm).sqrt() } else { 0.0 };
    Ok((mean, normalized))
}

/// Maps a linear index over the strict upper triangle of an `m × m`
/// matrix to its `(i, j)` pair, `i < j`.
pub(crate) fn pair_from_linear(k: usize, m: usize) -> (usize, usize) {
    // Row i starts at offset i*m - i*(i+1)/2.
    let offset = |i: usize| i * m - i * (i + 1) / 2;
    let mf = m as f64;
    let disc = (2.0 * mf - 1.0).powi(2) - 8.0 * k as f64;
    let mut i = (((2.0 * mf - 1.0) - disc.max(0.0).sqrt()) / 2.0).floor() as usize;
    i = i.min(m - 2);
    while i > 0 && offset(i) > k {
        i -= 1;
    }
    while offset(i + 1) <= k {
        i += 1;
    }
    (i, i + 1 + (k - offset(i)))
}

fn sample_batch(
    rng: &mut ChaCha8Rng,
    points: &DenseData,
    targets: &ProjectedMatrix,
    inv_scale: f64,
    n_pairs: usize,
    n_triples: usize,
) -> Batch {
    let m = points.rows();
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut slot = |g: usize| {
        *local.entry(g).or_insert_with(|| {
            order.push(g);
            order.len() - 1
        })
    };
    let total_pairs = m * (m - 1) / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for k in sample(rng, total_pairs, n_pairs.min(total_pairs)).into_iter() {
        let (i, j) = pair_from_linear(k, m);
        pairs.push((slot(i), slot(j), targets.get(i, j) * inv_scale));
    }
    let mut triples = Vec::with_capacity(n_triples);
    for _ in 0..n_triples {
        let x = rng.random_range(0..m);
        let mut y = rng.random_range(0..m - 1);
        if y >= x {
            y += 1;
        }
        let z = loop {
            let z = rng.random_range(0..m);
            if z != x && z != y {
                break z;
            }
        };
        triples.push((slot(x), slot(y), slot(z)));
    }
    let dim = points.dim();
    let mut flat = Vec::with_capacity(order.len() * dim);
    for &g in &order {
        flat.extend_from_slice(points.row(g));
    }
    Batch {
        points: Array2::from_shape_vec((order.len(), dim), flat).expect("batch shape"),
        pairs,
        triples,
    }
}

/// Adam moments with decoupled weight decay.
struct AdamW {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    t: i32,
}

impl AdamW {
    fn new(p: &MlpParams) -> AdamW {
        let zeros: Vec<_> = p
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
            .collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut MlpParams, g: &Gradients, lr: f64, c: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let decay = 1.0 - lr * c.weight_decay;
        let update = |param: &mut f64, grad: &f64, m: &mut f64, v: &mut f64| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * grad;
            *v = c.beta2 * *v + (1.0 - c.beta2) * grad * grad;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *param = *param * decay - lr * mh / (vh.sqrt() + c.eps);
        };
        for (li, layer) in p.layers.iter_mut().enumerate() {
            let (gw, gb) = &g.layers[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];
            Zip::from(&mut layer.weight)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|a, b, c2, d| update(a, b, c2, d));
            Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|a, b, c2, d| update(a, b, c2, d));
        }
    }
}
