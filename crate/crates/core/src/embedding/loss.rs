//! Stress and q-triangle losses with their gradients.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::{Gradients, MlpParams, Mode};
use crate::error::{Error, Result};
use crate::qcore::{euclidean, q_triangle_violation, QExponent};

/// A minibatch: the points involved plus pairs with targets and triples,
/// both indexing rows of `points`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub points: Array2<f64>,
    pub pairs: Vec<(usize, usize, f64)>,
    pub triples: Vec<(usize, usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_d: f64,
    pub alpha_t: f64,
    pub q: QExponent,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        self.q.validate()?;
        if !(self.alpha_d >= 0.0 && self.alpha_t >= 0.0 && self.alpha_d + self.alpha_t > 0.0) {
            return Err(Error::config(format!(
                "loss weights alpha_d = {}, alpha_t = {} must be nonnegative with a positive sum",
                self.alpha_d, self.alpha_t
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub stress: f64,
    pub triangle: f64,
}

/// `(target - ‖Φ(x) - Φ(y)‖)²`.
pub fn stress_loss(params: &MlpParams, x: &[f64], y: &[f64], target: f64) -> Result<f64> {
    let e = euclidean(&params.forward(x, Mode::Infer)?, &params.forward(y, Mode::Infer)?);
    Ok((target - e).powi(2))
}

/// Positive part of the embedded q-triangle violation with `(x, y)` as the
/// long side; the `q = ∞` form is `[e(x,y) - max(e(x,z), e(y,z))]₊`.
pub fn triangle_loss(params: &MlpParams, x: &[f64], y: &[f64], z: &[f64], q: QExponent) -> Result<f64> {
    let (ex, ey, ez) = (
        params.forward(x, Mode::Infer)?,
        params.forward(y, Mode::Infer)?,
        params.forward(z, Mode::Infer)?,
    );
    Ok(q_triangle_violation(
        euclidean(&ex, &ey),
        euclidean(&ex, &ez),
        euclidean(&ey, &ez),
        q,
    ))
}

/// `alpha_d · mean stress + alpha_t · mean triangle loss`, inference mode.
pub fn total_objective(params: &MlpParams, batch: &Batch, weights: &LossWeights) -> Result<f64> {
    check_batch(params, batch, weights)?;
    let emb = params.forward_batch(batch.points.view(), Mode::Infer)?;
    let (value, _) = loss_terms(&emb, batch, weights, true, false);
    Ok(value.total)
}

fn check_batch(params: &MlpParams, batch: &Batch, weights: &LossWeights) -> Result<()> {
    weights.validate()?;
    if weights.alpha_d > 0.0 && batch.pairs.is_empty() {
        return Err(Error::config("stress weight is positive but the pair batch is empty"));
    }
    if weights.alpha_t > 0.0 && batch.triples.is_empty() {
        return Err(Error::config("triangle weight is positive but the triple batch is empty"));
    }
    if batch.points.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            found: batch.points.ncols(),
        });
    }
    let n = batch.points.nrows();
    let out_of_range = batch.pairs.iter().any(|&(a, b, _)| a >= n || b >= n)
        || batch.triples.iter().any(|&(a, b, c)| a >= n || b >= n || c >= n);
    if out_of_range {
        return Err(Error::config("batch references a point outside its rows"));
    }
    Ok(())
}

/// Objective value and parameter gradient for one batch.
pub(crate) fn objective_and_grad(
    params: &MlpParams,
    batch: &Batch,
    weights: &LossWeights,
    mode: Mode<'_>,
    deterministic: bool,
) -> Result<(ObjectiveValue, Gradients)> {
    check_batch(params, batch, weights)?;
    let cache = params.forward_cached(batch.points.view(), mode);
    let (value, grad_emb) = loss_terms(&cache.output, batch, weights, deterministic, true);
    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective {} (stress {}, triangle {})",
            value.total, value.stress, value.triangle
        )));
    }
    Ok((value, params.backward(&cache, &grad_emb)))
}

/// Loss value and, when requested, its gradient with respect to each
/// embedded row.
fn loss_terms(
    emb: &Array2<f64>,
    batch: &Batch,
    w: &LossWeights,
    deterministic: bool,
    want_grad: bool,
) -> (ObjectiveValue, Array2<f64>) {
    let shape = emb.raw_dim();
    let np = batch.pairs.len().max(1) as f64;
    let nt = batch.triples.len().max(1) as f64;
    let cd = w.alpha_d / np;
    let ct = w.alpha_t / nt;

    let pair_term = |acc: &mut Acc, &(a, b, t): &(usize, usize, f64)| {
        let diff = &emb.row(a) - &emb.row(b);
        let e = diff.dot(&diff).sqrt();
        acc.sum += (t - e).powi(2);
        if want_grad && e > 0.0 && cd != 0.0 {
            let c = cd * -2.0 * (t - e) / e;
            acc.add(a, b, c, &diff.view());
        }
    };
    let triple_term = |acc: &mut Acc, &(x, y, z): &(usize, usize, usize)| {
        let dxy = &emb.row(x) - &emb.row(y);
        let dxz = &emb.row(x) - &emb.row(z);
        let dyz = &emb.row(y) - &emb.row(z);
        let (exy, exz, eyz) = (norm(&dxy), norm(&dxz), norm(&dyz));
        let v = q_triangle_violation(exy, exz, eyz, w.q);
        acc.sum += v;
        if !(want_grad && v > 0.0 && ct != 0.0) {
            return;
        }
        match w.q {
            QExponent::Infinity => {
                acc.add(x, y, ct / exy, &dxy.view());
                if exz >= eyz {
                    if exz > 0.0 {
                        acc.add(x, z, -ct / exz, &dxz.view());
                    }
                } else if eyz > 0.0 {
                    acc.add(y, z, -ct / eyz, &dyz.view());
                }
            }
            QExponent::Finite(q) => {
                // d(e^q)/d(row) = q e^(q-2) diff, zero at e = 0.
                let coef = |e: f64| if e > 0.0 { q * e.powf(q - 2.0) } else { 0.0 };
                acc.add(x, y, ct * coef(exy), &dxy.view());
                acc.add(x, z, -ct * coef(exz), &dxz.view());
                acc.add(y, z, -ct * coef(eyz), &dyz.view());
            }
        }
    };

    let new_acc = || Acc {
        sum: 0.0,
        grad: if want_grad {
            Array2::zeros(shape)
        } else {
            Array2::zeros((0, 0))
        },
    };
    let (pairs, triples) = if deterministic {
        let mut p = new_acc();
        batch.pairs.iter().for_each(|item| pair_term(&mut p, item));
        let mut t = new_acc();
        batch.triples.iter().for_each(|item| triple_term(&mut t, item));
        (p, t)
    } else {
        let p = batch
            .pairs
            .par_iter()
            .fold(new_acc, |mut acc, item| {
                pair_term(&mut acc, item);
                acc
            })
            .reduce(new_acc, Acc::merge);
        let t = batch
            .triples
            .par_iter()
            .fold(new_acc, |mut acc, item| {
                triple_term(&mut acc, item);
                acc
            })
            .reduce(new_acc, Acc::merge);
        (p, t)
    };
    let stress = if batch.pairs.is_empty() { 0.0 } else { pairs.sum / np };
    let triangle = if batch.triples.is_empty() { 0.0 } else { triples.sum / nt };
    let mut grad = pairs.grad;
    if want_grad {
        grad += &triples.grad;
    }
    (
        ObjectiveValue {
            total: w.alpha_d * stress + w.alpha_t * triangle,
            stress,
            triangle,
        },
        grad,
    )
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

struct Acc {
    sum: f64,
    grad: Array2<f64>,
}

impl Acc {
    /// Adds `c · diff` to row `a` and subtracts it from row `b`.
    fn add(&mut self, a: usize, b: usize, c: f64, diff: &ArrayView1<'_, f64>) {
        if c == 0.0 {
            return;
        }
        self.grad.row_mut(a).scaled_add(c, diff);
        self.grad.row_mut(b).scaled_add(-c, diff);
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.sum += other.sum;
        if self.grad.len_of(Axis(0)) == other.grad.len_of(Axis(0)) {
            self.grad += &other.grad;
        }
        self
    }
}
