//! Finite-difference validation of the analytic objective gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{objective_and_grad, total_objective, Batch, LossWeights};
use super::{MlpParams, Mode};
use crate::error::{Error, Result};
use crate::qcore::{euclidean, q_triangle_violation, QExponent};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Number of parameter coordinates compared; all when larger than the
    /// parameter count.
    pub coordinates: usize,
    pub seed: u64,
    /// Triples whose embedded violation lies within this distance of a
    /// hinge or max kink are dropped before checking.
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            coordinates: 256,
            seed: 0,
            kink_tol: 1e-6,
        }
    }
}

/// Max relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
/// and central-difference gradients of [`total_objective`].
pub fn gradient_check(params: &MlpParams, batch: &Batch, weights: &LossWeights, step: f64) -> Result<f64> {
    gradient_check_with(
        params,
        batch,
        weights,
        &GradCheckOptions {
            step,
            ..GradCheckOptions::default()
        },
        |_| {},
    )
}

/// As [`gradient_check`], letting `corrupt` tamper with the flattened
/// analytic gradient first.
pub fn gradient_check_with(
    params: &MlpParams,
    batch: &Batch,
    weights: &LossWeights,
    opts: &GradCheckOptions,
    corrupt: impl FnOnce(&mut [f64]),
) -> Result<f64> {
    if !(opts.step > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let batch = filter_kinks(params, batch, weights.q, opts.kink_tol)?;
    let weights = LossWeights {
        alpha_t: if batch.triples.is_empty() { 0.0 } else { weights.alpha_t },
        ..*weights
    };
    let (_, grads) = objective_and_grad(params, &batch, &weights, Mode::Infer, true)?;
    let mut analytic = grads.flat();
    corrupt(&mut analytic);

    let n = params.num_parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coords = sample(&mut rng, n, opts.coordinates.min(n)).into_vec();
    coords.sort_unstable();

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for c in coords {
        let original = *probe.param_mut(c);
        *probe.param_mut(c) = original + opts.step;
        let up = total_objective(&probe, &batch, &weights)?;
        *probe.param_mut(c) = original - opts.step;
        let down = total_objective(&probe, &batch, &weights)?;
        *probe.param_mut(c) = original;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn filter_kinks(params: &MlpParams, batch: &Batch, q: QExponent, tol: f64) -> Result<Batch> {
    if batch.triples.is_empty() {
        return Ok(batch.clone());
    }
    let emb = params.forward_batch(batch.points.view(), Mode::Infer)?;
    let e = |a: usize, b: usize| euclidean(emb.row(a).as_slice().unwrap(), emb.row(b).as_slice().unwrap());
    let triples = batch
        .triples
        .iter()
        .copied()
        .filter(|&(x, y, z)| {
            let (exy, exz, eyz) = (e(x, y), e(x, z), e(y, z));
            let raw = match q {
                QExponent::Infinity => exy - exz.max(eyz),
                QExponent::Finite(p) => exy.powf(p) - exz.powf(p) - eyz.powf(p),
            };
            let tie = q.is_infinite() && (exz - eyz).abs() < tol;
            debug_assert_eq!(raw.max(0.0), q_triangle_violation(exy, exz, eyz, q).max(0.0));
            raw.abs() >= tol && !tie
        })
        .collect();
    Ok(Batch {
        points: batch.points.clone(),
        pairs: batch.pairs.clone(),
        triples,
    })
}
