//! Learned embedding `Φ(·; θ)`: a fully connected network whose output
//! Euclidean distances approximate projected q-distances.

mod gradcheck;
mod loss;
mod train;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions};
pub use loss::{
    stress_loss, total_objective, triangle_loss, Batch, LossWeights, ObjectiveValue,
};
pub use train::{train, LrSchedule, TrainConfig, TrainReport};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::data::DenseData;
use crate::error::{Error, Result};
use crate::qcore::QExponent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x · Φ(x)` with the standard normal CDF.
    Gelu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Network parameters. The output is `scale · net(x)`; the trainer fits
/// `net` to targets divided by `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub dropout: f64,
    pub q: QExponent,
    pub scale: f64,
}

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
}

impl MlpParams {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn init(dims: &[usize], dropout: f64, seed: u64) -> Result<MlpParams> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!(
                "layer dimensions {dims:?} need at least an input and an output, all positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        let params = MlpParams {
            layers,
            activation: Activation::Gelu,
            dropout,
            q: QExponent::Finite(2.0),
            scale: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with all weights and biases zero.
    pub fn zeros(dims: &[usize]) -> Result<MlpParams> {
        let mut p = MlpParams::init(dims, 0.0, 0)?;
        for l in &mut p.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].output_dim(),
                    found: pair[1].input_dim(),
                });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: l.output_dim(),
                    found: l.bias.len(),
                });
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config(format!("output scale {} must be positive", self.scale)));
        }
        self.q.validate()?;
        if self.parameters().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::output_dim));
        d
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters in file order: per layer, weights row-major then bias.
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub(crate) fn param_mut(&mut self, mut flat: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.len();
            if flat < nw {
                let cols = l.weight.ncols();
                return &mut l.weight[[flat / cols, flat % cols]];
            }
            flat -= nw;
            if flat < l.bias.len() {
                return &mut l.bias[flat];
            }
            flat -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Embeds a single point.
    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let out = self.forward_batch(xs, mode)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Embeds the rows of `xs`.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: xs.ncols(),
            });
        }
        if self.parameters().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(self.run(xs, mode, false).output)
    }

    pub(crate) fn forward_cached(&self, xs: ArrayView2<'_, f64>, mode: Mode<'_>) -> ForwardCache {
        self.run(xs, mode, true)
    }

    /// With `keep`, records layer inputs and activation slopes for
    /// [`MlpParams::backward`].
    fn run(&self, xs: ArrayView2<'_, f64>, mut mode: Mode<'_>, keep: bool) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut h = xs.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if keep {
                inputs.push(h);
            }
            if li == last {
                h = z;
                break;
            }
            let mut a = z;
            if keep {
                let mut slope = Array2::zeros(a.raw_dim());
                Zip::from(&mut a).and(&mut slope).for_each(|a, s| {
                    let (v, g) = gelu_and_grad(*a);
                    *a = v;
                    *s = g;
                });
                slopes.push(slope);
            } else {
                a.mapv_inplace(gelu);
            }
            let mask = match &mut mode {
                Mode::Train(rng) if self.dropout > 0.0 => {
                    let p_keep = 1.0 - self.dropout;
                    let inv = 1.0 / p_keep;
                    let values = (0..a.len())
                        .map(|_| if rng.random::<f64>() < p_keep { inv } else { 0.0 })
                        .collect();
                    let m = Array2::from_shape_vec(a.raw_dim(), values).expect("shape matches length");
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            if keep {
                masks.push(mask);
            }
            h = a;
        }
        if self.scale != 1.0 {
            h *= self.scale;
        }
        ForwardCache {
            inputs,
            slopes,
            masks,
            output: h,
        }
    }

    /// Parameter gradients given the gradient of the loss with respect to
    /// the outputs of a cached forward pass.
    pub(crate) fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Gradients {
        let mut g = grad_out * self.scale;
        let mut layers = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let dw = g.t().dot(&cache.inputs[li]);
            let db = g.sum_axis(Axis(0));
            layers.push((dw, db));
            if li == 0 {
                break;
            }
            let mut da = g.dot(&layer.weight);
            if let Some(mask) = &cache.masks[li - 1] {
                da *= mask;
            }
            da *= &cache.slopes[li - 1];
            g = da;
        }
        layers.reverse();
        Gradients { layers }
    }
}

pub(crate) struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    slopes: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

/// Per-layer `(dW, db)` in the same shapes as the parameters.
#[derive(Clone, Debug)]
pub(crate) struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[inline]
pub(crate) fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2))
}

/// GELU and its derivative sharing one `erf` evaluation.
#[inline]
fn gelu_and_grad(z: f64) -> (f64, f64) {
    let cdf = 0.5 * (1.0 + libm::erf(z * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (z * cdf, cdf + z * pdf)
}

/// Infer-mode embedding of every row of `features`.
pub fn embed_all(params: &MlpParams, features: &DenseData) -> Result<DenseData> {
    if features.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            found: features.dim(),
        });
    }
    let s = params.output_dim();
    let mut out: Vec<f64> = Vec::with_capacity(features.rows() * s);
    const CHUNK: usize = 1024;
    let view = ArrayView2::from_shape((features.rows(), features.dim()), features.values())
        .map_err(|e| Error::format(e.to_string()))?;
    let mut start = 0;
    while start < features.rows() {
        let end = (start + CHUNK).min(features.rows());
        let block = params.forward_batch(view.slice(s![start..end, ..]), Mode::Infer)?;
        out.extend(block.iter());
        start = end;
    }
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("embedding produced {bad}")));
    }
    DenseData::new(features.rows(), s, out)
}

pub(crate) fn write_params(params: &MlpParams, w: &mut Writer) -> Result<()> {
    w.len_u32(params.layers.len())?;
    for d in params.dims() {
        w.len_u32(d)?;
    }
    w.u8(match params.activation {
        Activation::Gelu => 1,
    });
    w.f64(params.dropout);
    crate::formats::write_q(w, params.q);
    w.f64(params.scale);
    for v in params.parameters() {
        w.f64(v);
    }
    Ok(())
}

pub(crate) fn read_params(r: &mut Reader<'_>) -> Result<MlpParams> {
    let n_layers = r.u32()? as usize;
    if n_layers == 0 {
        return Err(Error::format("model has no layers"));
    }
    r.expect_at_least(n_layers + 1, 4)?;
    let dims: Vec<usize> = (0..=n_layers)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let activation = match r.u8()? {
        1 => Activation::Gelu,
        other => return Err(Error::format(format!("unknown activation tag {other}"))),
    };
    let dropout = r.f64()?;
    let q = crate::formats::read_q(r)?;
    let scale = r.f64()?;
    let mut total = 0usize;
    for w in dims.windows(2) {
        total = w[0]
            .checked_mul(w[1])
            .and_then(|v| v.checked_add(w[1]))
            .and_then(|v| v.checked_add(total))
            .ok_or_else(|| Error::format("parameter count overflows"))?;
    }
    r.expect_at_least(total, 8)?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in dims.windows(2) {
        let weights: Vec<f64> = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<_>>()?;
        let bias: Vec<f64> = (0..w[1]).map(|_| r.f64()).collect::<Result<_>>()?;
        layers.push(Layer {
            weight: Array2::from_shape_vec((w[1], w[0]), weights).map_err(|e| Error::format(e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    let params = MlpParams {
        layers,
        activation,
        dropout,
        q,
        scale,
    };
    params.validate().map_err(|e| Error::format(format!("invalid model: {e}")))?;
    Ok(params)
}
