//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! Each layer computes `a_next = act(W a + b)`, with `W` stored row-major as
//! `(out, in)`. Hidden layers may apply inverted dropout in training mode; the
//! final layer never does. Batches are matrices with one sample per row.

use rand::distr::Uniform;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    /// Row-wise softmax. Final layer only.
    Softmax,
}

impl Activation {
    fn apply_row(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Turns `dL/dy` into `dL/dz` given the activation output `y`.
    fn backprop_row(self, y: &[f64], g: &mut [f64]) {
        match self {
            Activation::Tanh => {
                for (gi, &yi) in g.iter_mut().zip(y) {
                    *gi *= 1.0 - yi * yi;
                }
            }
            Activation::Relu => {
                for (gi, &yi) in g.iter_mut().zip(y) {
                    if yi <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            Activation::Identity => {}
            Activation::Softmax => {
                let s = dot(g, y);
                for (gi, &yi) in g.iter_mut().zip(y) {
                    *gi = yi * (*gi - s);
                }
            }
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub(crate) weights: Matrix,
    pub(crate) biases: Vec<f64>,
    pub(crate) activation: Activation,
}

impl Layer {
    pub fn in_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn forward_row(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = self.biases[o] + dot(self.weights.row(o), input);
        }
        self.activation.apply_row(out);
    }
}

/// Whether a forward pass runs in training mode (dropout active) or evaluation mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Activations retained by [`Mlp::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[k]` is what layer `k` consumed (post-dropout for hidden layers).
    inputs: Vec<Matrix>,
    /// Post-activation, pre-dropout output of each layer.
    outputs: Vec<Matrix>,
    /// Inverted-dropout multipliers applied to each layer's output, if any.
    masks: Vec<Option<Matrix>>,
}

impl ForwardCache {
    /// Final network output.
    pub fn output(&self) -> &Matrix {
        self.outputs
            .last()
            .expect("cache of a network with no layers")
    }

    /// What layer `k` consumed; for `k > 0` this is the previous layer's
    /// output after dropout.
    pub fn layer_input(&self, k: usize) -> &Matrix {
        &self.inputs[k]
    }

    pub fn into_output(mut self) -> Matrix {
        self.outputs
            .pop()
            .expect("cache of a network with no layers")
    }
}

/// Gradient of a scalar loss with respect to every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grad {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Grad {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_width(), l.in_width()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.out_width()])
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_congruent(&self, model: &Mlp) -> bool {
        self.weights.len() == model.layers.len()
            && self.biases.len() == model.layers.len()
            && model.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].shape() == l.weights.shape()
                    && self.biases[k].len() == l.biases.len()
            })
    }

    /// Flattened in the same order as [`Mlp::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w.as_slice());
            v.extend_from_slice(b);
        }
        v
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice())
            .chain(self.biases.iter().flatten())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Dense multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) layers: Vec<Layer>,
    dropout_rate: f64,
    l2_coeff: f64,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases. Every layer but the last uses
    /// `hidden`; the last uses `output`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config(format!(
                "layer widths must be non-empty and positive, got {widths:?}"
            )));
        }
        if hidden == Activation::Softmax {
            return Err(Error::config("softmax is only allowed on the final layer"));
        }
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let data = (0..fan_in * fan_out).map(|_| rng.sample(dist)).collect();
            layers.push(Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data)?,
                biases: vec![0.0; fan_out],
                activation: if k + 1 == n_layers { output } else { hidden },
            });
        }
        Ok(Self {
            layers,
            dropout_rate: 0.0,
            l2_coeff: 0.0,
        })
    }

    /// Assembles a network from explicit parameters, validating every invariant.
    pub fn from_layers(layers: Vec<Layer>, dropout_rate: f64, l2_coeff: f64) -> Result<Self> {
        let model = Self {
            layers,
            dropout_rate,
            l2_coeff,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn layer(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Layer> {
        if biases.len() != weights.rows() {
            return Err(Error::shape(format!(
                "bias length {} does not match {} weight rows",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(Layer {
            weights,
            biases,
            activation,
        })
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(Error::config(format!(
                "l2 coefficient {} must be finite and non-negative",
                self.l2_coeff
            )));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.biases.len() != l.out_width() {
                return Err(Error::shape(format!("layer {k}: bias/weight mismatch")));
            }
            if k > 0 && l.in_width() != self.layers[k - 1].out_width() {
                return Err(Error::shape(format!(
                    "layer {k} expects {} inputs but layer {} emits {}",
                    l.in_width(),
                    k - 1,
                    self.layers[k - 1].out_width()
                )));
            }
            if l.activation == Activation::Softmax && k + 1 != self.layers.len() {
                return Err(Error::config("softmax is only allowed on the final layer"));
            }
            if !l.weights.is_finite() || !l.biases.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        self.dropout_rate = rate;
        self.validate()?;
        Ok(self)
    }

    pub fn with_l2(mut self, coeff: f64) -> Result<Self> {
        self.l2_coeff = coeff;
        self.validate()?;
        Ok(self)
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn l2_coeff(&self) -> f64 {
        self.l2_coeff
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Input width first, output width last. A network without layers has no widths.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self
            .layers
            .first()
            .map(|l| l.in_width())
            .into_iter()
            .collect();
        w.extend(self.layers.iter().map(Layer::out_width));
        w
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_width)
    }

    /// Number of trainable scalars: Σ (rows·cols + rows) over layers.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_width() * l.in_width() + l.out_width())
            .sum()
    }

    /// `l2_coeff · ‖θ‖²` over all weights and biases.
    pub fn l2_penalty(&self) -> f64 {
        if self.l2_coeff == 0.0 {
            return 0.0;
        }
        let sq: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.biases))
            .map(|v| v * v)
            .sum();
        self.l2_coeff * sq
    }

    /// All parameters flattened layer by layer, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(l.weights.as_slice());
            v.extend_from_slice(&l.biases);
        }
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        if inputs.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "input width {} does not match network input width {}",
                inputs.cols(),
                self.input_width()
            )));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// Batched forward pass. Training mode draws dropout masks for hidden
    /// layers from the supplied generator; evaluation mode is deterministic.
    pub fn forward(&self, inputs: &Matrix, mode: Mode<'_>) -> Result<ForwardCache> {
        self.check_input(inputs)?;
        let mut rng = match mode {
            Mode::Train(rng) if self.dropout_rate > 0.0 => Some(rng),
            _ => None,
        };
        let n = inputs.rows();
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut current = inputs.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Matrix::zeros(n, layer.out_width());
            for r in 0..n {
                layer.forward_row(current.row(r), out.row_mut(r));
            }
            let mask = match rng.as_deref_mut() {
                Some(rng) if k < last => {
                    let keep = 1.0 / (1.0 - self.dropout_rate);
                    let mut m = Matrix::zeros(n, layer.out_width());
                    for v in m.as_mut_slice() {
                        *v = if rng.random::<f64>() < self.dropout_rate {
                            0.0
                        } else {
                            keep
                        };
                    }
                    Some(m)
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => {
                    let mut d = out.clone();
                    for (v, &mv) in d.as_mut_slice().iter_mut().zip(m.as_slice()) {
                        *v *= mv;
                    }
                    d
                }
                None if k < last => out.clone(),
                None => Matrix::zeros(0, 0),
            };
            cache.inputs.push(std::mem::replace(&mut current, next));
            cache.outputs.push(out);
            cache.masks.push(mask);
        }
        Ok(cache)
    }

    /// Evaluation-mode output for a batch.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs, Mode::Eval)?.into_output())
    }

    /// Evaluation-mode output for one sample, without building a cache.
    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        if input.len() != self.input_width() {
            return Err(Error::shape(format!(
                "input width {} does not match network input width {}",
                input.len(),
                self.input_width()
            )));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut a = input.to_vec();
        for layer in &self.layers {
            let mut out = vec![0.0; layer.out_width()];
            layer.forward_row(&a, &mut out);
            a = out;
        }
        Ok(a)
    }

    /// Reverse pass for `dL/d(output)`. Adds the gradient of the L2 penalty.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> Result<Grad> {
        Ok(self.backward_with_input(cache, d_output, false)?.0)
    }

    /// Like [`Mlp::backward`] but also returns `dL/d(input)`.
    pub fn backward_full(&self, cache: &ForwardCache, d_output: &Matrix) -> Result<(Grad, Matrix)> {
        let (g, dx) = self.backward_with_input(cache, d_output, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    fn backward_with_input(
        &self,
        cache: &ForwardCache,
        d_output: &Matrix,
        want_input: bool,
    ) -> Result<(Grad, Option<Matrix>)> {
        let n_layers = self.layers.len();
        if cache.outputs.len() != n_layers
            || cache.inputs.len() != n_layers
            || cache
                .outputs
                .iter()
                .zip(&self.layers)
                .any(|(o, l)| o.cols() != l.out_width())
            || cache
                .inputs
                .iter()
                .zip(&self.layers)
                .any(|(i, l)| i.cols() != l.in_width())
        {
            return Err(Error::shape(
                "forward cache does not belong to this network",
            ));
        }
        let final_out = cache.output();
        d_output.check_same_shape(final_out, "output gradient vs network output")?;
        if !d_output.is_finite() {
            return Err(Error::NonFinite("output gradient"));
        }

        let n = d_output.rows();
        let mut grad = Grad::zeros_like(self);
        let mut g = d_output.clone();
        let mut input_grad = None;
        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            if let Some(mask) = &cache.masks[k] {
                for (v, &m) in g.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *v *= m;
                }
            }
            let y = &cache.outputs[k];
            for r in 0..n {
                layer.activation.backprop_row(y.row(r), g.row_mut(r));
            }
            let a = &cache.inputs[k];
            let gw = &mut grad.weights[k];
            let gb = &mut grad.biases[k];
            for r in 0..n {
                let dz = g.row(r);
                let ar = a.row(r);
                for (o, &d) in dz.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, ar, gw.row_mut(o));
                    }
                    gb[o] += d;
                }
            }
            if k > 0 || want_input {
                let mut prev = Matrix::zeros(n, layer.in_width());
                for r in 0..n {
                    let dz = g.row(r);
                    let pr = prev.row_mut(r);
                    for (o, &d) in dz.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, layer.weights.row(o), pr);
                        }
                    }
                }
                if k == 0 {
                    input_grad = Some(prev);
                    break;
                }
                g = prev;
            }
        }
        if self.l2_coeff > 0.0 {
            let c = 2.0 * self.l2_coeff;
            for (k, layer) in self.layers.iter().enumerate() {
                axpy(c, layer.weights.as_slice(), grad.weights[k].as_mut_slice());
                axpy(c, &layer.biases, &mut grad.biases[k]);
            }
        }
        Ok((grad, input_grad))
    }
}
