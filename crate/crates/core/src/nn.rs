//! Small dense networks with hand-written backpropagation.
//!
//! Every network here is a stack of affine layers with `tanh` between them and
//! a linear output. Activations are batched row-major (`batch x features`).
//! Gradients are stored in an [`Mlp`] of identical shape, which keeps the
//! optimizer state and the checkpoint layout trivial.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Layer inputs recorded by [`Mlp::forward_tape`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// Builds a network with layer widths `sizes` (input first, output last).
    ///
    /// Weights are uniform in `±1/sqrt(fan_in)`, biases zero. The last layer is
    /// additionally multiplied by `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let scale = if i + 1 == n { output_scale } else { 1.0 };
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound) * scale);
                Linear {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i != last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Tape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = h.dot(&layer.weight) + &layer.bias;
            if i != last {
                out.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = out;
        }
        (h, Tape { inputs })
    }

    /// Accumulates parameter gradients into `grads` given `d loss / d output`.
    ///
    /// Returns `d loss / d input` when `want_input_grad` is set.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: ArrayView2<'_, f64>,
        grads: &mut Mlp,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            let gl = &mut grads.layers[i];
            gl.weight += &input.t().dot(&g);
            gl.bias += &g.sum_axis(Axis(0));
            if i == 0 && !want_input_grad {
                return None;
            }
            let mut gin = g.dot(&self.layers[i].weight.t());
            if i > 0 {
                // input[i] is tanh output of the previous layer
                gin.zip_mut_with(input, |d, &h| *d *= 1.0 - h * h);
            }
            g = gin;
        }
        Some(g)
    }

    pub fn sq_norm(&self) -> f64 {
        self.params().map(|p| p * p).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.params_mut().for_each(|p| *p *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

/// Rescales `grads` so its L2 norm does not exceed `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Mlp, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Mlp,
    v: Mlp,
}

impl Adam {
    pub fn new(template: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: template.zeros_like(),
            v: template.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let lr = self.lr;
        let eps = self.eps;
        for (((p, g), m), v) in params
            .params_mut()
            .zip(grads.params())
            .zip(self.m.params_mut())
            .zip(self.v.params_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
