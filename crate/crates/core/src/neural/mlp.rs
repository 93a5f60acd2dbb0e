//! Fully connected networks on ndarray with hand-written backprop.
//!
//! Batches are row-major: one sample per row. Layer `l` computes
//! `a_l = act(a_{l-1} W_l + b_l)` with `W_l` of shape `(in, out)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Weights and biases of one layer; also used as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: Array2::zeros((n_in, n_out)),
            b: Array1::zeros(n_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
    pub head: Activation,
}

/// Activations saved by [`Mlp::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

pub type Gradients = Vec<Layer>;

impl Mlp {
    /// Layer sizes `dims = [in, h1, ..., out]`, initialized uniformly in
    /// `±1/sqrt(fan_in)`.
    pub fn new(dims: &[usize], hidden: Activation, head: Activation, rng: &mut RandomStream) -> Self {
        let mut net = Self::zeros(dims, hidden, head);
        for l in &mut net.layers {
            let k = 1.0 / (l.w.nrows() as f64).sqrt();
            l.w.mapv_inplace(|_| rng.uniform_range(-k, k));
            l.b.mapv_inplace(|_| rng.uniform_range(-k, k));
        }
        net
    }

    pub fn zeros(dims: &[usize], hidden: Activation, head: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect(),
            hidden,
            head,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.w.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers.len() {
            self.head
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(x)?.output().row(0).to_vec())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let mut z = acts[l].dot(&layer.w);
            z += &layer.b;
            z.mapv_inplace(|v| act.apply(v));
            acts.push(z);
        }
        Ok(ForwardCache { acts })
    }

    /// Gradients of `sum(output * upstream)` with respect to the parameters
    /// and to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for l in (0..n).rev() {
            let act = self.activation(l);
            Zip::from(&mut delta)
                .and(&cache.acts[l + 1])
                .for_each(|d, &y| *d *= act.deriv_from_output(y));
            let gw = cache.acts[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[l].w.t());
            grads.push(Layer { w: gw, b: gb });
            delta = next;
        }
        grads.reverse();
        (grads, delta)
    }

    /// `self = (1 - tau) self + tau src`.
    pub fn polyak(&mut self, src: &Mlp, tau: f64) {
        let keep = 1.0 - tau;
        for (t, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut t.w).and(&s.w).for_each(|a, &b| *a = keep * *a + tau * b);
            Zip::from(&mut t.b).and(&s.b).for_each(|a, &b| *a = keep * *a + tau * b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Parameters flattened layer by layer (weights row-major, then biases).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        let mut it = p.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }
}

/// Flattens gradients in the same order as [`Mlp::flat`].
pub fn flatten(grads: &[Layer]) -> Vec<f64> {
    grads.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
}

/// Result of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because a ReLU changed state within the stencil.
    pub skipped: usize,
}

/// Compares [`Mlp::backward`] with central differences of
/// `sum(output * upstream)`. The relative error of each parameter is
/// `|g - g_fd| / max(|g|, |g_fd|, 1e-6)`.
pub fn gradient_check(net: &Mlp, x: ArrayView2<f64>, upstream: ArrayView2<f64>, delta: f64) -> Result<GradientCheck> {
    let cache = net.forward_batch(x)?;
    let (grads, _) = net.backward(&cache, upstream);
    let analytic = flatten(&grads);
    let theta = net.flat();
    let mut probe = net.clone();
    let hidden_pattern = |c: &ForwardCache| -> Vec<bool> {
        c.acts[1..c.acts.len() - 1].iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect()
    };
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut p = theta.clone();
    for i in 0..theta.len() {
        p[i] = theta[i] + delta;
        probe.set_flat(&p)?;
        let plus = probe.forward_batch(x)?;
        p[i] = theta[i] - delta;
        probe.set_flat(&p)?;
        let minus = probe.forward_batch(x)?;
        p[i] = theta[i];
        if net.hidden == Activation::Relu && hidden_pattern(&plus) != hidden_pattern(&minus) {
            out.skipped += 1;
            continue;
        }
        let f = |c: &ForwardCache| (c.output() * &upstream).sum();
        let numeric = (f(&plus) - f(&minus)) / (2.0 * delta);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}
