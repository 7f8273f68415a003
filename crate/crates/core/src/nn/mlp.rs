//! Dense feed-forward networks with reverse-mode gradients.
//!
//! Batches are row-major: a batch of `b` inputs of width `n` is a slice of
//! length `b * n`. Weights are stored `out x in`, row-major.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh_fast(),
            Activation::Relu => z.max(T::zero()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output<T: Real>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, weights: vec![T::zero(); in_dim * out_dim], bias: vec![T::zero(); out_dim], activation }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let rows = out_dim.max(in_dim);
        let cols = out_dim.min(in_dim);
        let gauss = DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        // sign fix so the distribution is uniform over the orthogonal group
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let w = if out_dim >= in_dim { q } else { q.transpose() };
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for o in 0..out_dim {
            for i in 0..in_dim {
                layer.weights[o * in_dim + i] = T::c(gain * w[(o, i)]);
            }
        }
        layer
    }

    /// Weights and bias drawn from `U(-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let dist = Uniform::new_inclusive(-scale, scale).expect("valid init range");
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = T::c(dist.sample(rng));
        }
        layer
    }

    fn forward_into(&self, x: &[T], batch: usize, out: &mut Vec<T>) {
        out.clear();
        out.reserve(batch * self.out_dim);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias);
        }
        // Z = X * W^T + b
        unsafe {
            T::gemm(
                batch,
                self.in_dim,
                self.out_dim,
                T::one(),
                x.as_ptr(),
                self.in_dim as isize,
                1,
                self.weights.as_ptr(),
                1,
                self.in_dim as isize,
                T::one(),
                out.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        if self.activation != Activation::Linear {
            for z in out.iter_mut() {
                *z = self.activation.apply(*z);
            }
        }
    }
}

/// Multilayer perceptron parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    batch: usize,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { batch: 0, acts: Vec::new() }
    }

    pub fn clear(&mut self) {
        self.acts.clear();
        self.batch = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients with the same shape as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(NnError::Shape(format!("layer {i} storage does not match its dims")));
            }
        }
        Ok(Self { layers })
    }

    /// Zero-initialised network with the given widths and per-layer activations.
    pub fn zeros(widths: &[usize], activations: &[Activation]) -> Result<Self, NnError> {
        if widths.len() != activations.len() + 1 {
            return Err(NnError::Shape("need one activation per layer".into()));
        }
        Self::new(widths.windows(2).zip(activations).map(|(w, &a)| Dense::zeros(w[0], w[1], a)).collect())
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, weights of every layer first, then biases.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter()).chain(self.layers.iter().flat_map(|l| l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        let (w, b): (Vec<_>, Vec<_>) = self.layers.iter_mut().map(|l| (&mut l.weights, &mut l.bias)).unzip();
        w.into_iter().flatten().chain(b.into_iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<(), NnError> {
        if batch == 0 || x.len() != batch * self.input_dim() {
            return Err(NnError::Shape(format!(
                "input of length {} is not a batch of {} x {}",
                x.len(),
                batch,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        self.check_input(x, batch)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that records activations for a later [`Mlp::backward`].
    pub fn forward_tape<'t>(&self, x: &[T], batch: usize, tape: &'t mut Tape<T>) -> Result<&'t [T], NnError> {
        self.check_input(x, batch)?;
        tape.batch = batch;
        tape.acts.resize_with(self.layers.len() + 1, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = tape.acts.split_at_mut(i + 1);
            layer.forward_into(&head[i], batch, &mut tail[0]);
        }
        Ok(tape.output())
    }

    /// Reverse pass for the forward pass stored in `tape`.
    ///
    /// `d_out` is the gradient of a scalar loss with respect to the network output.
    /// Parameter gradients are *added* into `grads`. Returns the gradient with
    /// respect to the input when `want_input_grad` is set.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        d_out: &[T],
        grads: &mut Gradients<T>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>, NnError> {
        if tape.acts.len() != self.layers.len() + 1 {
            return Err(NnError::NoForwardCache);
        }
        let batch = tape.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(NnError::Shape(format!(
                "upstream gradient of length {} does not match output {} x {}",
                d_out.len(),
                batch,
                self.output_dim()
            )));
        }
        let mut delta = d_out.to_vec();
        let mut input_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &tape.acts[i + 1];
            if layer.activation != Activation::Linear {
                for (d, &a) in delta.iter_mut().zip(out) {
                    *d *= layer.activation.derivative_from_output(a);
                }
            }
            let x = &tape.acts[i];
            // dW += dZ^T X
            unsafe {
                T::gemm(
                    layer.out_dim,
                    batch,
                    layer.in_dim,
                    T::one(),
                    delta.as_ptr(),
                    1,
                    layer.out_dim as isize,
                    x.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    T::one(),
                    grads.weights[i].as_mut_ptr(),
                    layer.in_dim as isize,
                    1,
                );
            }
            let gb = &mut grads.biases[i];
            for row in delta.chunks_exact(layer.out_dim) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if i > 0 || want_input_grad {
                // dX = dZ W
                let mut dx = vec![T::zero(); batch * layer.in_dim];
                unsafe {
                    T::gemm(
                        batch,
                        layer.out_dim,
                        layer.in_dim,
                        T::one(),
                        delta.as_ptr(),
                        layer.out_dim as isize,
                        1,
                        layer.weights.as_ptr(),
                        layer.in_dim as isize,
                        1,
                        T::zero(),
                        dx.as_mut_ptr(),
                        layer.in_dim as isize,
                        1,
                    );
                }
                if i == 0 {
                    input_grad = Some(dx);
                } else {
                    delta = dx;
                }
            }
        }
        Ok(input_grad)
    }

    /// Gradient with respect to the input only, skipping parameter gradients.
    pub fn input_gradient(&self, tape: &Tape<T>, d_out: &[T]) -> Result<Vec<T>, NnError> {
        if tape.acts.len() != self.layers.len() + 1 {
            return Err(NnError::NoForwardCache);
        }
        let batch = tape.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(NnError::Shape("upstream gradient shape".into()));
        }
        let mut delta = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Linear {
                for (d, &a) in delta.iter_mut().zip(&tape.acts[i + 1]) {
                    *d *= layer.activation.derivative_from_output(a);
                }
            }
            let mut dx = vec![T::zero(); batch * layer.in_dim];
            unsafe {
                T::gemm(
                    batch,
                    layer.out_dim,
                    layer.in_dim,
                    T::one(),
                    delta.as_ptr(),
                    layer.out_dim as isize,
                    1,
                    layer.weights.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    T::zero(),
                    dx.as_mut_ptr(),
                    layer.in_dim as isize,
                    1,
                );
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// `self = tau * online + (1 - tau) * self`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp<T>, tau: T) {
        let keep = T::one() - tau;
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = tau * *o + keep * *t;
        }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: l.weights.iter().map(|w| U::c(w.to_f64().unwrap())).collect(),
                    bias: l.bias.iter().map(|w| U::c(w.to_f64().unwrap())).collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}
