use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use super::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(num_params: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params], t: 0 }
    }

    pub fn for_net(net: &Mlp<T>, cfg: AdamConfig) -> Self {
        Self::new(net.num_params(), cfg)
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update over a flat parameter/gradient pairing.
    pub fn step_iter<'a, 'b>(
        &mut self,
        params: impl Iterator<Item = &'a mut T>,
        grads: impl Iterator<Item = &'b T>,
        lr: f64,
    ) {
        self.t += 1;
        let b1 = T::c(self.cfg.beta1);
        let b2 = T::c(self.cfg.beta2);
        let bc1 = T::c(1.0 - self.cfg.beta1.powi(self.t));
        let bc2 = T::c(1.0 - self.cfg.beta2.powi(self.t));
        let lr = T::c(lr);
        let eps = T::c(self.cfg.eps);
        let one = T::one();
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Gradients<T>, lr: f64) {
        // params() yields all weights then all biases, matching Gradients::iter
        self.step_iter(net.params_mut(), grads.iter(), lr);
    }
}
