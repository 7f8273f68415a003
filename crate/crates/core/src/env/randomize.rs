use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::dynamics::QuadParams;

/// Per-episode perturbation of the physical parameters and control delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationSpec {
    /// Relative half-width applied to mass, inertia and drag.
    pub fraction: f64,
    /// Radius of the gravity-bias ball, m/s^2.
    pub g_bias_max: f64,
    /// Control delay interval, ms.
    pub delay_ms: [f64; 2],
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self { fraction: 0.10, g_bias_max: 0.3, delay_ms: [0.0, 10.0] }
    }
}

impl RandomizationSpec {
    pub fn none() -> Self {
        Self { fraction: 0.0, g_bias_max: 0.0, delay_ms: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let [lo, hi] = self.delay_ms;
        let ok = (0.0..=0.5).contains(&self.fraction)
            && self.g_bias_max >= 0.0
            && self.g_bias_max.is_finite()
            && lo >= 0.0
            && hi >= lo
            && hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig(format!("randomization out of range: {self:?}")))
        }
    }

    pub fn sample_params<R: Rng + ?Sized>(&self, nominal: &QuadParams, rng: &mut R) -> QuadParams {
        let mut p = *nominal;
        p.mass = self.scale(nominal.mass, rng);
        for i in 0..3 {
            p.inertia[i] = self.scale(nominal.inertia[i], rng);
        }
        for i in 0..3 {
            p.drag[i] = self.scale(nominal.drag[i], rng);
        }
        let bias = Vector3::from(nominal.g_bias) + uniform_in_ball(self.g_bias_max, rng);
        p.g_bias = bias.into();
        p
    }

    /// Delay of one control input, seconds.
    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let [lo, hi] = self.delay_ms;
        if hi > lo {
            rng.random_range(lo..=hi) * 1e-3
        } else {
            lo * 1e-3
        }
    }

    fn scale<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random_range(-1.0..=1.0);
        x * (1.0 + self.fraction * u)
    }
}

pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Uniform sample from the closed ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Vector3<f64> {
    let dir = unit_vector(rng);
    let u: f64 = rng.random();
    dir * (radius * u.cbrt())
}
