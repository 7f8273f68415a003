use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Exponent on the per-axis product.
    pub beta: f64,
    /// Effort weight.
    pub k_u: f64,
    /// Maximum allowed distance from the target, m.
    pub e_m: f64,
    /// Crash penalty.
    pub c: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { beta: 1.0, k_u: 0.05, e_m: 3.0, c: 50.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.beta > 0.0 && self.k_u >= 0.0 && self.e_m > 0.0 && self.c > 0.0;
        if ok && [self.beta, self.k_u, self.e_m, self.c].iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig(format!("reward config out of range: {self:?}")))
        }
    }

    /// Tracking term `(r_x r_y r_z)^beta` with `r_j = max(0, 1 - |e_j|)`.
    pub fn tracking(&self, e: &Vector3<f64>) -> f64 {
        let prod: f64 = e.iter().map(|ej| (1.0 - ej.abs()).max(0.0)).product();
        prod.powf(self.beta)
    }

    /// Effort term `k_u |u| / (1 + |u|)`.
    pub fn effort(&self, u: &[f64]) -> f64 {
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.k_u * n / (1.0 + n)
    }

    pub fn reward(&self, e: &Vector3<f64>, u: &[f64]) -> f64 {
        if e.norm() < self.e_m {
            self.tracking(e) - self.effort(u)
        } else {
            -self.c
        }
    }
}
