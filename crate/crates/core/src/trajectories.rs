//! Reference target generators for the evaluation scenarios.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory `{0}` is not periodic")]
    NotPeriodic(&'static str),
    #[error("unknown scenario `{0}` (expected hover, ellipse, eight2d, eight3d or circle-ramp, optionally with -x2)")]
    UnknownScenario(String),
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Hover,
    Ellipse,
    EightPlanar,
    Eight3d,
    CircleRamp,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Hover => "hover",
            TrajectoryKind::Ellipse => "ellipse",
            TrajectoryKind::EightPlanar => "eight2d",
            TrajectoryKind::Eight3d => "eight3d",
            TrajectoryKind::CircleRamp => "circle-ramp",
        }
    }

    pub fn is_periodic(self) -> bool {
        matches!(self, TrajectoryKind::Ellipse | TrajectoryKind::EightPlanar | TrajectoryKind::Eight3d)
    }
}

/// Shape parameters shared by every scenario (the `[trajectories]` config section).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub center: [f64; 3],
    /// Semi-axis along x, m.
    pub a: f64,
    /// Semi-axis along y, m.
    pub b: f64,
    /// Vertical amplitude of the 3D eight, m.
    pub c_z: f64,
    /// Period at unit speed multiplier, s.
    pub period: f64,
    /// Stress-circle radius, m.
    pub radius: f64,
    /// Stress-circle tangential acceleration, m/s^2.
    pub ramp_accel: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { center: [0.0; 3], a: 1.0, b: 0.5, c_z: 0.3, period: 20.0, radius: 1.0, ramp_accel: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub center: Vector3<f64>,
    pub a: f64,
    pub b: f64,
    pub c_z: f64,
    pub radius: f64,
    pub period: f64,
    pub speed_multiplier: f64,
    pub ramp_accel: f64,
}

impl TrajectorySpec {
    pub fn new(kind: TrajectoryKind, cfg: &TrajectoryConfig) -> Self {
        Self {
            kind,
            center: Vector3::from(cfg.center),
            a: cfg.a,
            b: cfg.b,
            c_z: cfg.c_z,
            radius: cfg.radius,
            period: cfg.period,
            speed_multiplier: 1.0,
            ramp_accel: cfg.ramp_accel,
        }
    }

    pub fn hover(center: Vector3<f64>) -> Self {
        Self { center, ..Self::new(TrajectoryKind::Hover, &TrajectoryConfig::default()) }
    }

    pub fn with_speed(mut self, multiplier: f64) -> Self {
        self.speed_multiplier = multiplier;
        self
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |s: &str| Err(TrajectoryError::Invalid(s.to_string()));
        if !(self.period > 0.0) {
            return bad("period must be positive");
        }
        if !(self.speed_multiplier > 0.0) {
            return bad("speed multiplier must be positive");
        }
        match self.kind {
            TrajectoryKind::Hover => {}
            TrajectoryKind::Ellipse | TrajectoryKind::EightPlanar => {
                if !(self.a > 0.0 && self.b > 0.0) {
                    return bad("semi-axes must be positive");
                }
            }
            TrajectoryKind::Eight3d => {
                if !(self.a > 0.0 && self.b > 0.0 && self.c_z > 0.0) {
                    return bad("sizes must be positive");
                }
            }
            TrajectoryKind::CircleRamp => {
                if !(self.radius > 0.0 && self.ramp_accel > 0.0) {
                    return bad("radius and ramp acceleration must be positive");
                }
            }
        }
        Ok(())
    }

    /// Canonical scenario name, e.g. `ellipse` or `eight3d-x2`.
    pub fn name(&self) -> String {
        if self.speed_multiplier == 1.0 || !self.kind.is_periodic() {
            self.kind.name().to_string()
        } else if self.speed_multiplier.fract() == 0.0 {
            format!("{}-x{}", self.kind.name(), self.speed_multiplier as i64)
        } else {
            format!("{}-x{}", self.kind.name(), self.speed_multiplier)
        }
    }

    /// Parses a scenario name against the configured shapes.
    pub fn from_name(name: &str, cfg: &TrajectoryConfig) -> Result<Self, TrajectoryError> {
        let (base, mult) = match name.rsplit_once("-x") {
            Some((base, m)) => match m.parse::<f64>() {
                Ok(v) if v > 0.0 => (base, v),
                _ => return Err(TrajectoryError::UnknownScenario(name.to_string())),
            },
            None => (name, 1.0),
        };
        let kind = base.parse::<TrajectoryKind>().map_err(|_| TrajectoryError::UnknownScenario(name.to_string()))?;
        Ok(Self::new(kind, cfg).with_speed(mult))
    }

    fn phase(&self, t: f64) -> f64 {
        2.0 * PI * self.speed_multiplier * t / self.period
    }

    /// Offset from the center as a function of the phase angle (periodic kinds).
    fn shape(&self, theta: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Hover | TrajectoryKind::CircleRamp => Vector3::zeros(),
            TrajectoryKind::Ellipse => Vector3::new(self.a * theta.cos(), self.b * theta.sin(), 0.0),
            TrajectoryKind::EightPlanar => Vector3::new(self.a * theta.sin(), self.b * (2.0 * theta).sin(), 0.0),
            TrajectoryKind::Eight3d => {
                Vector3::new(self.a * theta.sin(), self.b * (2.0 * theta).sin(), self.c_z * (2.0 * theta).sin())
            }
        }
    }

    /// d(shape)/d(theta).
    fn shape_tangent(&self, theta: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Hover | TrajectoryKind::CircleRamp => Vector3::zeros(),
            TrajectoryKind::Ellipse => Vector3::new(-self.a * theta.sin(), self.b * theta.cos(), 0.0),
            TrajectoryKind::EightPlanar => Vector3::new(self.a * theta.cos(), 2.0 * self.b * (2.0 * theta).cos(), 0.0),
            TrajectoryKind::Eight3d => Vector3::new(
                self.a * theta.cos(),
                2.0 * self.b * (2.0 * theta).cos(),
                2.0 * self.c_z * (2.0 * theta).cos(),
            ),
        }
    }

    /// Target position at time `t >= 0`.
    pub fn target_at(&self, t: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Hover => self.center,
            TrajectoryKind::CircleRamp => {
                let theta = self.ramp_accel * t * t / (2.0 * self.radius);
                self.center + self.radius * Vector3::new(theta.cos(), theta.sin(), 0.0)
            }
            _ => self.center + self.shape(self.phase(t)),
        }
    }

    /// Target velocity at time `t`.
    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::Hover => Vector3::zeros(),
            TrajectoryKind::CircleRamp => {
                let theta = self.ramp_accel * t * t / (2.0 * self.radius);
                self.ramp_accel * t * Vector3::new(-theta.sin(), theta.cos(), 0.0)
            }
            _ => self.shape_tangent(self.phase(t)) * (2.0 * PI * self.speed_multiplier / self.period),
        }
    }

    /// Tangential speed of the target, m/s.
    pub fn speed_at(&self, t: f64) -> f64 {
        match self.kind {
            TrajectoryKind::CircleRamp => self.ramp_accel * t,
            _ => self.velocity_at(t).norm(),
        }
    }

    /// Mean speed over one period: arc length / (period / multiplier).
    pub fn average_speed(&self) -> Result<f64, TrajectoryError> {
        if !self.kind.is_periodic() {
            return Err(TrajectoryError::NotPeriodic(self.kind.name()));
        }
        let length = adaptive_simpson(&|th| self.shape_tangent(th).norm(), 0.0, 2.0 * PI, 1e-9);
        Ok(length * self.speed_multiplier / self.period)
    }
}

impl FromStr for TrajectoryKind {
    type Err = TrajectoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "hover" => TrajectoryKind::Hover,
            "ellipse" => TrajectoryKind::Ellipse,
            "eight2d" => TrajectoryKind::EightPlanar,
            "eight3d" => TrajectoryKind::Eight3d,
            "circle-ramp" => TrajectoryKind::CircleRamp,
            other => return Err(TrajectoryError::UnknownScenario(other.to_string())),
        })
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Adaptive Simpson quadrature with a relative tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1)
    }
    // seed with a coarse panel split so symmetric integrands cannot fool the first estimate
    let panels = 16;
    let h = (b - a) / panels as f64;
    let coarse: f64 = (0..panels)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            simpson(f(x0), f(0.5 * (x0 + x1)), f(x1), x0, x1)
        })
        .sum();
    let tol = (rel_tol * coarse.abs()).max(f64::MIN_POSITIVE);
    (0..panels)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            recurse(f, x0, x1, f0, fm, f1, simpson(f0, fm, f1, x0, x1), tol / panels as f64, 40)
        })
        .sum()
}
