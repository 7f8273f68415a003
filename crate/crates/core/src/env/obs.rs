//! Observation-space configurations and per-step observation slices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorFrame {
    World,
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsExtras {
    None,
    VelocityWorld,
    Quaternion,
}

/// Which signals the actor sees, and over how many steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObsConfig {
    pub frame: ErrorFrame,
    pub include_r: bool,
    pub include_omega: bool,
    pub include_prev_action: bool,
    pub extras: ObsExtras,
    /// History length H.
    pub history: usize,
}

pub const DEFAULT_HISTORY: usize = 10;

/// The eight base configurations followed by the two input-ablation variants.
pub const CONFIG_NAMES: [&str; 10] =
    ["eW-R-w-u", "eW-R-u", "eW-w-u", "eW-u", "eB-R-w-u", "eB-R-u", "eB-w-u", "eB-u", "eW-vW-R-u", "eW-q-u"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown observation config `{name}`; valid names: {}", CONFIG_NAMES.join(", "))]
pub struct UnknownObsConfig {
    pub name: String,
}

impl ObsConfig {
    pub fn new(frame: ErrorFrame, include_r: bool, include_omega: bool) -> Self {
        Self {
            frame,
            include_r,
            include_omega,
            include_prev_action: true,
            extras: ObsExtras::None,
            history: DEFAULT_HISTORY,
        }
    }

    pub fn with_history(mut self, history: usize) -> Self {
        self.history = history;
        self
    }

    pub fn with_extras(mut self, extras: ObsExtras) -> Self {
        self.extras = extras;
        self
    }

    /// All ten named configurations at the default history length.
    pub fn all() -> Vec<ObsConfig> {
        CONFIG_NAMES.iter().map(|n| n.parse().expect("canonical name")).collect()
    }

    /// Width N of one observation slice.
    pub fn step_width(&self) -> usize {
        3 + if self.include_r { 9 } else { 0 }
            + if self.include_omega { 3 } else { 0 }
            + match self.extras {
                ObsExtras::None => 0,
                ObsExtras::VelocityWorld => 3,
                ObsExtras::Quaternion => 4,
            }
            + if self.include_prev_action { 4 } else { 0 }
    }

    /// Width N * H of the flattened actor input.
    pub fn input_width(&self) -> usize {
        self.step_width() * self.history
    }

    pub fn name(&self) -> String {
        let mut parts = vec![match self.frame {
            ErrorFrame::World => "eW",
            ErrorFrame::Body => "eB",
        }];
        if self.extras == ObsExtras::VelocityWorld {
            parts.push("vW");
        }
        if self.include_r {
            parts.push("R");
        }
        if self.extras == ObsExtras::Quaternion {
            parts.push("q");
        }
        if self.include_omega {
            parts.push("w");
        }
        if self.include_prev_action {
            parts.push("u");
        }
        parts.join("-")
    }

    /// Builds one observation slice in the fixed order `[e, R, w, vW, q, u]`.
    pub fn slice(&self, signals: &ObsSignals) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.step_width());
        let e = match self.frame {
            ErrorFrame::World => signals.error_world,
            ErrorFrame::Body => body_frame_error(&signals.error_world, &signals.rotation),
        };
        out.extend_from_slice(e.as_slice());
        if self.include_r {
            push_rows(&mut out, &signals.rotation);
        }
        if self.include_omega {
            out.extend_from_slice(signals.omega.as_slice());
        }
        match self.extras {
            ObsExtras::None => {}
            ObsExtras::VelocityWorld => out.extend_from_slice(signals.velocity_world.as_slice()),
            ObsExtras::Quaternion => out.extend_from_slice(&quaternion_wxyz(&signals.rotation)),
        }
        if self.include_prev_action {
            out.extend_from_slice(&signals.prev_action);
        }
        out
    }

    /// The observation of a vehicle hovering exactly at the target after zero actions.
    pub fn hover_observation(&self) -> Vec<f64> {
        let slice = self.slice(&ObsSignals::hover());
        slice.repeat(self.history)
    }
}

impl FromStr for ObsConfig {
    type Err = UnknownObsConfig;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || UnknownObsConfig { name: s.to_string() };
        let mut tokens = s.split('-');
        let frame = match tokens.next() {
            Some("eW") => ErrorFrame::World,
            Some("eB") => ErrorFrame::Body,
            _ => return Err(err()),
        };
        let mut cfg = ObsConfig::new(frame, false, false);
        cfg.include_prev_action = false;
        for tok in tokens {
            let seen = match tok {
                "R" => std::mem::replace(&mut cfg.include_r, true),
                "w" => std::mem::replace(&mut cfg.include_omega, true),
                "u" => std::mem::replace(&mut cfg.include_prev_action, true),
                "vW" | "q" if cfg.extras != ObsExtras::None => true,
                "vW" => {
                    cfg.extras = ObsExtras::VelocityWorld;
                    false
                }
                "q" => {
                    cfg.extras = ObsExtras::Quaternion;
                    false
                }
                _ => return Err(err()),
            };
            if seen {
                return Err(err());
            }
        }
        if !cfg.include_prev_action || cfg.name() != s {
            return Err(err());
        }
        Ok(cfg)
    }
}

impl fmt::Display for ObsConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Raw signals from which an observation slice is assembled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsSignals {
    pub error_world: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub velocity_world: Vector3<f64>,
    /// Previous applied action, normalised to [-1, 1].
    pub prev_action: [f64; 4],
}

impl ObsSignals {
    pub fn hover() -> Self {
        Self {
            error_world: Vector3::zeros(),
            rotation: Matrix3::identity(),
            omega: Vector3::zeros(),
            velocity_world: Vector3::zeros(),
            prev_action: [0.0; 4],
        }
    }
}

/// Expresses a world-frame error in the body frame: `R^T e`.
pub fn body_frame_error(e_world: &Vector3<f64>, r: &Matrix3<f64>) -> Vector3<f64> {
    r.transpose() * e_world
}

pub(crate) fn push_rows(out: &mut Vec<f64>, r: &Matrix3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            out.push(r[(i, j)]);
        }
    }
}

/// Unit quaternion `(w, x, y, z)` of a rotation, with `w >= 0`.
pub fn quaternion_wxyz(r: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{axis_angle, rot_z};
    use approx::assert_relative_eq;

    #[test]
    fn table_widths() {
        let widths: Vec<usize> = ObsConfig::all().iter().map(ObsConfig::step_width).collect();
        assert_eq!(widths, vec![19, 16, 10, 7, 19, 16, 10, 7, 19, 11]);
        let full: ObsConfig = "eW-R-w-u".parse().unwrap();
        assert_eq!(full.input_width(), 190);
        let ebu: ObsConfig = "eB-u".parse().unwrap();
        assert_eq!(ebu.input_width(), 70);
    }

    #[test]
    fn names_round_trip() {
        for name in CONFIG_NAMES {
            let cfg: ObsConfig = name.parse().unwrap();
            assert_eq!(cfg.name(), name);
        }
        for bad in ["eQ-u", "eW", "eW-R", "R-eW-u", "eW-u-R", "eW-R-R-u", "eW-vW-q-u", ""] {
            let err = bad.parse::<ObsConfig>().unwrap_err();
            assert!(err.to_string().contains("eW-R-u"), "{err}");
        }
    }

    #[test]
    fn body_frame_error_cases() {
        let e = Vector3::new(0.3, -0.2, 0.9);
        assert_eq!(body_frame_error(&e, &Matrix3::identity()), e);
        let yaw = rot_z(std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(
            body_frame_error(&Vector3::new(1.0, 0.0, 0.0), &yaw),
            Vector3::new(0.0, -1.0, 0.0),
            epsilon = 1e-15
        );
        let r = axis_angle(&Vector3::new(1.0, 2.0, -0.5), 2.2);
        assert_relative_eq!(body_frame_error(&e, &r).norm(), e.norm(), epsilon = 1e-14);
    }

    #[test]
    fn hover_observation_is_error_identity_zero_repeated() {
        let cfg: ObsConfig = "eW-R-w-u".parse().unwrap();
        let o0 = cfg.hover_observation();
        assert_eq!(o0.len(), 190);
        let slice = [0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0., 0.];
        for chunk in o0.chunks(19) {
            assert_eq!(chunk, slice);
        }
    }

    #[test]
    fn slice_order_and_extras() {
        let r = axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.5);
        let sig = ObsSignals {
            error_world: Vector3::new(1.0, 2.0, 3.0),
            rotation: r,
            omega: Vector3::new(4.0, 5.0, 6.0),
            velocity_world: Vector3::new(7.0, 8.0, 9.0),
            prev_action: [0.1, 0.2, 0.3, 0.4],
        };
        let v: ObsConfig = "eW-vW-R-u".parse().unwrap();
        let s = v.slice(&sig);
        assert_eq!(s.len(), 19);
        assert_eq!(&s[0..3], &[1.0, 2.0, 3.0]);
        assert_eq!(s[3], r[(0, 0)]);
        assert_eq!(s[4], r[(0, 1)]);
        assert_eq!(&s[12..15], &[7.0, 8.0, 9.0]);
        assert_eq!(&s[15..19], &[0.1, 0.2, 0.3, 0.4]);

        let q: ObsConfig = "eW-q-u".parse().unwrap();
        let s = q.slice(&sig);
        assert_eq!(s.len(), 11);
        let half = 0.25f64;
        assert_relative_eq!(s[3], half.cos(), epsilon = 1e-12);
        assert_relative_eq!(s[5], half.sin(), epsilon = 1e-12);
    }

    #[test]
    fn quaternion_sign_is_canonical() {
        let r = axis_angle(&Vector3::new(0.0, 0.0, 1.0), 3.0);
        let q = quaternion_wxyz(&r);
        assert!(q[0] >= 0.0);
        let r2 = axis_angle(&Vector3::new(0.0, 0.0, -1.0), 2.0 * std::f64::consts::PI - 3.0);
        assert_relative_eq!(quaternion_wxyz(&r2)[..], q[..], epsilon = 1e-12);
    }
}
