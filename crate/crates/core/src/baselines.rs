//! Cascaded PID position controller emitting collective thrust and body rates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{log_so3, ControlInput, InputLimits, QuadParams, QuadState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PidError {
    #[error("invalid PID gains: {0}")]
    InvalidGains(String),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    /// Outer position loop, per axis.
    pub pos_kp: [f64; 3],
    pub pos_ki: [f64; 3],
    pub pos_kd: [f64; 3],
    /// Inner attitude loop, per body axis.
    pub att_kp: [f64; 3],
    pub att_kd: [f64; 3],
    /// Per-axis bound on the position-error integrators, m s.
    pub integrator_limit: [f64; 3],
    /// Errors larger than this (m) do not accumulate into the integrators.
    pub integrator_zone: f64,
    /// Maximum commanded tilt, rad.
    pub tilt_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            pos_kp: [10.0, 10.0, 10.0],
            pos_ki: [0.5, 0.5, 1.0],
            pos_kd: [5.0, 5.0, 5.0],
            att_kp: [12.0, 12.0, 4.0],
            att_kd: [0.0; 3],
            integrator_limit: [0.5; 3],
            integrator_zone: 0.1,
            tilt_max: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), PidError> {
        let gains = self.pos_kp.iter().chain(&self.pos_ki).chain(&self.pos_kd).chain(&self.att_kp).chain(&self.att_kd);
        if !gains.clone().all(|&g| g >= 0.0 && g.is_finite()) {
            return Err(PidError::InvalidGains("gains must be finite and non-negative".into()));
        }
        if !self.integrator_limit.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return Err(PidError::InvalidGains("integrator limits must be positive".into()));
        }
        if !(self.integrator_zone >= 0.0) {
            return Err(PidError::InvalidGains("integrator zone must be non-negative".into()));
        }
        if !(self.tilt_max > 0.0 && self.tilt_max < std::f64::consts::FRAC_PI_2) {
            return Err(PidError::InvalidGains("tilt limit must lie in (0, pi/2)".into()));
        }
        Ok(())
    }
}

/// Integrator memory of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: Vector3<f64>,
    /// Time accumulated over all updates, s.
    pub time: f64,
}

/// Vehicle constants the controller assumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidPlant {
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub limits: InputLimits,
}

impl PidPlant {
    pub fn nominal(params: &QuadParams, limits: InputLimits) -> Self {
        Self { mass: params.mass, gravity: Vector3::from(params.gravity), limits }
    }
}

/// Level attitude with the body z axis along `z` and zero yaw.
fn attitude_from_thrust_direction(z: &Vector3<f64>) -> Matrix3<f64> {
    let x_c = Vector3::x();
    let y = z.cross(&x_c);
    let y = if y.norm() > 1e-9 { y.normalize() } else { Vector3::y() };
    let x = y.cross(z);
    Matrix3::from_columns(&[x, y, *z])
}

/// Limits the angle between `f` and the vertical to `tilt_max`, keeping a positive vertical part.
fn limit_tilt(f: Vector3<f64>, tilt_max: f64, min_vertical: f64) -> Vector3<f64> {
    let fz = f.z.max(min_vertical);
    let horizontal = Vector3::new(f.x, f.y, 0.0);
    let cap = fz * tilt_max.tan();
    let h = horizontal.norm();
    let horizontal = if h > cap { horizontal * (cap / h) } else { horizontal };
    horizontal + Vector3::new(0.0, 0.0, fz)
}

/// One controller update. Pure in its arguments.
pub fn pid_control(
    quad: &QuadState,
    target: &Vector3<f64>,
    gains: &PidGains,
    state: &PidState,
    dt: f64,
    plant: &PidPlant,
) -> Result<(ControlInput, PidState), PidError> {
    if !(dt > 0.0) {
        return Err(PidError::InvalidStep(dt));
    }
    let err = target - quad.p;
    let mut integral = state.integral;
    for i in 0..3 {
        if err[i].abs() < gains.integrator_zone {
            integral[i] += err[i] * dt;
        }
        let l = gains.integrator_limit[i];
        integral[i] = integral[i].clamp(-l, l);
    }
    let acc =
        Vector3::from_fn(|i, _| gains.pos_kp[i] * err[i] + gains.pos_ki[i] * integral[i] - gains.pos_kd[i] * quad.v[i]);
    let force = limit_tilt(plant.mass * (acc - plant.gravity), gains.tilt_max, 0.1 * plant.mass * plant.gravity.norm());
    let f_cmd = force.dot(&quad.r.column(2));

    let r_des = attitude_from_thrust_direction(&force.normalize());
    let att_err = log_so3(&(r_des.transpose() * quad.r));
    let omega_cmd = Vector3::from_fn(|i, _| -gains.att_kp[i] * att_err[i] - gains.att_kd[i] * quad.omega[i]);
    let input = ControlInput::new(f_cmd, omega_cmd).clamped(&plant.limits);
    Ok((input, PidState { integral, time: state.time + dt }))
}

/// Stateful wrapper around [`pid_control`].
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub plant: PidPlant,
    pub state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains, plant: PidPlant) -> Result<Self, PidError> {
        gains.validate()?;
        Ok(Self { gains, plant, state: PidState::default() })
    }

    pub fn reset(&mut self) {
        self.state = PidState::default();
    }

    pub fn control(&mut self, quad: &QuadState, target: &Vector3<f64>, dt: f64) -> Result<ControlInput, PidError> {
        let (input, next) = pid_control(quad, target, &self.gains, &self.state, dt, &self.plant)?;
        self.state = next;
        Ok(input)
    }
}
