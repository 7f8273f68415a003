//! Rigid-body quadrotor driven by collective thrust and body rates.
//!
//! The thrust and the body rates follow first-order responses towards their
//! commanded values; the translational and rotational kinematics are exact.
//! A control input is held constant across each integration interval.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub const GRAVITY: f64 = 9.81;

/// Frobenius threshold below which a matrix is already treated as a rotation.
const ORTHONORMAL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("non-finite value in state or input")]
    NonFiniteState,
    #[error("integration diverged: `{0}` became non-finite")]
    IntegrationDiverged(&'static str),
    #[error("matrix is not close to a proper rotation (det <= 0)")]
    DegenerateRotation,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    /// World-frame position, m.
    pub p: Vector3<f64>,
    /// World-frame velocity, m/s.
    pub v: Vector3<f64>,
    /// Body-to-world rotation.
    pub r: Matrix3<f64>,
    /// Body rates, rad/s.
    pub omega: Vector3<f64>,
    /// Collective thrust, N.
    pub f: f64,
}

impl QuadState {
    /// Level hover at `p` with thrust `f`.
    pub fn hover_at(p: Vector3<f64>, f: f64) -> Self {
        Self { p, v: Vector3::zeros(), r: Matrix3::identity(), omega: Vector3::zeros(), f }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.r.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.f.is_finite()
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        if !self.p.iter().all(|x| x.is_finite()) {
            Some("p")
        } else if !self.v.iter().all(|x| x.is_finite()) {
            Some("v")
        } else if !self.r.iter().all(|x| x.is_finite()) {
            Some("R")
        } else if !self.omega.iter().all(|x| x.is_finite()) {
            Some("omega")
        } else if !self.f.is_finite() {
            Some("f")
        } else {
            None
        }
    }

    fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            p: self.p + d.dp * h,
            v: self.v + d.dv * h,
            r: self.r + d.dr * h,
            omega: self.omega + d.domega * h,
            f: self.f + d.df * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    /// Mass, kg.
    pub mass: f64,
    /// Diagonal inertia (Jx, Jy, Jz), kg m^2.
    pub inertia: [f64; 3],
    /// Thrust response rate, 1/s.
    pub k_f: f64,
    /// Per-axis body-rate response rate, 1/s.
    pub k_omega: [f64; 3],
    /// Linear drag coefficients, N s/m.
    pub drag: [f64; 3],
    /// Gravity vector, m/s^2.
    pub gravity: [f64; 3],
    /// Additive gravity bias, m/s^2.
    pub g_bias: [f64; 3],
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.75,
            inertia: [0.0025, 0.0021, 0.0043],
            k_f: 20.0,
            k_omega: [25.0, 25.0, 12.0],
            drag: [0.10, 0.10, 0.15],
            gravity: [0.0, 0.0, -GRAVITY],
            g_bias: [0.0; 3],
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |what: &str| Err(DynamicsError::InvalidParams(what.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !self.inertia.iter().all(|&j| j > 0.0) {
            return bad("inertia entries must be positive");
        }
        if !(self.k_f > 0.0) {
            return bad("k_f must be positive");
        }
        if !self.k_omega.iter().all(|&k| k > 0.0) {
            return bad("k_omega entries must be positive");
        }
        if !self.drag.iter().all(|&k| k >= 0.0) {
            return bad("drag coefficients must be non-negative");
        }
        if !self.gravity.iter().chain(&self.g_bias).all(|x| x.is_finite()) {
            return bad("gravity must be finite");
        }
        Ok(())
    }

    /// Thrust that balances gravity (without bias) for this mass.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * -self.gravity[2]
    }

    fn total_gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity) + Vector3::from(self.g_bias)
    }
}

/// Commanded collective thrust (N) and body rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub f_cmd: f64,
    pub omega_cmd: Vector3<f64>,
}

impl ControlInput {
    pub fn new(f_cmd: f64, omega_cmd: Vector3<f64>) -> Self {
        Self { f_cmd, omega_cmd }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::new(params.hover_thrust(), Vector3::zeros())
    }

    pub fn clamped(&self, limits: &InputLimits) -> Self {
        let w = &limits.omega_max;
        Self {
            f_cmd: self.f_cmd.clamp(0.0, limits.f_max),
            omega_cmd: Vector3::new(
                self.omega_cmd.x.clamp(-w[0], w[0]),
                self.omega_cmd.y.clamp(-w[1], w[1]),
                self.omega_cmd.z.clamp(-w[2], w[2]),
            ),
        }
    }
}

/// Actuator command bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub f_max: f64,
    pub omega_max: [f64; 3],
}

impl InputLimits {
    pub fn for_params(params: &QuadParams) -> Self {
        Self { f_max: 4.0 * params.hover_thrust(), omega_max: [5.0, 5.0, 2.0] }
    }
}

impl Default for InputLimits {
    fn default() -> Self {
        Self::for_params(&QuadParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dr: Matrix3<f64>,
    pub domega: Vector3<f64>,
    pub df: f64,
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn acceleration(state: &QuadState, params: &QuadParams) -> Vector3<f64> {
    let drag = Vector3::new(-params.drag[0] * state.v.x, -params.drag[1] * state.v.y, -params.drag[2] * state.v.z);
    (state.r.column(2) * state.f + drag) / params.mass + params.total_gravity()
}

/// Time derivative of the state under a held input.
///
/// The rate loop is written as a torque `J k_w (w_cmd - w)`, so `k_omega` is a
/// response rate in 1/s independent of the inertia.
pub fn derivative(
    state: &QuadState,
    input: &ControlInput,
    params: &QuadParams,
) -> Result<StateDerivative, DynamicsError> {
    if !state.is_finite() || !input.f_cmd.is_finite() || !input.omega_cmd.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(derivative_unchecked(state, input, params))
}

fn derivative_unchecked(state: &QuadState, input: &ControlInput, params: &QuadParams) -> StateDerivative {
    let w = state.omega;
    let j = Vector3::from(params.inertia);
    let jw = j.component_mul(&w);
    let rate_err = input.omega_cmd - w;
    let gyro = w.cross(&jw);
    let domega = Vector3::new(
        params.k_omega[0] * rate_err.x - gyro.x / j.x,
        params.k_omega[1] * rate_err.y - gyro.y / j.y,
        params.k_omega[2] * rate_err.z - gyro.z / j.z,
    );
    StateDerivative {
        dp: state.v,
        dv: acceleration(state, params),
        dr: state.r * skew(&w),
        domega,
        df: params.k_f * (input.f_cmd - state.f),
    }
}

/// Linear acceleration of the vehicle, independent of the commanded input.
pub fn linear_acceleration(state: &QuadState, params: &QuadParams) -> Result<Vector3<f64>, DynamicsError> {
    if !state.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    Ok(acceleration(state, params))
}

/// One classical RK4 step of length `dt` with the input held.
///
/// The rotation is projected back onto SO(3) and the thrust clamped at zero.
pub fn step(state: &QuadState, input: &ControlInput, params: &QuadParams, dt: f64) -> Result<QuadState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let k1 = derivative(state, input, params)?;
    let k2 = derivative_unchecked(&state.advanced(&k1, 0.5 * dt), input, params);
    let k3 = derivative_unchecked(&state.advanced(&k2, 0.5 * dt), input, params);
    let k4 = derivative_unchecked(&state.advanced(&k3, dt), input, params);
    let h6 = dt / 6.0;
    let mut next = QuadState {
        p: state.p + (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp) * h6,
        v: state.v + (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv) * h6,
        r: state.r + (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr) * h6,
        omega: state.omega + (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega) * h6,
        f: state.f + (k1.df + 2.0 * k2.df + 2.0 * k3.df + k4.df) * h6,
    };
    if let Some(field) = next.first_non_finite() {
        return Err(DynamicsError::IntegrationDiverged(field));
    }
    next.r = orthonormalize(&next.r).map_err(|_| DynamicsError::IntegrationDiverged("R"))?;
    next.f = next.f.max(0.0);
    Ok(next)
}

/// Integrates `duration` seconds in `substeps` equal RK4 steps.
pub fn step_substeps(
    state: &QuadState,
    input: &ControlInput,
    params: &QuadParams,
    duration: f64,
    substeps: usize,
) -> Result<QuadState, DynamicsError> {
    let n = substeps.max(1);
    let h = duration / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step(&s, input, params, h)?;
    }
    Ok(s)
}

/// Nearest rotation matrix (polar projection).
///
/// Matrices already orthonormal to within `1e-14` (Frobenius) are returned unchanged.
pub fn orthonormalize(r: &Matrix3<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::NonFiniteState);
    }
    if r.determinant() <= 0.0 {
        return Err(DynamicsError::DegenerateRotation);
    }
    if orthonormality_error(r) < ORTHONORMAL_TOL {
        return Ok(*r);
    }
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let q = u * v_t;
    if q.determinant() <= 0.0 {
        return Err(DynamicsError::DegenerateRotation);
    }
    Ok(q)
}

/// `|R^T R - I|_F`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Rotation by `angle` about the world z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `angle` about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(&axis.normalize());
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation-vector log map of a rotation matrix.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-7 {
        return 0.5 * vee;
    }
    if std::f64::consts::PI - angle < 1e-6 {
        // axis from the symmetric part near pi
        let b = (r + Matrix3::identity()) * 0.5;
        let i = (0..3).max_by(|&a, &c| b[(a, a)].total_cmp(&b[(c, c)])).unwrap();
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        return axis * angle;
    }
    vee * (angle / (2.0 * angle.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_drag() -> QuadParams {
        QuadParams { drag: [0.0; 3], ..QuadParams::default() }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let params = no_drag();
        let s = QuadState::hover_at(Vector3::zeros(), params.hover_thrust());
        let d = derivative(&s, &ControlInput::hover(&params), &params).unwrap();
        let norm = d.dp.norm() + d.dv.norm() + d.dr.norm() + d.domega.norm() + d.df.abs();
        assert!(norm < 1e-12, "{norm}");
    }

    #[test]
    fn free_fall_accelerates_at_g() {
        let params = QuadParams::default();
        let s = QuadState::hover_at(Vector3::zeros(), 0.0);
        let d = derivative(&s, &ControlInput::new(0.0, Vector3::zeros()), &params).unwrap();
        assert_eq!(d.dv, Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(linear_acceleration(&s, &params).unwrap(), Vector3::new(0.0, 0.0, -9.81));
    }

    #[test]
    fn linear_drag_row() {
        let params = QuadParams { mass: 1.0, drag: [0.1, 0.0, 0.0], ..QuadParams::default() };
        let mut s = QuadState::hover_at(Vector3::zeros(), 0.0);
        s.v = Vector3::new(1.0, 0.0, 0.0);
        let a = linear_acceleration(&s, &params).unwrap();
        assert_relative_eq!(a, Vector3::new(-0.1, 0.0, -9.81), epsilon = 1e-15);
    }

    #[test]
    fn thrust_rate_is_first_order() {
        let params = QuadParams { k_f: 10.0, ..QuadParams::default() };
        let s = QuadState::hover_at(Vector3::zeros(), 0.0);
        let d = derivative(&s, &ControlInput::new(1.0, Vector3::zeros()), &params).unwrap();
        assert_eq!(d.df, 10.0);
    }

    #[test]
    fn rotation_rate_is_the_skew_generator() {
        let mut s = QuadState::hover_at(Vector3::zeros(), 1.0);
        s.r = axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7);
        s.omega = Vector3::new(0.3, -0.2, 0.9);
        let d = derivative(&s, &ControlInput::new(1.0, s.omega), &QuadParams::default()).unwrap();
        assert_eq!(d.dr, s.r * skew(&s.omega));
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let params = QuadParams::default();
        let mut s = QuadState::hover_at(Vector3::zeros(), 1.0);
        s.v.x = f64::NAN;
        assert_eq!(derivative(&s, &ControlInput::hover(&params), &params), Err(DynamicsError::NonFiniteState));
        let s = QuadState::hover_at(Vector3::zeros(), 1.0);
        let bad = ControlInput::new(f64::INFINITY, Vector3::zeros());
        assert_eq!(step(&s, &bad, &params, 0.01), Err(DynamicsError::NonFiniteState));
    }

    #[test]
    fn divergence_names_the_field() {
        let params = QuadParams { mass: 1e-300, ..QuadParams::default() };
        let s = QuadState::hover_at(Vector3::zeros(), 1e300);
        let err = step(&s, &ControlInput::new(1e300, Vector3::zeros()), &params, 0.01).unwrap_err();
        assert!(matches!(err, DynamicsError::IntegrationDiverged(_)), "{err:?}");
    }

    #[test]
    fn zero_rates_leave_rotation_bit_identical() {
        let params = QuadParams::default();
        let mut s = QuadState::hover_at(Vector3::zeros(), params.hover_thrust());
        s.r = orthonormalize(&axis_angle(&Vector3::new(0.2, -0.5, 1.0), 1.1)).unwrap();
        let r0 = s.r;
        for _ in 0..100 {
            s = step(&s, &ControlInput::hover(&params), &params, 0.01).unwrap();
        }
        assert_eq!(s.r, r0);
    }

    #[test]
    fn orthonormalize_cases() {
        assert_eq!(orthonormalize(&Matrix3::identity()).unwrap(), Matrix3::identity());
        let r = rot_z(0.3);
        let q = orthonormalize(&(r * 1.0001)).unwrap();
        assert!((q - r).norm() < 1e-6);
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert_eq!(orthonormalize(&flip), Err(DynamicsError::DegenerateRotation));
    }

    #[test]
    fn thrust_is_clamped_at_zero() {
        let params = QuadParams::default();
        let s = QuadState::hover_at(Vector3::zeros(), 0.001);
        let next = step(&s, &ControlInput::new(-5.0, Vector3::zeros()), &params, 0.01).unwrap();
        assert_eq!(next.f, 0.0);
    }

    #[test]
    fn log_map_inverts_axis_angle() {
        for (axis, angle) in [
            (Vector3::new(0.0, 0.0, 1.0), 0.4),
            (Vector3::new(1.0, -1.0, 0.5), 2.0),
            (Vector3::new(0.3, 0.1, -0.2), 1e-9),
            (Vector3::new(0.0, 1.0, 0.0), std::f64::consts::PI - 1e-9),
        ] {
            let r = axis_angle(&axis, angle);
            let expected = axis.normalize() * angle;
            assert_relative_eq!(log_so3(&r), expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn invalid_params() {
        assert!(QuadParams { mass: 0.0, ..Default::default() }.validate().is_err());
        assert!(QuadParams { drag: [-0.1, 0.0, 0.0], ..Default::default() }.validate().is_err());
        assert!(QuadParams::default().validate().is_ok());
    }
}
