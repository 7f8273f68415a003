//! Episodic tracking environment with CTBR actions, integral thrust and delayed inputs.

mod obs;
mod randomize;
mod reward;

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    self, axis_angle, linear_acceleration, rot_z, ControlInput, DynamicsError, InputLimits, QuadParams, QuadState,
};

pub use obs::{
    body_frame_error, quaternion_wxyz, ErrorFrame, ObsConfig, ObsExtras, ObsSignals, UnknownObsConfig, CONFIG_NAMES,
    DEFAULT_HISTORY,
};
pub use randomize::{uniform_in_ball, unit_vector, RandomizationSpec};
pub use reward::RewardConfig;

/// Width of the privileged critic observation.
pub const CRITIC_OBS_DIM: usize = 21;
/// Width of the action vector.
pub const ACTION_DIM: usize = 4;

const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Episode, action-scaling and initial-condition settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Control period, s.
    pub ts: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    /// Episode horizon K_max, control steps.
    pub max_steps: usize,
    /// Bound on the thrust rate action, N/s.
    pub df_max: f64,
    /// Body-rate command bounds, rad/s.
    pub omega_max: [f64; 3],
    /// Maximum thrust as a multiple of nominal hover thrust.
    pub thrust_to_weight: f64,
    /// Fixed target position, m.
    pub target: [f64; 3],
    /// Range of the initial distance to the target, m.
    pub init_distance: [f64; 2],
    pub init_tilt_max_deg: f64,
    pub init_speed_max: f64,
    pub init_rate_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            ts: 0.01,
            substeps: 1,
            max_steps: 500,
            df_max: 20.0,
            omega_max: [5.0, 5.0, 2.0],
            thrust_to_weight: 4.0,
            target: [0.0; 3],
            init_distance: [0.5, 2.4],
            init_tilt_max_deg: 60.0,
            init_speed_max: 1.0,
            init_rate_max: 1.0,
        }
    }
}

/// Everything needed to reset an environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub nominal: QuadParams,
    pub env: EnvConfig,
    pub obs: ObsConfig,
    pub reward: RewardConfig,
    pub randomization: RandomizationSpec,
}

impl EnvSpec {
    pub fn new(obs: ObsConfig) -> Self {
        Self {
            nominal: QuadParams::default(),
            env: EnvConfig::default(),
            obs,
            reward: RewardConfig::default(),
            randomization: RandomizationSpec::default(),
        }
    }

    pub fn limits(&self) -> InputLimits {
        InputLimits { f_max: self.env.thrust_to_weight * self.nominal.hover_thrust(), omega_max: self.env.omega_max }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.nominal.validate()?;
        self.reward.validate()?;
        self.randomization.validate()?;
        let e = &self.env;
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if !(e.ts > 0.0 && e.ts.is_finite()) || e.substeps == 0 || e.max_steps == 0 {
            return bad(format!("ts, substeps and max_steps must be positive: {e:?}"));
        }
        if !(e.df_max > 0.0) || e.omega_max.iter().any(|w| !(*w > 0.0)) || !(e.thrust_to_weight > 1.0) {
            return bad("action bounds must be positive and thrust_to_weight > 1".into());
        }
        let [d0, d1] = e.init_distance;
        if !(d0 >= 0.0 && d1 >= d0 && d1 < self.reward.e_m) {
            return bad(format!("init_distance {:?} must satisfy 0 <= lo <= hi < e_m", e.init_distance));
        }
        if !(0.0..=180.0).contains(&e.init_tilt_max_deg) || e.init_speed_max < 0.0 || e.init_rate_max < 0.0 {
            return bad("initial perturbation bounds out of range".into());
        }
        if self.obs.history == 0 {
            return bad("observation history must be at least 1".into());
        }
        Ok(())
    }
}

/// Policy output in physical units: thrust rate and body-rate command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyAction {
    /// Thrust increment rate, N/s.
    pub df: f64,
    pub omega_cmd: Vector3<f64>,
}

impl PolicyAction {
    pub fn zero() -> Self {
        Self { df: 0.0, omega_cmd: Vector3::zeros() }
    }

    /// Maps a normalised action in `[-1, 1]^4` to physical units, clamping first.
    pub fn from_normalized(a: &[f64], env: &EnvConfig) -> Self {
        let c = |x: f64| x.clamp(-1.0, 1.0);
        Self {
            df: c(a[0]) * env.df_max,
            omega_cmd: Vector3::new(c(a[1]) * env.omega_max[0], c(a[2]) * env.omega_max[1], c(a[3]) * env.omega_max[2]),
        }
    }

    /// The action scaled to `[-1, 1]^4`, clamped.
    pub fn normalized(&self, env: &EnvConfig) -> [f64; 4] {
        let c = |x: f64| x.clamp(-1.0, 1.0);
        [
            c(self.df / env.df_max),
            c(self.omega_cmd.x / env.omega_max[0]),
            c(self.omega_cmd.y / env.omega_max[1]),
            c(self.omega_cmd.z / env.omega_max[2]),
        ]
    }

    pub fn clamped(&self, env: &EnvConfig) -> Self {
        Self::from_normalized(&self.normalized(env), env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    OutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub termination: Option<Termination>,
    /// Distance to the target after the step, m.
    pub distance: f64,
    /// Input issued this tick (after integration and clamping).
    pub issued: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingInput {
    pub input: ControlInput,
    /// Absolute time at which the input reaches the actuators, s.
    pub release: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub spec: EnvSpec,
    pub quad: QuadState,
    /// Parameters of this episode, possibly randomised.
    pub params: QuadParams,
    pub target: Vector3<f64>,
    pub f_cmd: f64,
    /// Previous applied action, normalised.
    pub prev_action: [f64; 4],
    history: VecDeque<Vec<f64>>,
    delay_queue: VecDeque<PendingInput>,
    /// Input currently held by the actuators.
    pub held: ControlInput,
    pub step_index: usize,
    pub seed: u64,
    rng: ChaCha8Rng,
    done: bool,
}

impl EnvState {
    /// Starts an episode with sampled parameters and a perturbed initial state.
    pub fn reset(seed: u64, spec: &EnvSpec) -> Result<(Self, Vec<f64>), EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec.randomization.sample_params(&spec.nominal, &mut rng);
        let target = Vector3::from(spec.env.target);
        let quad = sample_initial_state(&spec.env, spec.nominal.hover_thrust(), &target, &mut rng);
        let env = Self::assemble(spec, params, quad, target, seed, rng);
        let obs = env.observation();
        Ok((env, obs))
    }

    /// Starts an episode from a given state and parameter set.
    pub fn from_state(
        spec: &EnvSpec,
        params: QuadParams,
        quad: QuadState,
        target: Vector3<f64>,
        seed: u64,
    ) -> Result<Self, EnvError> {
        spec.validate()?;
        params.validate()?;
        Ok(Self::assemble(spec, params, quad, target, seed, ChaCha8Rng::seed_from_u64(seed)))
    }

    fn assemble(
        spec: &EnvSpec,
        params: QuadParams,
        quad: QuadState,
        target: Vector3<f64>,
        seed: u64,
        rng: ChaCha8Rng,
    ) -> Self {
        let f0 = spec.nominal.hover_thrust().min(spec.limits().f_max);
        let mut env = Self {
            spec: *spec,
            quad,
            params,
            target,
            f_cmd: f0,
            prev_action: [0.0; 4],
            history: VecDeque::with_capacity(spec.obs.history),
            delay_queue: VecDeque::new(),
            held: ControlInput::new(f0, Vector3::zeros()),
            step_index: 0,
            seed,
            rng,
            done: false,
        };
        let first = env.current_slice();
        env.history.extend(std::iter::repeat_n(first, spec.obs.history));
        env
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.spec.env.ts
    }

    /// World-frame position error `y_r - p`.
    pub fn error(&self) -> Vector3<f64> {
        self.target - self.quad.p
    }

    pub fn history(&self) -> &VecDeque<Vec<f64>> {
        &self.history
    }

    pub fn pending_inputs(&self) -> &VecDeque<PendingInput> {
        &self.delay_queue
    }

    pub fn signals(&self) -> ObsSignals {
        ObsSignals {
            error_world: self.error(),
            rotation: self.quad.r,
            omega: self.quad.omega,
            velocity_world: self.quad.v,
            prev_action: self.prev_action,
        }
    }

    fn current_slice(&self) -> Vec<f64> {
        self.spec.obs.slice(&self.signals())
    }

    /// Flattened history, newest slice first.
    pub fn observation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.obs.input_width());
        for s in &self.history {
            out.extend_from_slice(s);
        }
        out
    }

    /// Moves the target and refreshes the newest observation slice.
    pub fn set_target(&mut self, target: Vector3<f64>) {
        self.target = target;
        let slice = self.current_slice();
        if let Some(front) = self.history.front_mut() {
            *front = slice;
        }
    }

    /// Privileged critic input `[p, v, a, R rows, w]`.
    pub fn critic_observation(&self) -> Vec<f64> {
        let acc = linear_acceleration(&self.quad, &self.params).unwrap_or_else(|_| Vector3::repeat(f64::NAN));
        let mut out = Vec::with_capacity(CRITIC_OBS_DIM);
        out.extend_from_slice(self.quad.p.as_slice());
        out.extend_from_slice(self.quad.v.as_slice());
        out.extend_from_slice(acc.as_slice());
        obs::push_rows(&mut out, &self.quad.r);
        out.extend_from_slice(self.quad.omega.as_slice());
        out
    }

    /// Applies a policy action: integrates the thrust command, then advances one period.
    pub fn step(&mut self, action: &PolicyAction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let cfg = self.spec.env;
        let normalized = action.normalized(&cfg);
        let action = PolicyAction::from_normalized(&normalized, &cfg);
        let f_max = self.spec.limits().f_max;
        let f_cmd = (self.f_cmd + action.df * cfg.ts).clamp(0.0, f_max);
        self.advance(ControlInput::new(f_cmd, action.omega_cmd), normalized)
    }

    /// Applies a CTBR input directly, bypassing the thrust integrator.
    ///
    /// The recorded previous action is the equivalent normalised thrust rate and body-rate command.
    pub fn step_input(&mut self, input: &ControlInput) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let input = input.clamped(&self.spec.limits());
        let equivalent = PolicyAction { df: (input.f_cmd - self.f_cmd) / self.spec.env.ts, omega_cmd: input.omega_cmd };
        let normalized = equivalent.normalized(&self.spec.env);
        self.advance(input, normalized)
    }

    /// Places the vehicle in exact hover at the target, then advances one period.
    pub fn step_teleport(&mut self) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let hover = ControlInput::hover(&self.params);
        self.quad = QuadState::hover_at(self.target, hover.f_cmd);
        self.delay_queue.clear();
        self.held = hover;
        self.f_cmd = hover.f_cmd;
        self.advance(hover, [0.0; 4])
    }

    fn advance(&mut self, input: ControlInput, normalized: [f64; 4]) -> Result<StepOutcome, EnvError> {
        let ts = self.spec.env.ts;
        self.f_cmd = input.f_cmd;
        let t0 = self.time();
        let t1 = t0 + ts;
        let delay = self.spec.randomization.sample_delay(&mut self.rng);
        self.delay_queue.push_back(PendingInput { input, release: t0 + delay });

        let mut now = t0;
        loop {
            while let Some(front) = self.delay_queue.front() {
                if front.release <= now + TIME_EPS {
                    self.held = front.input;
                    self.delay_queue.pop_front();
                } else {
                    break;
                }
            }
            let next = match self.delay_queue.front() {
                Some(p) if p.release < t1 - TIME_EPS => p.release,
                _ => t1,
            };
            let h = next - now;
            if h > TIME_EPS {
                let n = ((self.spec.env.substeps as f64) * h / ts).ceil().max(1.0) as usize;
                self.quad = dynamics::step_substeps(&self.quad, &self.held, &self.params, h, n)?;
            }
            now = next;
            if next >= t1 - TIME_EPS {
                break;
            }
        }

        self.step_index += 1;
        self.prev_action = normalized;
        let slice = self.current_slice();
        self.history.push_front(slice);
        self.history.truncate(self.spec.obs.history);

        let e = self.error();
        let distance = e.norm();
        let reward = self.spec.reward.reward(&e, &normalized);
        let termination = if distance > self.spec.reward.e_m {
            Some(Termination::OutOfBounds)
        } else if self.step_index >= self.spec.env.max_steps {
            Some(Termination::TimeLimit)
        } else {
            None
        };
        self.done = termination.is_some();
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo { termination, distance, issued: input },
        })
    }
}

fn sample_initial_state<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    hover_thrust: f64,
    target: &Vector3<f64>,
    rng: &mut R,
) -> QuadState {
    let [d0, d1] = cfg.init_distance;
    let distance = if d1 > d0 { rng.random_range(d0..=d1) } else { d0 };
    let offset = unit_vector(rng) * distance;
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let tilt_axis_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = rng.random_range(0.0..=cfg.init_tilt_max_deg.to_radians());
    let axis = Vector3::new(tilt_axis_angle.cos(), tilt_axis_angle.sin(), 0.0);
    let r = axis_angle(&axis, tilt) * rot_z(yaw);
    QuadState {
        p: target - offset,
        v: uniform_in_ball(cfg.init_speed_max, rng),
        r,
        omega: uniform_in_ball(cfg.init_rate_max, rng),
        f: hover_thrust,
    }
}
