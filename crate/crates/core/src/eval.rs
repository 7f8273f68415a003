//! Tracking metrics, closed-loop evaluation runs and the velocity stress protocol.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::agent::SacAgent;
use crate::baselines::{PidController, PidError};
use crate::dynamics::{ControlInput, QuadState};
use crate::env::{EnvError, EnvSpec, EnvState, PolicyAction, RandomizationSpec, Termination, ACTION_DIM};
use crate::trajectories::{TrajectoryError, TrajectoryKind, TrajectorySpec};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("run log is empty")]
    EmptyRun,
    #[error("expected {expected} runs, got {got}")]
    RunCountMismatch { expected: usize, got: usize },
    #[error("invalid run log: {0}")]
    InvalidLog(String),
    #[error("invalid evaluation setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error("controller failed: {0}")]
    Controller(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sample of a closed-loop run; also the CSV row layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub yx: f64,
    pub yy: f64,
    pub yz: f64,
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
    pub df: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub reward: f64,
}

impl LogRow {
    pub fn position(&self) -> [f64; 3] {
        [self.px, self.py, self.pz]
    }

    pub fn reference(&self) -> [f64; 3] {
        [self.yx, self.yy, self.yz]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    /// Set when the run stopped early because the vehicle left the error bound.
    pub failed: bool,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(EvalError::InvalidLog("sample times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        if self.rows.is_empty() {
            out.write_record([
                "t", "px", "py", "pz", "yx", "yy", "yz", "ex", "ey", "ez", "df", "wx", "wy", "wz", "reward",
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a log written by [`RunLog::write_csv`]. The failure flag is not stored in the CSV.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvalError> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<Result<Vec<LogRow>, _>>()?;
        let log = Self { rows, failed: false };
        log.validate()?;
        Ok(log)
    }
}

/// Per-axis RMSE and their mean, in centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub pc: f64,
}

impl Metrics {
    pub fn from_axes(px: f64, py: f64, pz: f64) -> Self {
        Self { px, py, pz, pc: (px + py + pz) / 3.0 }
    }
}

pub fn rmse_metrics(log: &RunLog) -> Result<Metrics, EvalError> {
    if log.rows.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = log.rows.len() as f64;
    let mut sq = [0.0; 3];
    for row in &log.rows {
        let (y, p) = (row.reference(), row.position());
        for j in 0..3 {
            sq[j] += (y[j] - p[j]).powi(2);
        }
    }
    let cm = |s: f64| 100.0 * (s / n).sqrt();
    Ok(Metrics::from_axes(cm(sq[0]), cm(sq[1]), cm(sq[2])))
}

/// Mean over exactly `expected` runs; `pc` is recomputed from the averaged axes.
pub fn aggregate(reports: &[Metrics], expected: usize) -> Result<Metrics, EvalError> {
    if reports.len() != expected || expected == 0 {
        return Err(EvalError::RunCountMismatch { expected, got: reports.len() });
    }
    let n = expected as f64;
    let mean = |f: fn(&Metrics) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(Metrics::from_axes(mean(|m| m.px), mean(|m| m.py), mean(|m| m.pz)))
}

/// What a controller asks the simulator to do for one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    /// Normalized policy action, routed through the environment action map.
    Policy([f64; ACTION_DIM]),
    /// Direct thrust and body-rate command.
    Direct(ControlInput),
    /// Place the vehicle at the target in hover (test oracle).
    Teleport,
}

pub trait Controller {
    fn name(&self) -> String;

    fn reset(&mut self) {}

    /// Command for the current environment state; the target is already set.
    fn command(&mut self, env: &EnvState) -> Result<Command, EvalError>;
}

/// Deterministic hover-corrected policy.
pub struct PolicyController {
    pub name: String,
    pub agent: SacAgent<f32>,
    obs: Vec<f32>,
}

impl PolicyController {
    pub fn new(name: impl Into<String>, agent: SacAgent<f32>) -> Self {
        Self { name: name.into(), agent, obs: Vec::new() }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn command(&mut self, env: &EnvState) -> Result<Command, EvalError> {
        self.obs.clear();
        self.obs.extend(env.observation().iter().map(|&x| x as f32));
        let a = self.agent.act(&self.obs).map_err(|e| EvalError::Controller(e.to_string()))?;
        Ok(Command::Policy(a.map(f64::from)))
    }
}

impl Controller for PidController {
    fn name(&self) -> String {
        "PID".into()
    }

    fn reset(&mut self) {
        PidController::reset(self);
    }

    fn command(&mut self, env: &EnvState) -> Result<Command, EvalError> {
        Ok(Command::Direct(self.control(&env.quad, &env.target, env.spec.env.ts)?))
    }
}

/// Holds the nominal hover input forever.
pub struct FrozenHover;

impl Controller for FrozenHover {
    fn name(&self) -> String {
        "frozen-hover".into()
    }

    fn command(&mut self, env: &EnvState) -> Result<Command, EvalError> {
        Ok(Command::Direct(ControlInput::hover(&env.spec.nominal)))
    }
}

/// Moves the vehicle onto the target every tick.
pub struct Teleport;

impl Controller for Teleport {
    fn name(&self) -> String {
        "teleport".into()
    }

    fn command(&mut self, _env: &EnvState) -> Result<Command, EvalError> {
        Ok(Command::Teleport)
    }
}

/// Environment used for evaluation: nominal parameters with the control delay kept,
/// or the full training randomization.
pub fn evaluation_spec(base: &EnvSpec, randomized: bool) -> EnvSpec {
    let mut spec = *base;
    if !randomized {
        spec.randomization = RandomizationSpec { fraction: 0.0, g_bias_max: 0.0, ..base.randomization };
    }
    spec
}

fn start_env(spec: &EnvSpec, start: Vector3<f64>, seed: u64, randomized: bool) -> Result<EnvState, EvalError> {
    let params = if randomized {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        spec.randomization.sample_params(&spec.nominal, &mut rng)
    } else {
        spec.nominal
    };
    let quad = QuadState::hover_at(start, spec.nominal.hover_thrust().min(spec.limits().f_max));
    Ok(EnvState::from_state(spec, params, quad, start, seed)?)
}

fn apply(env: &mut EnvState, cmd: Command) -> Result<crate::env::StepOutcome, EvalError> {
    let out = match cmd {
        Command::Policy(a) => env.step(&PolicyAction::from_normalized(&a, &env.spec.env))?,
        Command::Direct(u) => env.step_input(&u)?,
        Command::Teleport => env.step_teleport()?,
    };
    Ok(out)
}

/// Closed-loop run tracking `traj` for `duration` seconds from hover at its start point.
///
/// Row `k` holds the state and reference at `t = k ts`, the command issued there and the
/// reward it earned. The run stops early, flagged as failed, if the vehicle leaves the error bound.
pub fn run_episode(
    controller: &mut dyn Controller,
    base: &EnvSpec,
    traj: &TrajectorySpec,
    duration: f64,
    seed: u64,
    randomized: bool,
) -> Result<RunLog, EvalError> {
    if !(duration > 0.0) {
        return Err(EvalError::InvalidSetup(format!("duration must be positive, got {duration}")));
    }
    traj.validate()?;
    let mut spec = evaluation_spec(base, randomized);
    let ts = spec.env.ts;
    let n = (duration / ts).round() as usize;
    spec.env.max_steps = n;
    let mut env = start_env(&spec, traj.target_at(0.0), seed, randomized)?;
    controller.reset();
    let mut log = RunLog { rows: Vec::with_capacity(n), failed: false };
    for k in 0..n {
        let t = k as f64 * ts;
        env.set_target(traj.target_at(t));
        let (p, y, e) = (env.quad.p, env.target, env.error());
        let f_before = env.f_cmd;
        let cmd = controller.command(&env)?;
        let out = apply(&mut env, cmd)?;
        let issued = out.info.issued;
        log.rows.push(LogRow {
            t,
            px: p.x,
            py: p.y,
            pz: p.z,
            yx: y.x,
            yy: y.y,
            yz: y.z,
            ex: e.x,
            ey: e.y,
            ez: e.z,
            df: (issued.f_cmd - f_before) / ts,
            wx: issued.omega_cmd.x,
            wy: issued.omega_cmd.y,
            wz: issued.omega_cmd.z,
            reward: out.reward,
        });
        if out.info.termination == Some(Termination::OutOfBounds) {
            log.failed = true;
            break;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StressConfig {
    /// Tracking is lost once the distance exceeds this, m.
    pub fail_distance: f64,
    /// Target speed at which the run stops as a success, m/s.
    pub speed_cap: f64,
}

impl Default for StressConfig {
    fn default() -> Self {
        Self { fail_distance: 0.50, speed_cap: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressResult {
    /// Target speed when tracking was lost; `inf` when the cap was reached.
    pub max_velocity: f64,
    /// Time of the first crossing, s.
    pub time: f64,
    pub diagnostic: Option<String>,
}

/// Ramping-speed circle pursuit; returns the target speed at the first tick with
/// distance strictly above the failure threshold.
pub fn stress_test(
    controller: &mut dyn Controller,
    base: &EnvSpec,
    traj: &TrajectorySpec,
    cfg: &StressConfig,
    seed: u64,
) -> Result<StressResult, EvalError> {
    if traj.kind != TrajectoryKind::CircleRamp {
        return Err(EvalError::InvalidSetup("stress test needs a circle-ramp trajectory".into()));
    }
    traj.validate()?;
    let mut spec = evaluation_spec(base, false);
    spec.env.max_steps = usize::MAX;
    spec.reward.e_m = f64::MAX;
    let ts = spec.env.ts;
    let mut env = start_env(&spec, traj.target_at(0.0), seed, false)?;
    controller.reset();
    let mut k: u64 = 0;
    loop {
        let t = k as f64 * ts;
        env.set_target(traj.target_at(t));
        let distance = env.error().norm();
        let speed = traj.speed_at(t);
        if distance > cfg.fail_distance || !distance.is_finite() {
            let diagnostic = (k == 0).then(|| "tracking lost at t = 0".to_string());
            return Ok(StressResult { max_velocity: if k == 0 { 0.0 } else { speed }, time: t, diagnostic });
        }
        if speed >= cfg.speed_cap {
            return Ok(StressResult { max_velocity: f64::INFINITY, time: t, diagnostic: None });
        }
        let cmd = controller.command(&env)?;
        apply(&mut env, cmd)?;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{PidGains, PidPlant};
    use crate::env::ObsConfig;
    use crate::trajectories::TrajectoryConfig;

    fn spec() -> EnvSpec {
        EnvSpec::new("eW-R-u".parse::<ObsConfig>().unwrap().with_history(10))
    }

    fn pid(spec: &EnvSpec) -> PidController {
        PidController::new(PidGains::default(), PidPlant::nominal(&spec.nominal, spec.limits())).unwrap()
    }

    fn row(t: f64, p: [f64; 3], y: [f64; 3]) -> LogRow {
        LogRow {
            t,
            px: p[0],
            py: p[1],
            pz: p[2],
            yx: y[0],
            yy: y[1],
            yz: y[2],
            ex: y[0] - p[0],
            ey: y[1] - p[1],
            ez: y[2] - p[2],
            df: 0.0,
            wx: 0.0,
            wy: 0.0,
            wz: 0.0,
            reward: 0.0,
        }
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let log =
            RunLog { rows: (0..10).map(|k| row(k as f64, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])).collect(), failed: false };
        assert_eq!(rmse_metrics(&log).unwrap(), Metrics { px: 0.0, py: 0.0, pz: 0.0, pc: 0.0 });
    }

    #[test]
    fn constant_offset() {
        let log = RunLog { rows: (0..7).map(|k| row(k as f64, [0.0; 3], [0.05, 0.0, 0.0])).collect(), failed: false };
        let m = rmse_metrics(&log).unwrap();
        assert!((m.px - 5.0).abs() < 1e-12);
        assert_eq!((m.py, m.pz), (0.0, 0.0));
        assert!((m.pc - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_rms() {
        let a = 0.1;
        let log = RunLog {
            rows: (0..10_000).map(|k| row(k as f64, [0.0; 3], [a * (k as f64 * 0.0123).sin(), 0.0, 0.0])).collect(),
            failed: false,
        };
        let m = rmse_metrics(&log).unwrap();
        assert!((m.px / (100.0 * a / 2f64.sqrt()) - 1.0).abs() < 0.01);
    }

    #[test]
    fn empty_and_count_errors() {
        assert!(matches!(rmse_metrics(&RunLog::default()), Err(EvalError::EmptyRun)));
        let m = Metrics::from_axes(1.0, 2.0, 3.0);
        assert!(matches!(aggregate(&[m, m], 3), Err(EvalError::RunCountMismatch { .. })));
        assert_eq!(aggregate(&[m, m, m], 3).unwrap(), m);
        let xs = [3.0, 4.0, 5.0].map(|x| Metrics::from_axes(x, 0.0, 0.0));
        assert_eq!(aggregate(&xs, 3).unwrap().px, 4.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = RunLog {
            rows: (0..5)
                .map(|k| row(k as f64 * 0.01, [0.1 * k as f64, 1.0 / 3.0, -2.5e-9], [0.7, 0.2, 1e10]))
                .collect(),
            failed: false,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,px,py,pz,yx,yy,yz,ex,ey,ez,df,wx,wy,wz,reward\n"));
        assert_eq!(RunLog::read_csv(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn pid_hover_episode() {
        let spec = spec();
        let traj = TrajectorySpec::hover(Vector3::new(0.0, 0.0, 1.0));
        let log = run_episode(&mut pid(&spec), &spec, &traj, 20.0, 1, false).unwrap();
        assert_eq!(log.len(), 2000);
        let last = log.rows.last().unwrap();
        assert!((last.ex.powi(2) + last.ey.powi(2) + last.ez.powi(2)).sqrt() < 0.02);
        let again = run_episode(&mut pid(&spec), &spec, &traj, 20.0, 1, false).unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn stress_ordering_of_trivial_controllers() {
        let spec = spec();
        let traj = TrajectorySpec::new(TrajectoryKind::CircleRamp, &TrajectoryConfig::default());
        let cfg = StressConfig::default();
        let tele = stress_test(&mut Teleport, &spec, &traj, &cfg, 0).unwrap();
        assert_eq!(tele.max_velocity, f64::INFINITY);
        let frozen = stress_test(&mut FrozenHover, &spec, &traj, &cfg, 0).unwrap();
        assert!(frozen.max_velocity > 0.0 && frozen.max_velocity < 0.2, "{frozen:?}");
        assert!(stress_test(&mut Teleport, &spec, &TrajectorySpec::hover(Vector3::zeros()), &cfg, 0).is_err());
    }
}
