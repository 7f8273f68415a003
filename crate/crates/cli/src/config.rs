//! The experiment configuration file.

use std::path::Path;

use quadbench::agent::{SacConfig, TrainSchedule};
use quadbench::baselines::PidGains;
use quadbench::dynamics::QuadParams;
use quadbench::env::{EnvConfig, EnvSpec, ObsConfig, RandomizationSpec, RewardConfig, DEFAULT_HISTORY};
use quadbench::eval::StressConfig;
use quadbench::trajectories::{TrajectoryConfig, TrajectorySpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// The configuration shipped with the tool.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    #[serde(flatten)]
    pub sim: EnvConfig,
    /// Observation window length H.
    pub history: usize,
    pub randomization: RandomizationSpec,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { sim: EnvConfig::default(), history: DEFAULT_HISTORY, randomization: RandomizationSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    /// Observation configurations of the benchmark grid.
    pub configs: Vec<String>,
    pub seeds: Vec<u64>,
    /// Environment steps per training run.
    pub steps: usize,
    pub n_envs: usize,
    /// Checkpoint period during training in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub scenarios: Vec<String>,
    /// Repetitions per scenario.
    pub runs: usize,
    /// Length of each evaluation run, s.
    pub duration: f64,
    /// Evaluate under randomized dynamics instead of nominal parameters.
    pub randomized_eval: bool,
    pub window_config: String,
    pub window_histories: Vec<usize>,
    pub input_variants: Vec<String>,
    pub input_scenarios: Vec<String>,
    pub stress: StressConfig,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            configs: quadbench::env::CONFIG_NAMES.iter().map(|s| s.to_string()).collect(),
            seeds: vec![1],
            steps: 50_000,
            n_envs: 1,
            checkpoint_every: 0,
            scenarios: ["hover", "ellipse", "eight2d", "eight3d", "ellipse-x2", "eight2d-x2", "eight3d-x2"]
                .map(String::from)
                .to_vec(),
            runs: 3,
            duration: 20.0,
            randomized_eval: false,
            window_config: "eW-R-u".into(),
            window_histories: vec![1, 2, 5, 10, 15],
            input_variants: ["eW-R-u", "eW-vW-R-u", "eW-q-u"].map(String::from).to_vec(),
            input_scenarios: ["ellipse", "eight2d", "eight3d"].map(String::from).to_vec(),
            stress: StressConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dynamics: QuadParams,
    pub env: EnvSection,
    pub reward: RewardConfig,
    pub sac: SacConfig,
    pub pid: PidGains,
    pub trajectories: TrajectoryConfig,
    pub plan: PlanSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("shipped config is valid")
    }

    /// Reads `path`, or the shipped configuration when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, HarnessError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Missing(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Ok(Self::shipped()),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let usage = |m: String| HarnessError::Usage(m);
        for name in self.plan.configs.iter().chain(&self.plan.input_variants).chain([&self.plan.window_config]) {
            name.parse::<ObsConfig>().map_err(|e| usage(e.to_string()))?;
        }
        let mut seeds = self.plan.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.plan.seeds.len() {
            return Err(usage("plan seeds must be unique".into()));
        }
        for s in self.plan.scenarios.iter().chain(&self.plan.input_scenarios) {
            TrajectorySpec::from_name(s, &self.trajectories)
                .map_err(|e| usage(e.to_string()))?
                .validate()
                .map_err(|e| usage(e.to_string()))?;
        }
        if self.plan.runs == 0 || !(self.plan.duration > 0.0) || self.plan.n_envs == 0 {
            return Err(usage("plan runs, duration and n_envs must be positive".into()));
        }
        if self.plan.window_histories.contains(&0) || self.env.history == 0 {
            return Err(usage("observation histories must be at least 1".into()));
        }
        self.pid.validate().map_err(|e| usage(e.to_string()))?;
        self.sac.validate().map_err(|e| usage(e.to_string()))?;
        self.env_spec(ObsConfig::all()[0]).validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    /// Environment for `obs`, with the configured window length unless `obs` carries its own.
    pub fn env_spec(&self, obs: ObsConfig) -> EnvSpec {
        EnvSpec {
            nominal: self.dynamics,
            env: self.env.sim,
            obs,
            reward: self.reward,
            randomization: self.env.randomization,
        }
    }

    pub fn obs(&self, name: &str, history: Option<usize>) -> Result<ObsConfig, HarnessError> {
        let obs: ObsConfig =
            name.parse().map_err(|e: quadbench::env::UnknownObsConfig| HarnessError::Usage(e.to_string()))?;
        Ok(obs.with_history(history.unwrap_or(self.env.history)))
    }

    pub fn schedule(&self, steps: usize) -> TrainSchedule {
        TrainSchedule {
            total_steps: steps,
            n_envs: self.plan.n_envs,
            eval_every: 0,
            eval_episodes: 5,
            checkpoint_every: self.plan.checkpoint_every,
            checkpoint_dir: None,
        }
    }

    /// Canonical TOML rendering of every resolved value.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
