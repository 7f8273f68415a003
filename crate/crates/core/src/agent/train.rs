use std::io::{BufRead, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, AgentError, ReplayBuffer, SacAgent, SacConfig, SacLosses, Transition};
use crate::env::{EnvSpec, EnvState, PolicyAction, Termination, ACTION_DIM};

/// Training-loop schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub n_envs: usize,
    /// Deterministic evaluation period in environment steps; 0 disables it.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Checkpoint period in environment steps; 0 disables it.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            n_envs: 1,
            eval_every: 0,
            eval_episodes: 5,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

/// One finished training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Environment steps taken when the episode ended, across all environments.
    pub steps: usize,
    pub cumulative_reward: f64,
    pub length: usize,
    pub final_distance: f64,
    pub termination: Termination,
}

/// Deterministic-policy evaluation over a set of reset seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub steps: usize,
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_final_distance: f64,
    pub crashes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub agent: SacAgent<f32>,
    pub curve: Vec<EpisodeRecord>,
    pub evals: Vec<EvalSummary>,
    pub last_losses: Option<SacLosses>,
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_UPDATE: u64 = 3;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Runs SAC from scratch on `spec`. Deterministic given `seed`.
pub fn train(spec: &EnvSpec, sac: &SacConfig, schedule: &TrainSchedule, seed: u64) -> Result<TrainOutput, AgentError> {
    spec.validate()?;
    if schedule.n_envs == 0 {
        return Err(AgentError::InvalidConfig("n_envs must be at least 1".into()));
    }
    let mut init_rng = stream(seed, STREAM_INIT);
    let mut env_rng = stream(seed, STREAM_ENV);
    let mut explore_rng = stream(seed, STREAM_EXPLORE);
    let mut update_rng = stream(seed, STREAM_UPDATE);

    let mut agent = SacAgent::<f32>::new(spec.obs, sac.clone(), &mut init_rng)?;
    let mut buffer = ReplayBuffer::<f32>::new(spec.obs.input_width(), sac.buffer_capacity);
    let mut envs = Vec::with_capacity(schedule.n_envs);
    for _ in 0..schedule.n_envs {
        let (env, obs) = EnvState::reset(env_rng.random(), spec)?;
        envs.push((env, to_f32(&obs), 0.0f64));
    }
    let mut curve = Vec::new();
    let mut evals = Vec::new();
    let mut last_losses = None;

    for step in 0..schedule.total_steps {
        let k = step % schedule.n_envs;
        let (env, obs, ret) = &mut envs[k];
        let action: [f32; ACTION_DIM] = if step < sac.warmup_steps {
            std::array::from_fn(|_| explore_rng.random_range(-1.0f32..=1.0))
        } else {
            agent.explore(obs, &mut explore_rng)?
        };
        let critic_obs = to_f32(&env.critic_observation());
        let a64 = action.map(f64::from);
        let out = env.step(&PolicyAction::from_normalized(&a64, &spec.env))?;
        let next_obs = to_f32(&out.observation);
        let next_critic = to_f32(&env.critic_observation());
        let stored = env.prev_action.map(|x| x as f32);
        buffer.push(&Transition {
            obs,
            critic_obs: &critic_obs,
            action: &stored,
            reward: out.reward as f32,
            next_obs: &next_obs,
            next_critic_obs: &next_critic,
            done: out.info.termination == Some(Termination::OutOfBounds),
        })?;
        *ret += out.reward;
        if out.done {
            curve.push(EpisodeRecord {
                episode: curve.len(),
                steps: step + 1,
                cumulative_reward: *ret,
                length: env.step_index,
                final_distance: out.info.distance,
                termination: out.info.termination.unwrap_or(Termination::TimeLimit),
            });
            let (fresh, o) = EnvState::reset(env_rng.random(), spec)?;
            *env = fresh;
            *obs = to_f32(&o);
            *ret = 0.0;
        } else {
            *obs = next_obs;
        }

        if step + 1 >= sac.warmup_steps && buffer.len() >= sac.batch {
            for _ in 0..sac.updates_per_step {
                last_losses = Some(agent.update(&buffer, &mut update_rng)?);
            }
        }
        let done_steps = step + 1;
        if schedule.eval_every > 0 && done_steps % schedule.eval_every == 0 {
            let seeds: Vec<u64> =
                (0..schedule.eval_episodes as u64).map(|i| seed.wrapping_add(1_000_003 * (i + 1))).collect();
            let mut s = evaluate_policy(&agent, spec, &seeds)?;
            s.steps = done_steps;
            evals.push(s);
        }
        if let Some(dir) = &schedule.checkpoint_dir {
            if schedule.checkpoint_every > 0 && done_steps % schedule.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                save_checkpoint(&agent, done_steps as u64, &dir.join(format!("step_{done_steps:08}.ckpt")))?;
            }
        }
    }
    Ok(TrainOutput { agent, curve, evals, last_losses })
}

/// Runs one deterministic episode per seed with the hover-corrected policy.
pub fn evaluate_policy(agent: &SacAgent<f32>, spec: &EnvSpec, seeds: &[u64]) -> Result<EvalSummary, AgentError> {
    let mut total = 0.0;
    let mut dist = 0.0;
    let mut crashes = 0;
    for &seed in seeds {
        let (mut env, mut obs) = EnvState::reset(seed, spec)?;
        let mut ret = 0.0;
        loop {
            let a = agent.act(&to_f32(&obs))?;
            let out = env.step(&PolicyAction::from_normalized(&a.map(f64::from), &spec.env))?;
            ret += out.reward;
            obs = out.observation;
            if out.done {
                dist += out.info.distance;
                if out.info.termination == Some(Termination::OutOfBounds) {
                    crashes += 1;
                }
                break;
            }
        }
        total += ret;
    }
    let n = seeds.len().max(1) as f64;
    Ok(EvalSummary { steps: 0, episodes: seeds.len(), mean_reward: total / n, mean_final_distance: dist / n, crashes })
}

/// Writes `episode,steps,cumulative_reward` rows.
pub fn write_learning_curve<W: Write>(curve: &[EpisodeRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "episode,steps,cumulative_reward")?;
    for r in curve {
        writeln!(w, "{},{},{}", r.episode, r.steps, r.cumulative_reward)?;
    }
    Ok(())
}

/// Parses a curve written by [`write_learning_curve`] into `(episode, steps, cumulative_reward)`.
pub fn read_learning_curve<R: BufRead>(r: R) -> Result<Vec<(usize, usize, f64)>, AgentError> {
    let bad = |line: usize| AgentError::Checkpoint(format!("malformed learning curve at line {line}"));
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "episode,steps,cumulative_reward" {
                return Err(bad(1));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(i + 1));
        }
        rows.push((
            f[0].parse().map_err(|_| bad(i + 1))?,
            f[1].parse().map_err(|_| bad(i + 1))?,
            f[2].parse().map_err(|_| bad(i + 1))?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ObsConfig;

    fn small() -> (EnvSpec, SacConfig) {
        let mut spec = EnvSpec::new("eW-R-u".parse::<ObsConfig>().unwrap().with_history(2));
        spec.env.max_steps = 40;
        let sac = SacConfig {
            batch: 16,
            warmup_steps: 50,
            actor_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            buffer_capacity: 1000,
            ..Default::default()
        };
        (spec, sac)
    }

    #[test]
    fn zero_steps_returns_initial_agent() {
        let (spec, sac) = small();
        let sched = TrainSchedule { total_steps: 0, ..Default::default() };
        let out = train(&spec, &sac, &sched, 3).unwrap();
        assert!(out.curve.is_empty());
        let mut rng = stream(3, STREAM_INIT);
        let fresh = SacAgent::<f32>::new(spec.obs, sac, &mut rng).unwrap();
        assert_eq!(out.agent.actor, fresh.actor);
    }

    #[test]
    fn short_run_is_reproducible() {
        let (spec, sac) = small();
        let sched = TrainSchedule { total_steps: 200, ..Default::default() };
        let a = train(&spec, &sac, &sched, 9).unwrap();
        let b = train(&spec, &sac, &sched, 9).unwrap();
        assert!(!a.curve.is_empty());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.agent.actor, b.agent.actor);
        let mut bytes = Vec::new();
        write_learning_curve(&a.curve, &mut bytes).unwrap();
        let rows = read_learning_curve(bytes.as_slice()).unwrap();
        assert_eq!(rows.len(), a.curve.len());
        assert_eq!(rows[0].2, a.curve[0].cumulative_reward);
    }

    #[test]
    fn multiple_envs_round_robin() {
        let (spec, sac) = small();
        let sched = TrainSchedule { total_steps: 160, n_envs: 2, ..Default::default() };
        let out = train(&spec, &sac, &sched, 1).unwrap();
        assert!(out.curve.len() >= 2);
        assert!(train(&spec, &sac, &TrainSchedule { n_envs: 0, ..sched }, 1).is_err());
    }
}
