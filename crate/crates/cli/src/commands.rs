//! The CLI verbs as library functions.

use std::path::{Path, PathBuf};

use quadbench::agent::{load_checkpoint, save_checkpoint, train, write_learning_curve, EpisodeRecord, SacAgent};
use quadbench::baselines::{PidController, PidPlant};
use quadbench::env::{ObsConfig, DEFAULT_HISTORY};
use quadbench::eval::{
    aggregate, rmse_metrics, run_episode, stress_test, Controller, FrozenHover, PolicyController, RunLog, StressResult,
    Teleport,
};
use quadbench::trajectories::{TrajectoryKind, TrajectorySpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::{parse_stress_csv, stress_csv_line, stress_markdown, Report, ReportRow, StressRow, STRESS_HEADER};
use crate::store::{write_atomic, Store};
use crate::{Config, HarnessError};

const TABLE_NOTES: &[&str] = &[
    "Simulated tracking error in cm (P_c = mean of P_x, P_y, P_z), averaged over runs; rank 1 = lowest P_c per scenario.",
    "Hardware reference for context only: real-flight errors are not reproducible in simulation.",
    "The `-x2` columns are the doubled-speed variants of each trajectory kind.",
];

pub struct Context {
    pub cfg: Config,
    pub store: Store,
    pub jobs: usize,
}

impl Context {
    pub fn new(cfg: Config, root: impl Into<PathBuf>, jobs: usize) -> Result<Self, HarnessError> {
        let store = Store::new(root);
        store.open(&cfg)?;
        Ok(Self { cfg, store, jobs: jobs.max(1) })
    }

    fn run_parallel<I, T, F>(&self, items: Vec<I>, f: F) -> Result<Vec<T>, HarnessError>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> Result<T, HarnessError> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| HarnessError::Failed(format!("cannot start worker pool: {e}")))?;
        pool.install(|| items.into_par_iter().map(f).collect())
    }
}

/// Mean cumulative reward of the first or last tenth of the episodes (at least one).
pub fn window_mean(curve: &[EpisodeRecord], last: bool) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    let k = (curve.len() / 10).max(1);
    let part = if last { &curve[curve.len() - k..] } else { &curve[..k] };
    part.iter().map(|r| r.cumulative_reward).sum::<f64>() / k as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub obs: String,
    pub history: usize,
    pub seed: u64,
    pub steps: usize,
    pub episodes: usize,
    pub first_window_reward: f64,
    pub final_window_reward: f64,
    pub final_window_distance: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub summary: TrainSummary,
    pub curve: Vec<EpisodeRecord>,
    pub agent: SacAgent<f32>,
    pub dir: PathBuf,
}

/// Trains one policy and stores its checkpoint, curve and summary.
pub fn train_one(ctx: &Context, obs: ObsConfig, seed: u64, steps: usize) -> Result<TrainResult, HarnessError> {
    let spec = ctx.cfg.env_spec(obs);
    let dir = ctx.store.train_dir(&obs, seed);
    let mut schedule = ctx.cfg.schedule(steps);
    if schedule.checkpoint_every > 0 {
        schedule.checkpoint_dir = Some(dir.join("checkpoints"));
    }
    let out = train(&spec, &ctx.cfg.sac, &schedule, seed)?;
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(&out.agent, steps as u64, &ctx.store.policy_path(&obs, seed))?;
    let mut curve = Vec::new();
    write_learning_curve(&out.curve, &mut curve)?;
    write_atomic(&ctx.store.curve_path(&obs, seed), &curve)?;
    let k = (out.curve.len() / 10).max(1);
    let tail = &out.curve[out.curve.len().saturating_sub(k)..];
    let summary = TrainSummary {
        obs: obs.name(),
        history: obs.history,
        seed,
        steps,
        episodes: out.curve.len(),
        first_window_reward: window_mean(&out.curve, false),
        final_window_reward: window_mean(&out.curve, true),
        final_window_distance: if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().map(|r| r.final_distance).sum::<f64>() / tail.len() as f64
        },
    };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary").as_bytes())?;
    Ok(TrainResult { summary, curve: out.curve, agent: out.agent, dir })
}

pub fn cmd_train(
    ctx: &Context,
    name: &str,
    history: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
) -> Result<TrainResult, HarnessError> {
    let obs = ctx.cfg.obs(name, history)?;
    let seed = seed.unwrap_or(ctx.cfg.plan.seeds.first().copied().unwrap_or(1));
    train_one(ctx, obs, seed, steps.unwrap_or(ctx.cfg.plan.steps))
}

/// A controller row of an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    Pid,
    /// Trained policies of one observation configuration, one per seed.
    Policy {
        obs: ObsConfig,
        seeds: Vec<u64>,
    },
}

impl ControllerSpec {
    pub fn name(&self) -> String {
        match self {
            ControllerSpec::Pid => "PID".into(),
            ControllerSpec::Policy { obs, .. } => obs.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub controller: String,
    /// Per scenario, log files relative to the grid directory.
    pub logs: Vec<Vec<String>>,
    pub failed: Vec<Vec<bool>>,
}

/// Everything needed to rebuild a report from stored logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIndex {
    pub scenarios: Vec<String>,
    pub entries: Vec<IndexEntry>,
}

fn load_policy(ctx: &Context, obs: &ObsConfig, seed: u64) -> Result<SacAgent<f32>, HarnessError> {
    let path = ctx.store.policy_path(obs, seed);
    let (agent, _) = load_checkpoint(&path)?;
    if agent.obs_config() != *obs {
        return Err(HarnessError::Missing(format!(
            "checkpoint {} holds {} with H={}, expected {} with H={}",
            path.display(),
            agent.obs_config().name(),
            agent.obs_config().history,
            obs.name(),
            obs.history
        )));
    }
    Ok(agent)
}

fn pid(ctx: &Context) -> Result<PidController, HarnessError> {
    let spec = ctx.cfg.env_spec(ctx.cfg.obs(&ctx.cfg.plan.window_config, None)?);
    PidController::new(ctx.cfg.pid, PidPlant::nominal(&ctx.cfg.dynamics, spec.limits()))
        .map_err(|e| HarnessError::Usage(e.to_string()))
}

/// Runs every controller on every scenario, stores the logs under `dir` and builds the report.
pub fn evaluate_grid(
    ctx: &Context,
    controllers: &[ControllerSpec],
    scenarios: &[String],
    dir: &Path,
) -> Result<(Report, GridIndex), HarnessError> {
    let mut gaps = Vec::new();
    for c in controllers {
        if let ControllerSpec::Policy { obs, seeds } = c {
            for &s in seeds {
                let p = ctx.store.policy_path(obs, s);
                if !p.exists() {
                    gaps.push(p.display().to_string());
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(HarnessError::Missing(format!("missing checkpoints:\n  {}", gaps.join("\n  "))));
    }
    let plan = &ctx.cfg.plan;
    let trajs = scenarios
        .iter()
        .map(|s| TrajectorySpec::from_name(s, &ctx.cfg.trajectories).map_err(|e| HarnessError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> =
        (0..controllers.len()).flat_map(|c| (0..scenarios.len()).map(move |s| (c, s))).collect();
    let results = ctx.run_parallel(jobs, |(ci, si)| {
        let c = &controllers[ci];
        let runs: Vec<(Option<u64>, u64)> = match c {
            ControllerSpec::Pid => (0..plan.runs as u64).map(|k| (None, k)).collect(),
            ControllerSpec::Policy { seeds, .. } => {
                seeds.iter().flat_map(|&s| (0..plan.runs as u64).map(move |k| (Some(s), k))).collect()
            }
        };
        let mut metrics = Vec::new();
        let mut files = Vec::new();
        let mut failed = Vec::new();
        for (seed, k) in runs {
            let (mut ctl, obs): (Box<dyn Controller>, ObsConfig) = match (c, seed) {
                (ControllerSpec::Policy { obs, .. }, Some(s)) => {
                    (Box::new(PolicyController::new(obs.name(), load_policy(ctx, obs, s)?)), *obs)
                }
                _ => (Box::new(pid(ctx)?), ctx.cfg.obs(&plan.window_config, None)?),
            };
            let spec = ctx.cfg.env_spec(obs);
            let log = run_episode(ctl.as_mut(), &spec, &trajs[si], plan.duration, k, plan.randomized_eval)?;
            let rel = match seed {
                Some(s) => format!("logs/{}/{}/seed{s}-run{k}.csv", c.name(), scenarios[si]),
                None => format!("logs/{}/{}/run{k}.csv", c.name(), scenarios[si]),
            };
            let mut bytes = Vec::new();
            log.write_csv(&mut bytes)?;
            write_atomic(&dir.join(&rel), &bytes)?;
            metrics.push(rmse_metrics(&log)?);
            failed.push(log.failed);
            files.push(rel);
        }
        let cell = aggregate(&metrics, metrics.len())?;
        Ok((cell, files, failed))
    })?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut it = results.into_iter();
    for c in controllers {
        let mut row = ReportRow { controller: c.name(), cells: Vec::new(), failed_runs: Vec::new() };
        let mut entry = IndexEntry { controller: c.name(), logs: Vec::new(), failed: Vec::new() };
        for _ in scenarios {
            let (cell, files, failed) = it.next().expect("one result per job");
            row.cells.push(cell);
            row.failed_runs.push(failed.iter().filter(|&&f| f).count());
            entry.logs.push(files);
            entry.failed.push(failed);
        }
        rows.push(row);
        entries.push(entry);
    }
    let report = Report { scenarios: scenarios.to_vec(), rows };
    let index = GridIndex { scenarios: scenarios.to_vec(), entries };
    write_grid(dir, &report, &index, "Tracking error")?;
    Ok((report, index))
}

fn write_grid(dir: &Path, report: &Report, index: &GridIndex, title: &str) -> Result<(), HarnessError> {
    write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.md"), report.to_markdown(title, TABLE_NOTES).as_bytes())?;
    write_atomic(&dir.join("index.json"), serde_json::to_string_pretty(index).expect("index").as_bytes())?;
    Ok(())
}

/// Controllers of the benchmark plan: PID plus every configured observation space.
pub fn benchmark_controllers(ctx: &Context) -> Result<Vec<ControllerSpec>, HarnessError> {
    let mut out = vec![ControllerSpec::Pid];
    for name in &ctx.cfg.plan.configs {
        out.push(ControllerSpec::Policy { obs: ctx.cfg.obs(name, None)?, seeds: ctx.cfg.plan.seeds.clone() });
    }
    Ok(out)
}

pub fn cmd_benchmark(ctx: &Context) -> Result<Report, HarnessError> {
    let controllers = benchmark_controllers(ctx)?;
    let (report, _) = evaluate_grid(ctx, &controllers, &ctx.cfg.plan.scenarios, &ctx.store.benchmark_dir())?;
    Ok(report)
}

/// Rebuilds the report of a grid directory from its stored logs.
pub fn replay_grid(dir: &Path) -> Result<Report, HarnessError> {
    let text = std::fs::read_to_string(dir.join("index.json"))
        .map_err(|e| HarnessError::Missing(format!("no stored evaluation in {}: {e}", dir.display())))?;
    let index: GridIndex =
        serde_json::from_str(&text).map_err(|e| HarnessError::Missing(format!("unreadable index: {e}")))?;
    let mut rows = Vec::new();
    for entry in &index.entries {
        let mut row = ReportRow { controller: entry.controller.clone(), cells: Vec::new(), failed_runs: Vec::new() };
        for (files, failed) in entry.logs.iter().zip(&entry.failed) {
            let mut metrics = Vec::new();
            for f in files {
                let file = std::fs::File::open(dir.join(f))
                    .map_err(|e| HarnessError::Missing(format!("missing log {f}: {e}")))?;
                let log = RunLog::read_csv(std::io::BufReader::new(file))?;
                metrics.push(rmse_metrics(&log)?);
            }
            row.cells.push(aggregate(&metrics, files.len())?);
            row.failed_runs.push(failed.iter().filter(|&&f| f).count());
        }
        rows.push(row);
    }
    Ok(Report { scenarios: index.scenarios, rows })
}

/// Recomputes the benchmark report from logs, writes it under `replay/` and checks it
/// against the stored report.
pub fn cmd_replay(ctx: &Context) -> Result<Report, HarnessError> {
    let dir = ctx.store.benchmark_dir();
    let replayed = replay_grid(&dir)?;
    let stored_text = std::fs::read_to_string(dir.join("report.csv"))
        .map_err(|e| HarnessError::Missing(format!("no stored report: {e}")))?;
    let stored = Report::from_csv(&stored_text)?;
    write_atomic(&dir.join("replay").join("report.csv"), replayed.to_csv().as_bytes())?;
    write_atomic(
        &dir.join("replay").join("report.md"),
        replayed.to_markdown("Tracking error (replayed)", TABLE_NOTES).as_bytes(),
    )?;
    if stored != replayed {
        return Err(HarnessError::Failed("replayed report differs from the stored report".into()));
    }
    Ok(replayed)
}

#[derive(Debug, Clone)]
pub struct WindowAblation {
    pub results: Vec<TrainSummary>,
}

pub fn series_label(history: usize) -> String {
    if history == DEFAULT_HISTORY {
        format!("H={history} (default)")
    } else {
        format!("H={history}")
    }
}

pub fn cmd_ablate_window(
    ctx: &Context,
    seed: Option<u64>,
    steps: Option<usize>,
) -> Result<WindowAblation, HarnessError> {
    let plan = &ctx.cfg.plan;
    let seed = seed.unwrap_or(plan.seeds.first().copied().unwrap_or(1));
    let steps = steps.unwrap_or(plan.steps);
    let variants = plan
        .window_histories
        .iter()
        .map(|&h| ctx.cfg.obs(&plan.window_config, Some(h)))
        .collect::<Result<Vec<_>, _>>()?;
    let trained = ctx.run_parallel(variants, |obs| train_one(ctx, obs, seed, steps))?;
    let mut merged = String::from("series,history,episode,steps,cumulative_reward\n");
    let mut summary = String::from("series,history,episodes,first_window_reward,final_window_reward\n");
    for t in &trained {
        let h = t.summary.history;
        let label = series_label(h);
        for r in &t.curve {
            merged.push_str(&format!("{label},{h},{},{},{}\n", r.episode, r.steps, r.cumulative_reward));
        }
        summary.push_str(&format!(
            "{label},{h},{},{},{}\n",
            t.summary.episodes, t.summary.first_window_reward, t.summary.final_window_reward
        ));
    }
    let dir = ctx.store.root.join("ablate-window");
    write_atomic(&dir.join("curves.csv"), merged.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;
    Ok(WindowAblation { results: trained.into_iter().map(|t| t.summary).collect() })
}

pub fn cmd_ablate_inputs(ctx: &Context, seed: Option<u64>, steps: Option<usize>) -> Result<Report, HarnessError> {
    let plan = &ctx.cfg.plan;
    let seed = seed.unwrap_or(plan.seeds.first().copied().unwrap_or(1));
    let steps = steps.unwrap_or(plan.steps);
    let variants = plan.input_variants.iter().map(|n| ctx.cfg.obs(n, None)).collect::<Result<Vec<_>, _>>()?;
    ctx.run_parallel(variants.clone(), |obs| train_one(ctx, obs, seed, steps).map(|_| ()))?;
    let controllers: Vec<ControllerSpec> =
        variants.into_iter().map(|obs| ControllerSpec::Policy { obs, seeds: vec![seed] }).collect();
    let dir = ctx.store.root.join("ablate-inputs");
    let (report, index) = evaluate_grid(ctx, &controllers, &plan.input_scenarios, &dir)?;
    write_grid(&dir, &report, &index, "Input ablation: tracking error")?;
    Ok(report)
}

/// Resolves a stress-test controller: `pid`, `frozen`, `teleport`, an observation
/// configuration name (trained checkpoint of `seed`) or a checkpoint path.
fn stress_controller(
    ctx: &Context,
    which: &str,
    seed: u64,
) -> Result<(String, Box<dyn Controller>, ObsConfig), HarnessError> {
    let default_obs = ctx.cfg.obs(&ctx.cfg.plan.window_config, None)?;
    Ok(match which {
        "pid" => ("PID".into(), Box::new(pid(ctx)?), default_obs),
        "frozen" => ("frozen-hover".into(), Box::new(FrozenHover), default_obs),
        "teleport" => ("teleport".into(), Box::new(Teleport), default_obs),
        other => {
            if let Ok(obs) = ctx.cfg.obs(other, None) {
                let agent = load_policy(ctx, &obs, seed)?;
                let name = format!("{}-H{}", obs.name(), obs.history);
                (name.clone(), Box::new(PolicyController::new(name, agent)), obs)
            } else {
                let path = Path::new(other);
                if !path.exists() {
                    return Err(HarnessError::Missing(format!(
                        "controller `{other}` is neither pid, frozen, teleport, a known observation config nor an existing checkpoint"
                    )));
                }
                let (agent, _) = load_checkpoint(path)?;
                let obs = agent.obs_config();
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| other.into());
                (name.clone(), Box::new(PolicyController::new(name, agent)), obs)
            }
        }
    })
}

pub fn run_stress(
    ctx: &Context,
    ctl: &mut dyn Controller,
    obs: ObsConfig,
    seed: u64,
) -> Result<StressResult, HarnessError> {
    let traj = TrajectorySpec::new(TrajectoryKind::CircleRamp, &ctx.cfg.trajectories);
    Ok(stress_test(ctl, &ctx.cfg.env_spec(obs), &traj, &ctx.cfg.plan.stress, seed)?)
}

pub fn cmd_stress(ctx: &Context, which: &str, seed: Option<u64>) -> Result<(StressRow, StressResult), HarnessError> {
    let seed = seed.unwrap_or(ctx.cfg.plan.seeds.first().copied().unwrap_or(1));
    let (name, mut ctl, obs) = stress_controller(ctx, which, seed)?;
    let result = run_stress(ctx, ctl.as_mut(), obs, seed)?;
    let row = StressRow { name, velocity_mps: result.max_velocity };
    let dir = ctx.store.stress_dir();
    let csv_path = dir.join("stress.csv");
    let mut rows = match std::fs::read_to_string(&csv_path) {
        Ok(text) => parse_stress_csv(&text)?,
        Err(_) => Vec::new(),
    };
    match rows.iter_mut().find(|r| r.name == row.name) {
        Some(r) => *r = row.clone(),
        None => rows.push(row.clone()),
    }
    let mut text = String::from(STRESS_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&stress_csv_line(r));
        text.push('\n');
    }
    write_atomic(&csv_path, text.as_bytes())?;
    write_atomic(&dir.join("stress.md"), stress_markdown(&rows, ctx.cfg.plan.stress.speed_cap).as_bytes())?;
    Ok((row, result))
}
