use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadbench_cli::commands::{
    cmd_ablate_inputs, cmd_ablate_window, cmd_benchmark, cmd_replay, cmd_stress, cmd_train, Context,
};
use quadbench_cli::{Config, HarnessError, OUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "quadbench", version, about = "Observation-space benchmark for learned quadrotor control")]
struct Cli {
    /// Configuration file; the shipped defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one policy and write its checkpoint and learning curve.
    Train {
        #[arg(long)]
        obs: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Observation window length; defaults to the configured history.
        #[arg(long)]
        history: Option<usize>,
    },
    /// Evaluate PID and every planned policy on all scenarios.
    Benchmark,
    /// Train the window-length variants and merge their learning curves.
    AblateWindow {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train and evaluate the input-ablation variants.
    AblateInputs {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the velocity stress test for one controller.
    Stress {
        /// pid, frozen, teleport, an observation config name or a checkpoint path.
        #[arg(long, default_value = "pid")]
        controller: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the benchmark report from stored run logs.
    Replay,
    /// Print the valid observation configuration names.
    Configs,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let cfg = Config::load(cli.config.as_deref())?;
    if let Command::Configs = cli.command {
        for name in quadbench::env::CONFIG_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    if let Command::Train { obs, history, .. } = &cli.command {
        cfg.obs(obs, *history)?;
    }
    let ctx = Context::new(cfg, root, cli.jobs)?;
    match cli.command {
        Command::Train { obs, seed, steps, history } => {
            let r = cmd_train(&ctx, &obs, history, seed, steps)?;
            println!("wrote {}", r.dir.display());
            println!(
                "episodes {} first-window reward {:.3} final mean episode reward {:.3}",
                r.summary.episodes, r.summary.first_window_reward, r.summary.final_window_reward
            );
        }
        Command::Benchmark => {
            let report = cmd_benchmark(&ctx)?;
            println!("{}", report.to_markdown("Tracking error", &[]));
        }
        Command::AblateWindow { seed, steps } => {
            for s in cmd_ablate_window(&ctx, seed, steps)?.results {
                println!("H={:<3} final-window reward {:.3}", s.history, s.final_window_reward);
            }
        }
        Command::AblateInputs { seed, steps } => {
            let report = cmd_ablate_inputs(&ctx, seed, steps)?;
            println!("{}", report.to_markdown("Input ablation", &[]));
        }
        Command::Stress { controller, seed } => {
            let (row, result) = cmd_stress(&ctx, &controller, seed)?;
            if let Some(d) = result.diagnostic {
                eprintln!("warning: {d}");
            }
            println!("{},{}", row.name, row.velocity_mps);
        }
        Command::Replay => {
            cmd_replay(&ctx)?;
            println!("replayed report matches the stored benchmark report");
        }
        Command::Configs => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
