use std::path::Path;
use std::process::{Command, Output};

use quadbench_cli::report::Report;
use quadbench_cli::Config;

const TINY: &str = r#"
[sac]
actor_hidden = [16, 16]
critic_hidden = [16, 16]
batch = 16
warmup_steps = 100
buffer_capacity = 5000

[env]
max_steps = 100
init_distance = [0.5, 1.0]

[plan]
configs = []
seeds = [1]
steps = 300
scenarios = ["hover", "ellipse"]
runs = 3
duration = 2.0
input_scenarios = ["ellipse", "eight2d", "eight3d"]
"#;

fn quadbench(root: &Path, config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_quadbench"));
    cmd.env("QUADBENCH_OUT", root);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn setup(extra: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, format!("{TINY}\n{extra}")).unwrap();
    (dir, cfg)
}

#[test]
fn shipped_config_round_trips_and_hash_tracks_values() {
    let cfg = Config::shipped();
    assert_eq!(Config::parse(&cfg.canonical()).unwrap(), cfg);
    assert_eq!(cfg.hash(), Config::parse(&cfg.canonical()).unwrap().hash());
    let mut changed = cfg.clone();
    changed.reward.k_u += 1e-9;
    assert_ne!(changed.hash(), cfg.hash());
    let mut changed = cfg.clone();
    changed.plan.seeds.push(9);
    assert_ne!(changed.hash(), cfg.hash());
    assert_eq!(cfg.env.history, 10);
    assert_eq!(cfg.env.sim.init_distance, [0.5, 1.0]);
}

#[test]
fn rejects_bad_configs() {
    assert!(Config::parse("[plan]\nconfigs = [\"eQ-u\"]").is_err());
    assert!(Config::parse("[plan]\nseeds = [1, 1]").is_err());
    assert!(Config::parse("[unknown]\nx = 1").is_err());
    assert!(Config::parse("[plan]\nscenarios = [\"spiral\"]").is_err());
}

#[test]
fn unknown_observation_name_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = quadbench(dir.path(), None, &["train", "--obs", "eQ-u", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in quadbench::env::CONFIG_NAMES {
        assert!(err.contains(name), "{err}");
    }
    let out = quadbench(dir.path(), None, &["train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rerun_is_byte_identical() {
    let (dir, cfg) = setup("");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for root in [&a, &b] {
        let out = quadbench(root, Some(&cfg), &["train", "--obs", "eW-R-u", "--seed", "1", "--steps", "300"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("final mean episode reward"));
    }
    let rel = "train/eW-R-u-H10/seed1";
    for f in ["curve.csv", "policy.ckpt", "summary.json"] {
        let x = std::fs::read(a.join(rel).join(f)).unwrap();
        let y = std::fs::read(b.join(rel).join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let curve = std::fs::read_to_string(a.join(rel).join("curve.csv")).unwrap();
    assert!(curve.starts_with("episode,steps,cumulative_reward\n"));
}

#[test]
fn pid_only_benchmark_and_replay() {
    let (dir, cfg) = setup("");
    let root = dir.path().join("out");
    let out = quadbench(&root, Some(&cfg), &["benchmark"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(root.join("benchmark/report.csv")).unwrap();
    let report = Report::from_csv(&text).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].controller, "PID");
    assert_eq!(report.scenarios, vec!["hover", "ellipse"]);
    for m in &report.rows[0].cells {
        assert_eq!(m.pc, (m.px + m.py + m.pz) / 3.0);
    }
    let logs = std::fs::read_dir(root.join("benchmark/logs/PID/ellipse")).unwrap().count();
    assert_eq!(logs, 3);

    let out = quadbench(&root, Some(&cfg), &["replay"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let replayed = std::fs::read_to_string(root.join("benchmark/replay/report.csv")).unwrap();
    assert_eq!(Report::from_csv(&replayed).unwrap(), report);

    let manifest = std::fs::read_to_string(root.join("manifest.json")).unwrap();
    assert!(manifest.contains(&Config::load(Some(&cfg)).unwrap().hash()));
}

#[test]
fn missing_checkpoints_are_listed() {
    let (dir, cfg) = setup("");
    std::fs::write(
        &cfg,
        std::fs::read_to_string(&cfg).unwrap().replace("configs = []", "configs = [\"eW-u\", \"eB-u\"]"),
    )
    .unwrap();
    let out = quadbench(&dir.path().join("out"), Some(&cfg), &["benchmark"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eW-u-H10") && err.contains("eB-u-H10"), "{err}");
    let out = quadbench(&dir.path().join("other"), Some(&cfg), &["replay"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn changing_config_under_one_root_is_refused() {
    let (dir, cfg) = setup("");
    let root = dir.path().join("out");
    assert!(quadbench(&root, Some(&cfg), &["stress", "--controller", "teleport"]).status.success());
    let out = quadbench(&root, None, &["stress", "--controller", "teleport"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stress_rows_and_ordering() {
    let (dir, cfg) = setup("");
    let root = dir.path().join("out");
    for c in ["teleport", "frozen", "pid"] {
        let out = quadbench(&root, Some(&cfg), &["stress", "--controller", c]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = std::fs::read_to_string(root.join("stress/stress.csv")).unwrap();
    let rows = quadbench_cli::report::parse_stress_csv(&csv).unwrap();
    assert!(csv.starts_with("name,velocity_mps\n"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].velocity_mps, f64::INFINITY);
    assert!(rows[1].velocity_mps < 0.2);
    assert!(rows[2].velocity_mps > rows[1].velocity_mps && rows[2].velocity_mps.is_finite());
    let md = std::fs::read_to_string(root.join("stress/stress.md")).unwrap();
    assert!(md.contains("| frozen-hover | 0.14 |"), "{md}");
    let out = quadbench(&root, Some(&cfg), &["stress", "--controller", "/no/such.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn window_ablation_writes_five_series() {
    let (dir, cfg) = setup("");
    let root = dir.path().join("out");
    let out = quadbench(&root, Some(&cfg), &["--jobs", "2", "ablate-window", "--steps", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(root.join("ablate-window/summary.csv")).unwrap();
    let series: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(series, vec!["H=1", "H=2", "H=5", "H=10 (default)", "H=15"]);
    let curves = std::fs::read_to_string(root.join("ablate-window/curves.csv")).unwrap();
    assert!(curves.starts_with("series,history,episode,steps,cumulative_reward\n"));
}

#[test]
fn input_ablation_has_table_shape() {
    let (dir, cfg) = setup("");
    let root = dir.path().join("out");
    let out = quadbench(&root, Some(&cfg), &["ablate-inputs", "--steps", "200"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = Report::from_csv(&std::fs::read_to_string(root.join("ablate-inputs/report.csv")).unwrap()).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.controller.as_str()).collect();
    assert_eq!(names, vec!["eW-R-u", "eW-vW-R-u", "eW-q-u"]);
    let metric_columns: usize = report.rows[0].cells.len() * 4;
    assert_eq!(metric_columns, 12);
    let widths: Vec<usize> =
        names.iter().map(|n| n.parse::<quadbench::env::ObsConfig>().unwrap().step_width()).collect();
    assert_eq!(widths, vec![16, 19, 11]);
}
