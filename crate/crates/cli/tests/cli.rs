use std::path::Path;
use std::process::{Command, Output};

use taskorbit::config::ExperimentConfig;
use taskorbit::detectability::view_detectability;
use taskorbit::experiment::Scene;
use taskorbit::geometry::{theta_in_range, ViewAngles};
use taskorbit::io::{read_metrics, read_trajectory, write_trajectory};
use taskorbit::planner::{Trajectory, TrajectoryStep, CANDIDATES};

/// A scene small enough for a full experiment in a few seconds.
const SMALL: &[&str] = &[
    "phantom.dims=48",
    "phantom.voxel_mm=2",
    "geometry.rows=24",
    "geometry.cols=32",
    "geometry.pixel_mm=4.8",
    "planner.delta_phi=20",
    "recon.iterations=10",
    "recon.gt_delta_phi=10",
    "detectability.oversample=2",
    "detectability.patch=8",
    "grid.phi_step=30",
    "grid.theta_step=15",
];

fn run(out: &Path, args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_taskorbit"));
    cmd.args(args).arg("--out").arg(out);
    for s in SMALL.iter().chain(extra) {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str], extra: &[&str]) {
    let o = run(out, args, extra);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn small_config(extra: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    let overrides: Vec<String> = SMALL.iter().chain(extra).map(|s| s.to_string()).collect();
    cfg.apply_overrides(&overrides).unwrap();
    cfg
}

#[test]
fn experiment_writes_the_protocol_matrix() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["experiment"], &[]);
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[8].trajectory_id, "ground-truth");
    assert_eq!(rows[8].ssim, 1.0);
    let count = |prefix: &str, suffix: &str| {
        std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.starts_with(prefix) && n.ends_with(suffix))
            .count()
    };
    assert_eq!(count("trajectory_", ".scores.csv"), 8);
    assert_eq!(count("recon_", ".vol"), 9);
    assert_eq!(count("slice_", ".pgm"), 9);
    assert!(dir.path().join("metrics.csv.prov").exists());
    let prov = std::fs::read_to_string(dir.path().join("metrics.csv.prov")).unwrap();
    assert!(prov.contains("config_hash = ") && prov.contains("command = experiment"));
}

#[test]
fn simulate_is_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["simulate"], &[]);
    ok(b.path(), &["simulate"], &[]);
    for f in ["projections.prj", "projections.geom"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

/// Exhaustive per-step argmax of the raw oracle scores over the admissible
/// candidates; ties go to the smaller offset magnitude, then the negative one.
fn replay(scene: &Scene, start: ViewAngles) -> Trajectory {
    let cfg = scene.cfg.planner_config();
    let mut steps = vec![TrajectoryStep { pose: start, chosen_score: None, scores: None }];
    let mut pose = start;
    for _ in 1..cfg.views() {
        let phi = pose.phi() + cfg.delta_phi;
        let mut best: Option<(f64, f64, f64)> = None;
        for off in &cfg.candidate_offsets {
            let theta = pose.theta() + off;
            if (theta - start.theta()).abs() > cfg.theta_limit || !theta_in_range(theta) {
                continue;
            }
            let d2 = view_detectability(&scene.vol, ViewAngles::new(phi, theta).unwrap(), &scene.detectability).unwrap();
            let better = match best {
                None => true,
                Some((b, boff, _)) => d2 > b || (d2 == b && (off.abs() < boff.abs() || (off.abs() == boff.abs() && *off < boff))),
            };
            if better {
                best = Some((d2, *off, theta));
            }
        }
        let (d2, _, theta) = best.unwrap();
        pose = ViewAngles::new(phi, theta).unwrap();
        steps.push(TrajectoryStep { pose, chosen_score: Some(d2), scores: None });
    }
    Trajectory { start, steps }
}

#[test]
fn oracle_plan_without_smoothing_matches_brute_force_replay() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["plan", "--predictor", "oracle", "--lambda", "0"], &[]);
    let scene = Scene::new(&small_config(&[])).unwrap();
    let expected = replay(&scene, scene.cfg.start().unwrap());
    let planned = read_trajectory(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(planned.poses(), expected.poses());
    write_trajectory(&dir.path().join("replay.csv"), &dir.path().join("replay.scores.csv"), &expected).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("trajectory.csv")).unwrap(),
        std::fs::read(dir.path().join("replay.csv")).unwrap()
    );
    assert_eq!(CANDIDATES, 11);
}

#[test]
fn pipeline_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom"], &[]);
    assert!(dir.path().join("phantom.vol").exists() && dir.path().join("phantom.lbl.prov").exists());
    ok(dir.path(), &["plan"], &[]);
    let traj = dir.path().join("trajectory.csv");
    ok(dir.path(), &["simulate", "--trajectory", traj.to_str().unwrap()], &[]);
    ok(dir.path(), &["recon"], &[]);
    let recon = dir.path().join("recon.vol");
    ok(dir.path(), &["eval", "--recon", recon.to_str().unwrap()], &[]);
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].fwhm_mm > 0.0 && rows[0].ssim <= 1.0);
    ok(dir.path(), &["map"], &[]);
    let map = std::fs::read_to_string(dir.path().join("map.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 12 * 7);
}

#[test]
fn dataset_train_and_learned_plan() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [
        "dataset.sims=2",
        "dataset.rows=16",
        "dataset.cols=16",
        "train.epochs=2",
        "train.hidden=8",
        "grid.phi_step=60",
        "grid.theta_step=45",
    ];
    ok(dir.path(), &["dataset"], &extra);
    ok(dir.path(), &["train"], &extra);
    assert!(dir.path().join("model.mdl").exists());
    let log = std::fs::read_to_string(dir.path().join("training.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 + 1);
    ok(dir.path(), &["plan", "--predictor", "learned"], &extra);
    assert_eq!(read_trajectory(&dir.path().join("trajectory.csv")).unwrap().len(), 10);
    ok(dir.path(), &["experiment", "--preset", "noise-robustness"], &extra);
    let text = std::fs::read_to_string(dir.path().join("noise_robustness.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);

    // a diverging run is a numerical failure
    let o = run(dir.path(), &["train"], &[&extra[..], &["train.learning_rate=1e12", "train.batch_norm=false"]].concat());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn single_error_line(o: &Output, category: &str) {
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{category}]: ")), "{err}");
}

#[test]
fn failures_exit_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["phantom"], &["no.such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o, "config");

    let o = run(dir.path(), &["recon"], &[]);
    assert_eq!(o.status.code(), Some(4));
    single_error_line(&o, "io");

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "planner.lambda = lots\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_taskorbit"))
        .args(["phantom", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    single_error_line(&o, "config");
}

#[test]
fn jobs_do_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["map"], &[]);
    ok(b.path(), &["map", "--jobs", "3"], &[]);
    assert_eq!(std::fs::read(a.path().join("map.csv")).unwrap(), std::fs::read(b.path().join("map.csv")).unwrap());
}
