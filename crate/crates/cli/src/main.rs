use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use taskorbit::config::ExperimentConfig;
use taskorbit::detectability::detectability_map_on;
use taskorbit::experiment::{noise_robustness, run_experiment, write_experiment, Scene};
use taskorbit::io::{
    read_dataset, read_model, read_projections, read_recon, read_trajectory, write_dataset, write_map_csv, write_map_pgm,
    write_material_volume, write_metrics, write_model, write_pgm, write_projections, write_provenance, write_recon,
    write_residuals, write_text, write_trajectory,
};
use taskorbit::metrics::screw_slice;
use taskorbit::regressor::{evaluate, generate_dataset, train, RegressorModel};
use taskorbit::{Error, Result};

#[derive(Parser)]
#[command(name = "taskorbit", version, about = "Task-aware CBCT trajectory experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// key = value config file; defaults apply to missing keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Set every seed (phantom, noise, dataset, training)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Override a config key, e.g. --set planner.lambda=0
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the labelled phantom volume
    Phantom,
    /// Simulate projections along a trajectory (circular by default)
    Simulate {
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Oracle detectability over the pose grid
    Map,
    /// Simulate training data for the regressor
    Dataset,
    /// Train the regressor on a dataset
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Plan a task-aware trajectory
    Plan {
        #[arg(long, value_enum)]
        predictor: Option<PredictorArg>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Reconstruct a projection stack with CGLS
    Recon {
        #[arg(long)]
        projections: Option<PathBuf>,
    },
    /// Image-quality metrics of a reconstruction
    Eval {
        #[arg(long)]
        recon: PathBuf,
        /// Reference volume; the ground-truth reconstruction when omitted
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Run the full protocol matrix
    Experiment {
        #[arg(long, value_enum, default_value_t = Preset::Table)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Oracle,
    Learned,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Preset {
    /// Circular and task-aware scans at every noise level
    Table,
    /// Plans at every noise level vs the noiseless plan
    NoiseRobustness,
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    jobs: usize,
    command: &'static str,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn provenance(&self, file: &Path) -> Result<()> {
        let c = &self.cfg;
        let seeds =
            [("phantom", c.phantom_seed), ("noise", c.noise_seed), ("dataset", c.dataset_seed), ("train", c.train_seed)];
        write_provenance(file, &c.hash(), self.command, &seeds)
    }

    fn model_path(&self) -> PathBuf {
        self.out.join(&self.cfg.model)
    }

    fn model(&self) -> Result<Option<RegressorModel>> {
        match self.cfg.predictor.as_str() {
            "learned" => read_model(&self.model_path()).map(Some),
            _ => Ok(None),
        }
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set_all_seeds(seed);
    }
    if let Some(out) = &g.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    cfg.apply_overrides(&g.overrides)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    if let Command::Plan { predictor, lambda } = &cli.command {
        if let Some(p) = predictor {
            cfg.predictor = match p {
                PredictorArg::Oracle => "oracle",
                PredictorArg::Learned => "learned",
            }
            .into();
        }
        if let Some(l) = lambda {
            cfg.lambda = *l;
        }
        cfg.validate()?;
    }
    if cli.global.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", out.display()))))?;
    let command = match cli.command {
        Command::Phantom => "phantom",
        Command::Simulate { .. } => "simulate",
        Command::Map => "map",
        Command::Dataset => "dataset",
        Command::Train { .. } => "train",
        Command::Plan { .. } => "plan",
        Command::Recon { .. } => "recon",
        Command::Eval { .. } => "eval",
        Command::Experiment { .. } => "experiment",
    };
    let run = Run { cfg, out, jobs: cli.global.jobs, command };
    match cli.command {
        Command::Phantom => cmd_phantom(&run),
        Command::Simulate { trajectory } => cmd_simulate(&run, trajectory.as_deref()),
        Command::Map => cmd_map(&run),
        Command::Dataset => cmd_dataset(&run),
        Command::Train { dataset } => cmd_train(&run, dataset),
        Command::Plan { .. } => cmd_plan(&run),
        Command::Recon { projections } => cmd_recon(&run, projections),
        Command::Eval { recon, reference } => cmd_eval(&run, &recon, reference.as_deref()),
        Command::Experiment { preset } => cmd_experiment(&run, preset),
    }
}

fn cmd_phantom(run: &Run) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let (vol, lbl) = (run.path("phantom.vol"), run.path("phantom.lbl"));
    write_material_volume(&vol, &lbl, &scene.vol)?;
    run.provenance(&vol)?;
    run.provenance(&lbl)
}

fn cmd_simulate(run: &Run, trajectory: Option<&Path>) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let traj = match trajectory {
        Some(p) => read_trajectory(p)?,
        None => scene.circular()?,
    };
    let images = scene.simulate(&traj.poses(), run.cfg.noise_fluence.0)?;
    let (prj, geo) = (run.path("projections.prj"), run.path("projections.geom"));
    write_projections(&prj, &geo, &images, &scene.geom)?;
    run.provenance(&prj)?;
    run.provenance(&geo)
}

fn cmd_map(run: &Run) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let map = detectability_map_on(&scene.vol, &run.cfg.pose_grid(), &scene.detectability, run.jobs)?;
    let (csv, pgm) = (run.path("map.csv"), run.path("map.pgm"));
    write_map_csv(&csv, &map)?;
    write_map_pgm(&pgm, &map)?;
    run.provenance(&csv)?;
    run.provenance(&pgm)
}

fn cmd_dataset(run: &Run) -> Result<()> {
    let ds = generate_dataset(run.cfg.dataset_sims, run.cfg.dataset_seed, &run.cfg.dataset_config(run.jobs)?)?;
    let dir = run.path("dataset");
    write_dataset(&dir, &ds)?;
    run.provenance(&dir.join("manifest.txt"))
}

fn cmd_train(run: &Run, dataset: Option<PathBuf>) -> Result<()> {
    let ds = read_dataset(&dataset.unwrap_or_else(|| run.path("dataset")))?;
    let c = &run.cfg;
    let init = RegressorModel::desk(ds.manifest.input_dims, c.batch_norm, c.hidden, c.train_seed)?;
    let outcome = train(&init, &ds.train_samples(), &c.train_config())?;
    let test = ds.test_samples();
    let held_out = if test.is_empty() { f64::NAN } else { evaluate(&outcome.model, &test)? };
    let model = run.model_path();
    write_model(&model, &outcome.model)?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in outcome.losses.iter().enumerate() {
        log.push_str(&format!("{e},{l}\n"));
    }
    log.push_str(&format!("test,{held_out}\n"));
    let losses = run.path("training.csv");
    write_text(&losses, &log)?;
    run.provenance(&model)?;
    run.provenance(&losses)
}

fn cmd_plan(run: &Run) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let model = run.model()?;
    let traj = scene.task_aware(run.cfg.noise_fluence.0, model.as_ref())?;
    let (csv, scores) = (run.path("trajectory.csv"), run.path("trajectory.scores.csv"));
    write_trajectory(&csv, &scores, &traj)?;
    run.provenance(&csv)?;
    run.provenance(&scores)
}

fn cmd_recon(run: &Run, projections: Option<PathBuf>) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let prj = projections.unwrap_or_else(|| run.path("projections.prj"));
    let images = read_projections(&prj, &prj.with_extension("geom"), &scene.geom)?;
    let result = scene.reconstruct(&images)?;
    let k = screw_slice(&result.volume, &scene.screws)?;
    let [nx, ny, _] = result.volume.dims;
    let files = [run.path("recon.vol"), run.path("residuals.csv"), run.path("slice.pgm")];
    write_recon(&files[0], &result.volume)?;
    write_residuals(&files[1], &result.residuals)?;
    write_pgm(&files[2], &result.volume.slice_z(k)?, ny, nx)?;
    files.iter().try_for_each(|f| run.provenance(f))
}

fn cmd_eval(run: &Run, recon: &Path, reference: Option<&Path>) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let vol = read_recon(recon)?;
    let gt = match reference {
        Some(p) => read_recon(p)?,
        None => scene.ground_truth()?.volume,
    };
    let id = recon.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "recon".into());
    let row = scene.evaluate(&id, &vol, &gt)?;
    let csv = run.path("metrics.csv");
    write_metrics(&csv, &[row])?;
    run.provenance(&csv)
}

fn cmd_experiment(run: &Run, preset: Preset) -> Result<()> {
    let scene = Scene::new(&run.cfg)?;
    let model = run.model()?;
    match preset {
        Preset::Table => {
            let (outcome, gt) = run_experiment(&scene, model.as_ref(), run.jobs)?;
            write_experiment(&run.out, &scene, &outcome, &gt)
        }
        Preset::NoiseRobustness => {
            let mut text = String::from("fluence,mean_angular_mismatch_deg\n");
            for (f, m) in noise_robustness(&scene, model.as_ref())? {
                text.push_str(&format!("{f:e},{m}\n"));
            }
            let csv = run.path("noise_robustness.csv");
            write_text(&csv, &text)?;
            run.provenance(&csv)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
        Error::Config(_) | Error::Range(_) | Error::Dimension(_) | Error::Geometry(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
