//! Experiment pipelines shared by the command-line tool and the tests:
//! phantom → simulate → plan → reconstruct → evaluate.

use std::fmt;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::detectability::DetectabilityConfig;
use crate::error::{Error, Result};
use crate::geometry::{angular_distance, DetectorGeometry, ViewAngles};
use crate::io::{
    write_material_volume, write_metrics, write_pgm, write_provenance, write_recon, write_residuals, write_trajectory,
    MetricsRow,
};
use crate::metrics::{screw_fwhm, screw_slice, ssim, thread_peak, PatchSpec};
use crate::phantom::{build_phantom, MaterialVolume, ScrewSpec};
use crate::planner::{plan, OraclePredictor, Predictor, Simulator, Trajectory};
use crate::projector::{simulate_projection, AttenuationTable, ProjectionImage, Spectrum};
use crate::recon::{cgls, ground_truth_recon, CglsResult, ReconVolume};
use crate::regressor::{LearnedRegressor, RegressorModel};

/// Everything derived from a config that the pipeline stages share.
pub struct Scene {
    pub cfg: ExperimentConfig,
    pub vol: MaterialVolume,
    pub screws: Vec<ScrewSpec>,
    pub geom: DetectorGeometry,
    pub spectrum: Spectrum,
    pub table: AttenuationTable,
    pub detectability: DetectabilityConfig,
}

impl Scene {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.phantom_params();
        let vol = build_phantom(&params, cfg.phantom_seed)?;
        let screws = params.jittered_screws(cfg.phantom_seed);
        let detectability = cfg.detectability_config(&vol, &screws)?;
        Ok(Self {
            cfg: cfg.clone(),
            geom: cfg.detector(),
            spectrum: cfg.spectrum()?,
            table: AttenuationTable::builtin(),
            vol,
            screws,
            detectability,
        })
    }

    pub fn simulator(&self, fluence: Option<f64>) -> Simulator<'_> {
        Simulator {
            vol: &self.vol,
            geom: self.geom,
            spectrum: self.spectrum.clone(),
            table: self.table.clone(),
            fluence,
            noise_seed: self.cfg.noise_seed,
        }
    }

    pub fn simulate(&self, poses: &[ViewAngles], fluence: Option<f64>) -> Result<Vec<ProjectionImage>> {
        poses
            .iter()
            .map(|&p| simulate_projection(&self.vol, p, &self.geom, &self.spectrum, &self.table, fluence, self.cfg.noise_seed))
            .collect()
    }

    pub fn circular(&self) -> Result<Trajectory> {
        Trajectory::circular(self.cfg.start()?, &self.cfg.planner_config())
    }

    /// Plan with the exact oracle, or with `model` when given. The oracle
    /// never looks at images, so its plan does not depend on `fluence`.
    pub fn task_aware(&self, fluence: Option<f64>, model: Option<&RegressorModel>) -> Result<Trajectory> {
        let oracle = OraclePredictor::Exact { vol: &self.vol, cfg: &self.detectability };
        let learned = model.map(|model| LearnedRegressor { model });
        let predictor: &dyn Predictor = match &learned {
            Some(l) => l,
            None => &oracle,
        };
        plan(predictor, &self.simulator(fluence), self.cfg.start()?, &self.cfg.planner_config())
    }

    pub fn reconstruct(&self, images: &[ProjectionImage]) -> Result<CglsResult> {
        cgls(images, None, &self.geom, &self.cfg.recon_config())
    }

    /// Noiseless mono-energetic reconstruction over a densely sampled
    /// circular short scan. The default 200° arc exceeds 180° plus the fan
    /// angle, so the central slice is complete and the reference carries
    /// neither physics nor undersampling artifacts.
    pub fn ground_truth(&self) -> Result<CglsResult> {
        let poses = Trajectory::circular(self.cfg.start()?, &self.cfg.ground_truth_planner_config())?.poses();
        ground_truth_recon(&self.vol, &poses, &self.geom, &self.table, self.cfg.recon_energy_kev, &self.cfg.recon_config())
    }

    /// Screw FWHM and thread peak averaged over the screws, SSIM of the axial
    /// slice through the screws against `gt`.
    pub fn evaluate(&self, id: &str, recon: &ReconVolume, gt: &ReconVolume) -> Result<MetricsRow> {
        let n = self.screws.len() as f64;
        let mut fwhm = 0.0;
        let mut peak = 0.0;
        for s in &self.screws {
            fwhm += screw_fwhm(recon, s)? / n;
            peak += thread_peak(recon, &PatchSpec::around_screw(s, recon.voxel_size / 2.0), s.thread_pitch)? / n;
        }
        let k = screw_slice(gt, &self.screws)?;
        let [nx, ny, _] = recon.dims;
        let value = ssim(&recon.slice_z(k)?, &gt.slice_z(k)?, ny, nx)?;
        Ok(MetricsRow { trajectory_id: id.to_string(), fwhm_mm: fwhm, thread_peak: peak, ssim: value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circular,
    TaskAware,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Circular => "circular",
            TrajectoryKind::TaskAware => "task-aware",
        }
    }
}

/// One protocol of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: TrajectoryKind,
    pub fluence: Option<f64>,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fluence {
            Some(v) => write!(f, "{}_{v:e}", self.kind.name()),
            None => write!(f, "{}_noiseless", self.kind.name()),
        }
    }
}

pub const GROUND_TRUTH_ID: &str = "ground-truth";

/// {circular, task-aware} × {noiseless, each configured fluence}.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let levels: Vec<Option<f64>> = std::iter::once(None).chain(cfg.experiment_fluences.0.iter().map(|&f| Some(f))).collect();
    [TrajectoryKind::Circular, TrajectoryKind::TaskAware]
        .into_iter()
        .flat_map(|kind| levels.iter().map(move |&fluence| Cell { kind, fluence }))
        .collect()
}

pub struct CellOutcome {
    pub cell: Cell,
    pub trajectory: Trajectory,
    pub recon: CglsResult,
    pub metrics: MetricsRow,
}

pub struct ExperimentOutcome {
    pub cells: Vec<CellOutcome>,
    pub ground_truth: MetricsRow,
}

impl ExperimentOutcome {
    /// Metric rows in table order, ground truth last.
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.cells.iter().map(|c| c.metrics.clone()).chain(std::iter::once(self.ground_truth.clone())).collect()
    }

    pub fn get(&self, kind: TrajectoryKind, fluence: Option<f64>) -> Option<&CellOutcome> {
        self.cells.iter().find(|c| c.cell.kind == kind && c.cell.fluence == fluence)
    }
}

fn run_cell(scene: &Scene, cell: Cell, model: Option<&RegressorModel>, gt: &ReconVolume) -> Result<CellOutcome> {
    let trajectory = match cell.kind {
        TrajectoryKind::Circular => scene.circular()?,
        TrajectoryKind::TaskAware => scene.task_aware(cell.fluence, model)?,
    };
    let images = scene.simulate(&trajectory.poses(), cell.fluence)?;
    let mut recon = scene.reconstruct(&images)?;
    let id = cell.to_string();
    recon.volume.provenance = id.clone();
    let metrics = scene.evaluate(&id, &recon.volume, gt)?;
    Ok(CellOutcome { cell, trajectory, recon, metrics })
}

/// Run every protocol cell, `jobs` at a time. Results do not depend on `jobs`.
pub fn run_experiment(scene: &Scene, model: Option<&RegressorModel>, jobs: usize) -> Result<(ExperimentOutcome, CglsResult)> {
    let mut gt = scene.ground_truth()?;
    gt.volume.provenance = GROUND_TRUTH_ID.into();
    let ground_truth = scene.evaluate(GROUND_TRUTH_ID, &gt.volume, &gt.volume)?;
    let reference = &gt.volume;
    let all = cells(&scene.cfg);
    let mut slots: Vec<Option<Result<CellOutcome>>> = (0..all.len()).map(|_| None).collect();
    for (chunk_cells, chunk_slots) in all.chunks(jobs.max(1)).zip(slots.chunks_mut(jobs.max(1))) {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                chunk_cells.iter().map(|&c| s.spawn(move || run_cell(scene, c, model, reference))).collect();
            for (slot, h) in chunk_slots.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Error::Numerical("worker panicked".into()))));
            }
        });
    }
    let cells = slots.into_iter().map(|s| s.expect("every cell ran")).collect::<Result<Vec<_>>>()?;
    Ok((ExperimentOutcome { cells, ground_truth }, gt))
}

/// Write trajectories, reconstructions, residuals, axial slices and the
/// combined metrics table under `dir`, each with a provenance sidecar.
pub fn write_experiment(dir: &Path, scene: &Scene, outcome: &ExperimentOutcome, gt: &CglsResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let hash = scene.cfg.hash();
    let seeds = [("phantom", scene.cfg.phantom_seed), ("noise", scene.cfg.noise_seed)];
    let prov = |p: &Path| write_provenance(p, &hash, "experiment", &seeds);
    let k = screw_slice(&gt.volume, &scene.screws)?;
    let [nx, ny, _] = gt.volume.dims;

    let vol = dir.join("phantom.vol");
    let lbl = dir.join("phantom.lbl");
    write_material_volume(&vol, &lbl, &scene.vol)?;
    prov(&vol)?;
    prov(&lbl)?;

    let mut volumes: Vec<(String, &CglsResult)> = vec![(GROUND_TRUTH_ID.to_string(), gt)];
    for c in &outcome.cells {
        let id = c.cell.to_string();
        let traj = dir.join(format!("trajectory_{id}.csv"));
        let scores = dir.join(format!("trajectory_{id}.scores.csv"));
        write_trajectory(&traj, &scores, &c.trajectory)?;
        prov(&traj)?;
        prov(&scores)?;
        volumes.push((id, &c.recon));
    }
    for (id, r) in volumes {
        let files = [
            dir.join(format!("recon_{id}.vol")),
            dir.join(format!("residuals_{id}.csv")),
            dir.join(format!("slice_{id}.pgm")),
        ];
        write_recon(&files[0], &r.volume)?;
        write_residuals(&files[1], &r.residuals)?;
        write_pgm(&files[2], &r.volume.slice_z(k)?, ny, nx)?;
        for f in &files {
            prov(f)?;
        }
    }
    let metrics = dir.join("metrics.csv");
    write_metrics(&metrics, &outcome.rows())?;
    prov(&metrics)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Mean angular mismatch of the plan at each configured fluence against the
/// noiseless plan, with the same predictor and start.
pub fn noise_robustness(scene: &Scene, model: Option<&RegressorModel>) -> Result<Vec<(f64, f64)>> {
    let reference = scene.task_aware(None, model)?.poses();
    scene
        .cfg
        .experiment_fluences
        .0
        .iter()
        .map(|&f| {
            let poses = scene.task_aware(Some(f), model)?.poses();
            Ok((f, angular_distance(&poses, &reference)?.mean))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "phantom.dims=48".into(),
            "phantom.voxel_mm=2".into(),
            "geometry.rows=24".into(),
            "geometry.cols=32".into(),
            "geometry.pixel_mm=4.8".into(),
            "planner.delta_phi=20".into(),
            "recon.iterations=10".into(),
            "recon.gt_delta_phi=10".into(),
            "detectability.oversample=2".into(),
            "detectability.patch=8".into(),
            "experiment.fluences=1e5".into(),
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn cell_matrix_and_ids() {
        let cfg = ExperimentConfig::default();
        let ids: Vec<String> = cells(&cfg).iter().map(ToString::to_string).collect();
        assert_eq!(
            ids,
            [
                "circular_noiseless",
                "circular_4e5",
                "circular_1e5",
                "circular_5e4",
                "task-aware_noiseless",
                "task-aware_4e5",
                "task-aware_1e5",
                "task-aware_5e4"
            ]
        );
    }

    #[test]
    fn small_experiment_is_independent_of_jobs() {
        let scene = Scene::new(&small_config()).unwrap();
        let (a, _) = run_experiment(&scene, None, 1).unwrap();
        let (b, _) = run_experiment(&scene, None, 3).unwrap();
        assert_eq!(a.rows(), b.rows());
        assert_eq!(a.rows().len(), 5);
        assert_eq!(a.ground_truth.ssim, 1.0);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.trajectory, y.trajectory);
            assert_eq!(x.recon.volume.values, y.recon.volume.values);
        }
        // the oracle ignores images
        let t = |f| &a.get(TrajectoryKind::TaskAware, f).unwrap().trajectory;
        assert_eq!(t(None).poses(), t(Some(1e5)).poses());
    }
}
