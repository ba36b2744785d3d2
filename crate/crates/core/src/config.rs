//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::detectability::{DetectabilityConfig, RoiPlacement};
use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, PoseGrid, ViewAngles};
use crate::io::{parse_key_values, read_text, sha256_hex};
use crate::phantom::{MaterialVolume, PhantomParams, ScrewSpec};
use crate::planner::PlannerConfig;
use crate::projector::Spectrum;
use crate::recon::ReconConfig;
use crate::regressor::{DatasetConfig, TrainConfig};

/// `none` or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptF64(pub Option<f64>);

impl FromStr for OptF64 {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self(None)),
            v => v.parse().map(|x| Self(Some(x))).map_err(|_| format!("expected a number or `none`, got `{v}`")),
        }
    }
}

impl fmt::Display for OptF64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("none"),
        }
    }
}

/// Comma-separated numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);

impl FromStr for F64List {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{}`", v.trim())))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl fmt::Display for F64List {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

macro_rules! config_fields {
    ($( $field:ident : $ty:ty = $default:expr => $key:literal ),* $(,)?) => {
        /// Every tunable of the toolkit. Unknown keys are rejected.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ExperimentConfig {
            $( pub $field: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$( $key ),*];

            /// Set one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$field = value
                            .parse::<$ty>()
                            .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}` ({e})")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// All keys with their current values, in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( ($key, self.$field.to_string()) ),*]
            }
        }
    };
}

config_fields! {
    out: String = "out".to_string() => "out",
    phantom_seed: u64 = 1 => "phantom.seed",
    phantom_dims: usize = 96 => "phantom.dims",
    phantom_voxel_mm: f64 = 1.0 => "phantom.voxel_mm",
    phantom_jitter_mm: f64 = 10.0 => "phantom.jitter_mm",
    phantom_jitter_deg: f64 = 10.0 => "phantom.jitter_deg",
    phantom_thread_pitch_mm: f64 = 4.0 => "phantom.thread_pitch_mm",
    geometry_rows: usize = 72 => "geometry.rows",
    geometry_cols: usize = 96 => "geometry.cols",
    geometry_pixel_mm: f64 = 1.6 => "geometry.pixel_mm",
    geometry_sid_mm: f64 = 600.0 => "geometry.sid_mm",
    geometry_sdd_mm: f64 = 1000.0 => "geometry.sdd_mm",
    spectrum: String = "builtin".to_string() => "spectrum",
    noise_fluence: OptF64 = OptF64(Some(1e5)) => "noise.fluence",
    noise_seed: u64 = 1 => "noise.seed",
    grid_phi_step: f64 = 5.0 => "grid.phi_step",
    grid_theta_min: f64 = 45.0 => "grid.theta_min",
    grid_theta_max: f64 = 135.0 => "grid.theta_max",
    grid_theta_step: f64 = 5.0 => "grid.theta_step",
    roi: String = "screws".to_string() => "detectability.roi",
    oversample: usize = 5 => "detectability.oversample",
    patch: usize = 16 => "detectability.patch",
    taper_mm: f64 = 1.0 => "detectability.taper_mm",
    beta: f64 = 0.01 => "detectability.beta",
    task_center: OptF64 = OptF64(None) => "detectability.task_center",
    task_bandwidth: f64 = 0.2 => "detectability.task_bandwidth",
    delta_phi: f64 = 5.0 => "planner.delta_phi",
    lambda: f64 = 0.6 => "planner.lambda",
    theta_limit: f64 = 45.0 => "planner.theta_limit",
    arc: f64 = 200.0 => "planner.arc",
    start_phi: f64 = 0.0 => "planner.start_phi",
    start_theta: f64 = 90.0 => "planner.start_theta",
    predictor: String = "oracle".to_string() => "planner.predictor",
    model: String = "model.mdl".to_string() => "planner.model",
    recon_iterations: usize = 50 => "recon.iterations",
    recon_mask_radius_mm: OptF64 = OptF64(None) => "recon.mask_radius_mm",
    recon_energy_kev: f64 = 70.0 => "recon.energy_kev",
    recon_gt_delta_phi: f64 = 1.0 => "recon.gt_delta_phi",
    dataset_sims: usize = 7 => "dataset.sims",
    dataset_test_sims: usize = 1 => "dataset.test_sims",
    dataset_seed: u64 = 1 => "dataset.seed",
    dataset_fluences: F64List = F64List(vec![4e5, 1e5, 5e4]) => "dataset.fluences",
    dataset_rows: usize = 36 => "dataset.rows",
    dataset_cols: usize = 48 => "dataset.cols",
    learning_rate: f64 = 0.01 => "train.learning_rate",
    momentum: f64 = 0.9 => "train.momentum",
    batch_size: usize = 16 => "train.batch_size",
    epochs: usize = 20 => "train.epochs",
    train_seed: u64 = 1 => "train.seed",
    augment: bool = true => "train.augment",
    batch_norm: bool = true => "train.batch_norm",
    hidden: usize = 64 => "train.hidden",
    experiment_fluences: F64List = F64List(vec![4e5, 1e5, 5e4]) => "experiment.fluences",
}

impl ExperimentConfig {
    /// Parse a config file's text: every key must be known.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?)
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Set every seed to `seed`.
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.phantom_seed = seed;
        self.noise_seed = seed;
        self.dataset_seed = seed;
        self.train_seed = seed;
    }

    /// Canonical text form (all keys, fixed order).
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text.
    /// SHA-256 of every setting except `out`: where results are written
    /// does not change them.
    pub fn hash(&self) -> String {
        let text: String = self.entries().iter().filter(|(k, _)| *k != "out").map(|(k, v)| format!("{k} = {v}\n")).collect();
        sha256_hex(text.as_bytes())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector().validate()?;
        self.pose_grid().validate()?;
        self.planner_config().validate()?;
        self.ground_truth_planner_config().validate()?;
        self.recon_config().validate()?;
        self.train_config().validate()?;
        self.placement()?;
        self.start()?;
        if !["oracle", "learned"].contains(&self.predictor.as_str()) {
            return Err(Error::Config(format!("unknown predictor `{}`", self.predictor)));
        }
        if self.phantom_dims == 0 || !(self.phantom_voxel_mm > 0.0) {
            return Err(Error::Config("phantom dims and voxel size must be positive".into()));
        }
        if !(self.phantom_jitter_mm >= 0.0) || !(self.phantom_jitter_deg >= 0.0) || !(self.phantom_thread_pitch_mm > 0.0) {
            return Err(Error::Config("phantom jitter must be >= 0 and thread pitch > 0".into()));
        }
        let fluences = self.dataset_fluences.0.iter().chain(&self.experiment_fluences.0).chain(self.noise_fluence.0.iter());
        for f in fluences {
            if !(*f > 0.0) || !f.is_finite() {
                return Err(Error::Config(format!("fluence {f} must be positive")));
            }
        }
        if self.dataset_fluences.0.is_empty() || self.experiment_fluences.0.is_empty() {
            return Err(Error::Config("fluence lists must be non-empty".into()));
        }
        if self.dataset_sims == 0 || self.dataset_rows == 0 || self.dataset_cols == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if self.spectrum != "builtin" && self.spectrum.is_empty() {
            return Err(Error::Config("spectrum must be `builtin` or a file path".into()));
        }
        Ok(())
    }

    pub fn phantom_params(&self) -> PhantomParams {
        let n = self.phantom_dims;
        let mut p = PhantomParams::default();
        for s in &mut p.screws {
            s.thread_pitch = self.phantom_thread_pitch_mm;
        }
        let mut p = p.scaled([n, n, n], self.phantom_voxel_mm);
        p.jitter_translation = self.phantom_jitter_mm;
        p.jitter_tilt = self.phantom_jitter_deg;
        p
    }

    pub fn detector(&self) -> DetectorGeometry {
        DetectorGeometry {
            rows: self.geometry_rows,
            cols: self.geometry_cols,
            pixel_pitch: self.geometry_pixel_mm,
            source_isocenter_distance: self.geometry_sid_mm,
            source_detector_distance: self.geometry_sdd_mm,
        }
    }

    /// The builtin spectrum or a CSV file of `energy_kev,fluence` rows.
    pub fn spectrum(&self) -> Result<Spectrum> {
        if self.spectrum == "builtin" {
            return Spectrum::builtin(1e5);
        }
        let path = Path::new(&self.spectrum);
        let bins = read_text(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with("energy"))
            .map(|l| {
                let (e, f) = l.split_once(',').ok_or_else(|| Error::Format(format!("{}: bad row `{l}`", path.display())))?;
                let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number `{v}`", path.display())));
                Ok((num(e)?, num(f)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Spectrum::new(bins)
    }

    pub fn pose_grid(&self) -> PoseGrid {
        PoseGrid {
            phi_step: self.grid_phi_step,
            theta_min: self.grid_theta_min,
            theta_max: self.grid_theta_max,
            theta_step: self.grid_theta_step,
        }
    }

    pub fn placement(&self) -> Result<RoiPlacement> {
        RoiPlacement::from_name(&self.roi).ok_or_else(|| Error::Config(format!("unknown roi placement `{}`", self.roi)))
    }

    pub fn detectability_config(&self, vol: &MaterialVolume, screws: &[ScrewSpec]) -> Result<DetectabilityConfig> {
        let base = DetectabilityConfig::for_screws(vol, screws, self.placement()?)?;
        let cfg = DetectabilityConfig {
            detector: self.detector(),
            oversample: self.oversample,
            patch: self.patch,
            taper: self.taper_mm,
            beta: self.beta,
            task_center: self.task_center.0.unwrap_or(base.task_center),
            task_bandwidth: self.task_bandwidth,
            spectrum: self.spectrum()?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig { delta_phi: self.delta_phi, lambda: self.lambda, theta_limit: self.theta_limit, arc: self.arc, ..Default::default() }
    }

    /// The circular short scan of the ground-truth reference: the experiment
    /// arc, sampled every `recon.gt_delta_phi` degrees.
    pub fn ground_truth_planner_config(&self) -> PlannerConfig {
        PlannerConfig { delta_phi: self.recon_gt_delta_phi, ..self.planner_config() }
    }

    pub fn start(&self) -> Result<ViewAngles> {
        ViewAngles::new(self.start_phi, self.start_theta)
    }

    pub fn recon_config(&self) -> ReconConfig {
        let n = self.phantom_dims;
        ReconConfig {
            iterations: self.recon_iterations,
            mask_radius: self.recon_mask_radius_mm.0,
            dims: [n, n, n],
            voxel_size: self.phantom_voxel_mm,
        }
    }

    pub fn dataset_config(&self, jobs: usize) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            grid: self.pose_grid(),
            phantom: self.phantom_params(),
            placement: self.placement()?,
            detector: self.detector(),
            spectrum: self.spectrum()?,
            fluences: self.dataset_fluences.0.clone(),
            input_dims: (self.dataset_rows, self.dataset_cols),
            delta_phi: self.delta_phi,
            test_sims: self.dataset_test_sims,
            jobs,
            ..Default::default()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.train_seed,
            augment: self.augment,
        }
    }
}
