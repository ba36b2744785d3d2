//! Browser bindings. A reduced scene (48³ voxels at 2 mm, 36×48 detector)
//! keeps every operation interactive on a single thread.

use taskorbit::config::ExperimentConfig;
use taskorbit::detectability::{detectability_map, DetectabilityMap};
use taskorbit::experiment::Scene;
use taskorbit::geometry::ViewAngles;
use taskorbit::planner::{plan, OraclePredictor};
use taskorbit::projector::simulate_projection;
use wasm_bindgen::prelude::*;

const DEMO_OVERRIDES: &[&str] = &[
    "phantom.dims=48",
    "phantom.voxel_mm=2",
    "geometry.rows=36",
    "geometry.cols=48",
    "geometry.pixel_mm=3.2",
    "detectability.oversample=3",
];

fn js(e: taskorbit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Scale to 0..=255 against the largest value.
fn to_gray(values: &[f64], gamma: f64) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return vec![0; values.len()];
    }
    values.iter().map(|v| ((v.max(0.0) / max).powf(gamma) * 255.0).round() as u8).collect()
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    map: Option<DetectabilityMap>,
    proj_rows: usize,
    proj_cols: usize,
}

#[wasm_bindgen]
impl Demo {
    /// Build the phantom for `seed` (jittered anatomy and screw placement).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, JsError> {
        Self::build(seed as u64).map_err(js)
    }

    fn build(seed: u64) -> taskorbit::Result<Demo> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&DEMO_OVERRIDES.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
        cfg.phantom_seed = seed;
        let scene = Scene::new(&cfg)?;
        Ok(Demo { proj_rows: scene.geom.rows, proj_cols: scene.geom.cols, scene, map: None })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.scene.vol.dims()[0]
    }

    #[wasm_bindgen(getter)]
    pub fn depth(&self) -> usize {
        self.scene.vol.dims()[2]
    }

    #[wasm_bindgen(getter, js_name = projRows)]
    pub fn proj_rows(&self) -> usize {
        self.proj_rows
    }

    #[wasm_bindgen(getter, js_name = projCols)]
    pub fn proj_cols(&self) -> usize {
        self.proj_cols
    }

    /// Axial density slice `k` as 8-bit grey, row-major (y, x).
    #[wasm_bindgen(js_name = phantomSlice)]
    pub fn phantom_slice(&self, k: usize) -> Result<Vec<u8>, JsError> {
        let [nx, ny, nz] = self.scene.vol.dims();
        if k >= nz {
            return Err(JsError::new(&format!("slice {k} outside 0..{nz}")));
        }
        let d = self.scene.vol.densities();
        let slice: Vec<f64> = (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| d[self.scene.vol.index(i, j, k)]).collect();
        Ok(to_gray(&slice, 0.5))
    }

    /// Polychromatic line-integral image at (φ, θ); `fluence <= 0` is noiseless.
    pub fn projection(&self, phi: f64, theta: f64, fluence: f64) -> Result<Vec<u8>, JsError> {
        let pose = ViewAngles::new(phi, theta).map_err(js)?;
        let s = &self.scene;
        let fluence = (fluence > 0.0).then_some(fluence);
        let img = simulate_projection(&s.vol, pose, &s.geom, &s.spectrum, &s.table, fluence, s.cfg.noise_seed).map_err(js)?;
        Ok(to_gray(&img.pixels, 1.0))
    }

    /// Single-view detectability on a (φ, θ) grid, φ-major. The map is kept
    /// and reused by `plan`.
    #[wasm_bindgen(js_name = detectabilityMap)]
    pub fn detectability_map(&mut self, phi_step: f64, theta_step: f64) -> Result<Vec<f64>, JsError> {
        let mut grid = self.scene.cfg.pose_grid();
        grid.phi_step = phi_step;
        grid.theta_step = theta_step;
        grid.validate().map_err(js)?;
        let map = detectability_map(&self.scene.vol, &grid.phis(), &grid.thetas(), &self.scene.detectability, 1).map_err(js)?;
        let values = map.values().to_vec();
        self.map = Some(map);
        Ok(values)
    }

    #[wasm_bindgen(js_name = mapPhis)]
    pub fn map_phis(&self) -> Vec<f64> {
        self.map.as_ref().map(|m| m.phis().to_vec()).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = mapThetas)]
    pub fn map_thetas(&self) -> Vec<f64> {
        self.map.as_ref().map(|m| m.thetas().to_vec()).unwrap_or_default()
    }

    /// Greedy task-aware plan from (start φ, start θ); returns interleaved
    /// (φ, θ) pairs. Uses the stored map when there is one, else exact scores.
    pub fn plan(&self, lambda: f64, start_phi: f64, start_theta: f64) -> Result<Vec<f64>, JsError> {
        let s = &self.scene;
        let cfg = taskorbit::planner::PlannerConfig { lambda, ..s.cfg.planner_config() };
        let start = ViewAngles::new(start_phi, start_theta).map_err(js)?;
        let predictor = match &self.map {
            Some(m) => OraclePredictor::Map(m),
            None => OraclePredictor::Exact { vol: &s.vol, cfg: &s.detectability },
        };
        let traj = plan(&predictor, &s.simulator(None), start, &cfg).map_err(js)?;
        Ok(traj.poses().iter().flat_map(|p| [p.phi(), p.theta()]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operations_have_consistent_shapes() {
        let demo = Demo::build(3).unwrap();
        let n = demo.size();
        assert_eq!(demo.phantom_slice(demo.depth() / 2).unwrap().len(), n * n);
        let p = demo.projection(0.0, 90.0, 1e5).unwrap();
        assert_eq!(p.len(), demo.proj_rows() * demo.proj_cols());
        assert!(p.iter().any(|&v| v > 0));
    }

    #[test]
    fn plan_follows_the_stored_map() {
        let mut demo = Demo::build(3).unwrap();
        let exact = demo.plan(0.6, 0.0, 90.0).unwrap();
        let values = demo.detectability_map(30.0, 15.0).unwrap();
        assert_eq!(values.len(), demo.map_phis().len() * demo.map_thetas().len());
        assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        let mapped = demo.plan(0.6, 0.0, 90.0).unwrap();
        assert_eq!(exact.len(), mapped.len());
        assert_eq!(&exact[..2], &[0.0, 90.0]);
        // every step advances φ by the fixed increment
        for w in mapped.chunks(2).collect::<Vec<_>>().windows(2) {
            assert!(((w[1][0] - w[0][0]).rem_euclid(360.0) - 5.0).abs() < 1e-9);
        }
    }
}
