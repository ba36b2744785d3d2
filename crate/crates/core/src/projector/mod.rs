//! Ray-driven cone-beam projection.
//!
//! Every detector pixel centre defines one ray from the source. Rays are
//! walked through the voxel grid with exact intersection lengths, so the
//! forward projector and [`backproject`] are exact transposes of each other.

mod noise;
mod spectral;

pub use noise::{inject_noise, inject_noise_with_clamp, view_seed, STARVED_COUNTS};
pub use spectral::{
    log_normalize, polychromatic_project, AttenuationTable, SpectralModel, Spectrum, REFERENCE_ENERGY_KEV,
};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, ProjectionMatrix, RayBasis, ViewAngles};
use crate::phantom::{MaterialLabel, MaterialVolume, VoxelGrid};

/// Visit every voxel pierced by the ray `src + t * dir` (`t >= 0`, `dir`
/// unit length) with its intersection length in mm.
#[inline]
pub fn trace<F: FnMut(usize, f64)>(grid: &VoxelGrid, src: &Vector3<f64>, dir: &Vector3<f64>, mut visit: F) {
    let o = grid.origin();
    let vs = grid.voxel_size;
    let n = grid.dims;
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let lo = o[a];
        let hi = o[a] + n[a] as f64 * vs;
        if dir[a].abs() < 1e-14 {
            if src[a] <= lo || src[a] >= hi {
                return;
            }
        } else {
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((lo - src[a]) * inv, (hi - src[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    if !(t1 > t0) {
        return;
    }

    let entry = src + dir * t0;
    let mut idx3 = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let stride = [1i64, n[0] as i64, (n[0] * n[1]) as i64];
    for a in 0..3 {
        let c = ((entry[a] - o[a]) / vs).floor() as i64;
        idx3[a] = c.clamp(0, n[a] as i64 - 1);
        if dir[a] > 1e-14 {
            step[a] = 1;
            let boundary = o[a] + (idx3[a] + 1) as f64 * vs;
            t_max[a] = (boundary - src[a]) / dir[a];
            t_delta[a] = vs / dir[a];
        } else if dir[a] < -1e-14 {
            step[a] = -1;
            let boundary = o[a] + idx3[a] as f64 * vs;
            t_max[a] = (boundary - src[a]) / dir[a];
            t_delta[a] = -vs / dir[a];
        }
    }
    let mut idx = idx3[0] + stride[1] * idx3[1] + stride[2] * idx3[2];
    let mut t = t0;
    loop {
        let axis = if t_max[0] < t_max[1] {
            if t_max[0] < t_max[2] {
                0
            } else {
                2
            }
        } else if t_max[1] < t_max[2] {
            1
        } else {
            2
        };
        let t_next = t_max[axis].min(t1);
        let len = t_next - t;
        if len > 0.0 {
            visit(idx as usize, len);
        }
        if t_next >= t1 {
            break;
        }
        t = t_next;
        idx3[axis] += step[axis];
        if idx3[axis] < 0 || idx3[axis] >= n[axis] as i64 {
            break;
        }
        idx += step[axis] * stride[axis];
        t_max[axis] += t_delta[axis];
    }
}

fn check_image(geom: &DetectorGeometry, len: usize) -> Result<()> {
    if len != geom.pixel_count() {
        return Err(Error::Dimension(format!(
            "image has {len} pixels, detector {}x{}",
            geom.rows, geom.cols
        )));
    }
    Ok(())
}

fn check_volume(grid: &VoxelGrid, len: usize) -> Result<()> {
    if len != grid.len() || grid.is_empty() {
        return Err(Error::Dimension(format!(
            "volume has {len} voxels, grid {:?}",
            grid.dims
        )));
    }
    Ok(())
}

fn pixel_rays(matrix: &ProjectionMatrix, geom: &DetectorGeometry) -> Result<RayBasis> {
    geom.validate()?;
    let basis = matrix.ray_basis();
    if !basis.source.iter().all(|v| v.is_finite()) {
        return Err(Error::Geometry("projection matrix has no finite source".into()));
    }
    Ok(basis)
}

/// Forward projection `A x` of one view into `out` (row-major, `rows x cols`).
/// Pixels with `mask[p] == false` are set to zero and not traced.
pub fn forward_project_into(
    grid: &VoxelGrid,
    x: &[f64],
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    mask: Option<&[bool]>,
    out: &mut [f64],
) -> Result<()> {
    check_volume(grid, x.len())?;
    check_image(geom, out.len())?;
    let basis = pixel_rays(matrix, geom)?;
    for v in 0..geom.rows {
        for u in 0..geom.cols {
            let p = v * geom.cols + u;
            if mask.is_some_and(|m| !m[p]) {
                out[p] = 0.0;
                continue;
            }
            let dir = basis.direction(u as f64, v as f64);
            let mut acc = 0.0;
            trace(grid, &basis.source, &dir, |i, len| acc += x[i] * len);
            out[p] = acc;
        }
    }
    Ok(())
}

pub fn forward_project(
    grid: &VoxelGrid,
    x: &[f64],
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; geom.pixel_count()];
    forward_project_into(grid, x, matrix, geom, None, &mut out)?;
    Ok(out)
}

/// Accumulate `A^T y` of one view into `out`.
pub fn backproject_into(
    grid: &VoxelGrid,
    image: &[f64],
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    mask: Option<&[bool]>,
    out: &mut [f64],
) -> Result<()> {
    check_volume(grid, out.len())?;
    check_image(geom, image.len())?;
    let basis = pixel_rays(matrix, geom)?;
    for v in 0..geom.rows {
        for u in 0..geom.cols {
            let p = v * geom.cols + u;
            let y = image[p];
            if y == 0.0 || mask.is_some_and(|m| !m[p]) {
                continue;
            }
            let dir = basis.direction(u as f64, v as f64);
            trace(grid, &basis.source, &dir, |i, len| out[i] += y * len);
        }
    }
    Ok(())
}

/// Exact adjoint of [`forward_project`] for a single view.
pub fn backproject(
    image: &[f64],
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    vol_dims: [usize; 3],
    voxel_size: f64,
) -> Result<Vec<f64>> {
    let grid = VoxelGrid::new(vol_dims, voxel_size);
    let mut out = vec![0.0; grid.len()];
    backproject_into(&grid, image, matrix, geom, None, &mut out)?;
    Ok(out)
}

/// Linear attenuation (1/mm) of every voxel at `energy_kev`, optionally
/// restricted to one material.
pub fn attenuation_volume(
    vol: &MaterialVolume,
    table: &AttenuationTable,
    energy_kev: f64,
    material_filter: Option<MaterialLabel>,
) -> Result<Vec<f64>> {
    let mu: Vec<f64> = MaterialLabel::ALL
        .iter()
        .map(|&m| table.mass_attenuation(m, energy_kev))
        .collect::<Result<_>>()?;
    Ok(vol
        .labels()
        .iter()
        .zip(vol.densities())
        .map(|(&l, &d)| match material_filter {
            Some(f) if f != l => 0.0,
            _ => mu[l.index()] * d * 0.1,
        })
        .collect())
}

/// Radiological path integral (dimensionless) through `vol` at the reference
/// energy of the built-in attenuation table.
pub fn line_integrals(
    vol: &MaterialVolume,
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    material_filter: Option<MaterialLabel>,
) -> Result<Vec<f64>> {
    line_integrals_with(vol, matrix, geom, material_filter, &AttenuationTable::builtin(), REFERENCE_ENERGY_KEV)
}

pub fn line_integrals_with(
    vol: &MaterialVolume,
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    material_filter: Option<MaterialLabel>,
    table: &AttenuationTable,
    energy_kev: f64,
) -> Result<Vec<f64>> {
    if vol.is_empty() {
        return Err(Error::Dimension("empty volume".into()));
    }
    let x = attenuation_volume(vol, table, energy_kev, material_filter)?;
    forward_project(&vol.grid(), &x, matrix, geom)
}

/// Density-weighted path length (g/cm^3 * mm) per material along one ray.
#[inline]
pub fn material_paths(vol: &MaterialVolume, src: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 5] {
    let mut acc = [0.0; 5];
    let labels = vol.labels();
    let dens = vol.densities();
    trace(&vol.grid(), src, dir, |i, len| acc[labels[i].index()] += dens[i] * len);
    acc
}

/// `true` where the pixel's ray meets the sphere of `radius` mm at the isocenter.
pub fn sphere_mask(matrix: &ProjectionMatrix, geom: &DetectorGeometry, radius: f64) -> Result<Vec<bool>> {
    if !(radius > 0.0) {
        return Err(Error::Range(format!("mask radius {radius}")));
    }
    let basis = pixel_rays(matrix, geom)?;
    let s = basis.source;
    let mut mask = vec![false; geom.pixel_count()];
    for v in 0..geom.rows {
        for u in 0..geom.cols {
            let d = basis.direction(u as f64, v as f64);
            // Closest approach of the ray to the origin.
            let t = -s.dot(&d);
            let dist2 = if t > 0.0 { (s + d * t).norm_squared() } else { s.norm_squared() };
            mask[v * geom.cols + u] = dist2 <= radius * radius;
        }
    }
    Ok(mask)
}

/// A detector image with its pose metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    /// Log-normalised line integrals, row-major.
    pub pixels: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub pose: ViewAngles,
    pub matrix: ProjectionMatrix,
    /// Photons per pixel, or `None` for a noiseless image.
    pub fluence_level: Option<f64>,
    pub clean: bool,
}

impl ProjectionImage {
    pub fn new(
        pixels: Vec<f64>,
        geom: &DetectorGeometry,
        pose: ViewAngles,
        matrix: ProjectionMatrix,
        fluence_level: Option<f64>,
    ) -> Result<Self> {
        check_image(geom, pixels.len())?;
        if pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Numerical("projection pixels must be finite and >= 0".into()));
        }
        Ok(Self {
            pixels,
            rows: geom.rows,
            cols: geom.cols,
            pose,
            matrix,
            fluence_level,
            clean: fluence_level.is_none(),
        })
    }
}

/// Simulate one view: polychromatic expected counts, optional Poisson noise at
/// `fluence` photons per pixel (seeded by pose), then log normalisation.
/// `fluence = None` gives the noiseless image for the spectrum as given.
pub fn simulate_projection(
    vol: &MaterialVolume,
    pose: ViewAngles,
    geom: &DetectorGeometry,
    spectrum: &Spectrum,
    table: &AttenuationTable,
    fluence: Option<f64>,
    noise_seed: u64,
) -> Result<ProjectionImage> {
    let matrix = crate::geometry::pose_to_matrix(pose, geom)?;
    let spectrum = match fluence {
        Some(f) if !(f > 0.0) || !f.is_finite() => return Err(Error::Config(format!("fluence {f}"))),
        Some(f) => spectrum.scaled_to(f)?,
        None => spectrum.clone(),
    };
    let mut counts = polychromatic_project(vol, &matrix, geom, &spectrum, table)?;
    if fluence.is_some() {
        counts = inject_noise(&counts, view_seed(noise_seed, &pose))?;
    }
    let pixels = log_normalize(&counts, &spectrum)?;
    ProjectionImage::new(pixels, geom, pose, matrix, fluence)
}

/// Noiseless single-energy line integrals of one view.
pub fn mono_projection(
    vol: &MaterialVolume,
    pose: ViewAngles,
    geom: &DetectorGeometry,
    table: &AttenuationTable,
    energy_kev: f64,
) -> Result<ProjectionImage> {
    let matrix = crate::geometry::pose_to_matrix(pose, geom)?;
    let pixels = line_integrals_with(vol, &matrix, geom, None, table, energy_kev)?;
    ProjectionImage::new(pixels, geom, pose, matrix, None)
}
