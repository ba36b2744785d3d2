//! Least-squares cone-beam reconstruction by CGLS.

use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, ViewAngles};
use crate::phantom::{MaterialVolume, VoxelGrid};
use crate::projector::{backproject_into, forward_project_into, mono_projection, sphere_mask, AttenuationTable, ProjectionImage};

/// Relative growth of the residual norm tolerated between iterations before
/// the run is declared broken (usually a projector/backprojector mismatch).
pub const RESIDUAL_GROWTH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub iterations: usize,
    /// Only rays meeting a sphere of this radius (mm) around the isocenter
    /// enter the data term.
    pub mask_radius: Option<f64>,
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self { iterations: 50, mask_radius: None, dims: [96, 96, 96], voxel_size: 1.0 }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if self.dims.contains(&0) || !(self.voxel_size > 0.0) {
            return Err(Error::Config(format!("recon grid {:?} x {}", self.dims, self.voxel_size)));
        }
        if let Some(r) = self.mask_radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("mask radius {r}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid::new(self.dims, self.voxel_size)
    }
}

/// Reconstructed attenuation (1/mm) with a free-form provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconVolume {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl ReconVolume {
    pub fn new(dims: [usize; 3], voxel_size: f64, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Dimension(format!("{} values for a {dims:?} volume", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite voxel".into()));
        }
        Ok(Self { dims, voxel_size, values, provenance: provenance.into() })
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid::new(self.dims, self.voxel_size)
    }

    /// Axial slice `k`, x fastest.
    pub fn slice_z(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.dims[2] {
            return Err(Error::Range(format!("slice {k} of {}", self.dims[2])));
        }
        let n = self.dims[0] * self.dims[1];
        Ok(self.values[k * n..(k + 1) * n].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglsResult {
    pub volume: ReconVolume,
    /// `||A x_k - p||` for `k = 0..=iterations` (masked pixels excluded).
    pub residuals: Vec<f64>,
}

/// A linear system `A: R^n -> (R^m)^views` with its transpose.
trait Operator {
    fn forward(&self, x: &[f64], out: &mut [Vec<f64>]) -> Result<()>;
    fn adjoint(&self, y: &[Vec<f64>], out: &mut [f64]) -> Result<()>;
}

struct System<'a> {
    grid: VoxelGrid,
    views: &'a [ProjectionImage],
    geom: &'a DetectorGeometry,
    masks: Vec<Option<Vec<bool>>>,
}

impl Operator for System<'_> {
    fn forward(&self, x: &[f64], out: &mut [Vec<f64>]) -> Result<()> {
        for ((view, mask), o) in self.views.iter().zip(&self.masks).zip(out.iter_mut()) {
            forward_project_into(&self.grid, x, &view.matrix, self.geom, mask.as_deref(), o)?;
        }
        Ok(())
    }

    fn adjoint(&self, y: &[Vec<f64>], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((view, mask), img) in self.views.iter().zip(&self.masks).zip(y) {
            backproject_into(&self.grid, img, &view.matrix, self.geom, mask.as_deref(), out)?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2_images(y: &[Vec<f64>]) -> f64 {
    y.iter().map(|v| dot(v, v)).sum()
}

/// Plain CGLS from zero; returns the solution and the residual history.
fn solve(op: &impl Operator, mut r: Vec<Vec<f64>>, n: usize, iterations: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    op.adjoint(&r, &mut s)?;
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q: Vec<Vec<f64>> = r.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut residuals = vec![norm2_images(&r).sqrt()];

    for _ in 0..iterations {
        let last = *residuals.last().unwrap();
        if gamma == 0.0 {
            residuals.push(last);
            continue;
        }
        op.forward(&p, &mut q)?;
        let qq = norm2_images(&q);
        if qq == 0.0 {
            residuals.push(last);
            continue;
        }
        let alpha = gamma / qq;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        for (ri, qi) in r.iter_mut().zip(&q) {
            ri.iter_mut().zip(qi).for_each(|(a, b)| *a -= alpha * b);
        }
        let res = norm2_images(&r).sqrt();
        if !res.is_finite() {
            return Err(Error::Numerical("CGLS residual became non-finite".into()));
        }
        if res > last * (1.0 + RESIDUAL_GROWTH_TOLERANCE) {
            return Err(Error::Numerical(format!(
                "CGLS residual grew from {last:.6e} to {res:.6e}; projector and backprojector disagree"
            )));
        }
        residuals.push(res);
        op.adjoint(&r, &mut s)?;
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + beta * *pi);
    }
    Ok((x, residuals))
}

/// CGLS on `min ||A x - p||^2` from `x = 0`. Masks, when given explicitly,
/// take precedence over `cfg.mask_radius`.
pub fn cgls(
    projections: &[ProjectionImage],
    masks: Option<&[Vec<bool>]>,
    geom: &DetectorGeometry,
    cfg: &ReconConfig,
) -> Result<CglsResult> {
    cfg.validate()?;
    geom.validate()?;
    if projections.is_empty() {
        return Err(Error::Config("no projections to reconstruct".into()));
    }
    for p in projections {
        if p.rows != geom.rows || p.cols != geom.cols {
            return Err(Error::Dimension(format!(
                "projection {}x{} vs detector {}x{}",
                p.rows, p.cols, geom.rows, geom.cols
            )));
        }
        if p.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite projection pixel".into()));
        }
    }
    let masks: Vec<Option<Vec<bool>>> = match (masks, cfg.mask_radius) {
        (Some(m), _) => {
            if m.len() != projections.len() || m.iter().any(|v| v.len() != geom.pixel_count()) {
                return Err(Error::Dimension("one full-detector mask per projection required".into()));
            }
            m.iter().cloned().map(Some).collect()
        }
        (None, Some(r)) => projections
            .iter()
            .map(|p| sphere_mask(&p.matrix, geom, r).map(Some))
            .collect::<Result<_>>()?,
        (None, None) => vec![None; projections.len()],
    };
    let sys = System { grid: cfg.grid(), views: projections, geom, masks };
    let data: Vec<Vec<f64>> = projections
        .iter()
        .zip(&sys.masks)
        .map(|(p, m)| match m {
            Some(m) => p.pixels.iter().zip(m).map(|(v, keep)| if *keep { *v } else { 0.0 }).collect(),
            None => p.pixels.clone(),
        })
        .collect();
    let (x, residuals) = solve(&sys, data, sys.grid.len(), cfg.iterations)?;
    Ok(CglsResult { volume: ReconVolume::new(cfg.dims, cfg.voxel_size, x, "cgls")?, residuals })
}

/// Reference reconstruction from noiseless single-energy projections, free of
/// beam hardening and noise.
pub fn ground_truth_recon(
    vol: &MaterialVolume,
    poses: &[ViewAngles],
    geom: &DetectorGeometry,
    table: &AttenuationTable,
    energy_kev: f64,
    cfg: &ReconConfig,
) -> Result<CglsResult> {
    let views: Vec<ProjectionImage> = poses
        .iter()
        .map(|&p| mono_projection(vol, p, geom, table, energy_kev))
        .collect::<Result<_>>()?;
    let mut out = cgls(&views, None, geom, cfg)?;
    out.volume.provenance = "ground-truth".into();
    Ok(out)
}
