//! Procedural screw phantoms.
//!
//! The default phantom is a long soft-tissue box along `z` holding a bone
//! cylinder (vertebral body) and a wooden rod, with two converging titanium
//! screws lying in the axial plane `z = 0`. Threads are modelled as a
//! sinusoidal modulation of the shaft radius along the screw axis.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MaterialLabel {
    Air = 0,
    SoftTissue = 1,
    Wood = 2,
    Bone = 3,
    Titanium = 4,
}

impl MaterialLabel {
    pub const ALL: [MaterialLabel; 5] = [
        MaterialLabel::Air,
        MaterialLabel::SoftTissue,
        MaterialLabel::Wood,
        MaterialLabel::Bone,
        MaterialLabel::Titanium,
    ];

    /// Nominal density, g/cm^3.
    pub fn nominal_density(self) -> f64 {
        match self {
            MaterialLabel::Air => 0.0012,
            MaterialLabel::SoftTissue => 1.0,
            MaterialLabel::Wood => 0.6,
            MaterialLabel::Bone => 1.85,
            MaterialLabel::Titanium => 4.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaterialLabel::Air => "air",
            MaterialLabel::SoftTissue => "soft_tissue",
            MaterialLabel::Wood => "wood",
            MaterialLabel::Bone => "bone",
            MaterialLabel::Titanium => "titanium",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub label: MaterialLabel,
    pub density: f64,
}

impl Material {
    pub fn new(label: MaterialLabel, density: f64) -> Result<Self> {
        if !(density >= 0.0) {
            return Err(Error::Range(format!("negative density {density}")));
        }
        if label == MaterialLabel::Air && density > 0.0013 {
            return Err(Error::Range(format!("air density {density} above 0.0013")));
        }
        Ok(Self { label, density })
    }

    pub fn nominal(label: MaterialLabel) -> Self {
        Self {
            label,
            density: label.nominal_density(),
        }
    }
}

/// Labelled voxel grid centred on the isocenter, `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialVolume {
    dims: [usize; 3],
    voxel_size: f64,
    labels: Vec<MaterialLabel>,
    densities: Vec<f64>,
}

impl MaterialVolume {
    pub fn filled(dims: [usize; 3], voxel_size: f64, material: Material) -> Result<Self> {
        if dims.iter().any(|&d| d < 8) {
            return Err(Error::Range(format!("volume dims {dims:?} below 8")));
        }
        if !(voxel_size > 0.0) {
            return Err(Error::Range(format!("voxel size {voxel_size}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            dims,
            voxel_size,
            labels: vec![material.label; n],
            densities: vec![material.density; n],
        })
    }

    pub fn from_parts(
        dims: [usize; 3],
        voxel_size: f64,
        labels: Vec<MaterialLabel>,
        densities: Vec<f64>,
    ) -> Result<Self> {
        let mut v = Self::filled(dims, voxel_size, Material::nominal(MaterialLabel::Air))?;
        if labels.len() != v.len() || densities.len() != v.len() {
            return Err(Error::Dimension(format!(
                "expected {} voxels, got {} labels / {} densities",
                v.len(),
                labels.len(),
                densities.len()
            )));
        }
        for (l, d) in labels.iter().zip(&densities) {
            let nominal = l.nominal_density();
            if !(d.is_finite() && *d >= 0.0 && (d - nominal).abs() <= 0.2 * nominal + 1e-12) {
                return Err(Error::Range(format!(
                    "density {d} inconsistent with {}",
                    l.name()
                )));
            }
        }
        v.labels = labels;
        v.densities = densities;
        Ok(v)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[MaterialLabel] {
        &self.labels
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn grid(&self) -> VoxelGrid {
        VoxelGrid::new(self.dims, self.voxel_size)
    }

    pub fn set(&mut self, idx: usize, material: Material) {
        self.labels[idx] = material.label;
        self.densities[idx] = material.density;
    }

    pub fn count(&self, label: MaterialLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn distinct_labels(&self) -> Vec<MaterialLabel> {
        let mut seen = [false; 5];
        for l in &self.labels {
            seen[l.index()] = true;
        }
        MaterialLabel::ALL.into_iter().filter(|l| seen[l.index()]).collect()
    }

    /// Relabel every voxel whose centre satisfies `inside`.
    fn paint(&mut self, material: Material, lo: Vector3<f64>, hi: Vector3<f64>, inside: impl Fn(&Vector3<f64>) -> bool) {
        let grid = self.grid();
        let (i0, i1) = grid.index_range(0, lo.x, hi.x);
        let (j0, j1) = grid.index_range(1, lo.y, hi.y);
        let (k0, k1) = grid.index_range(2, lo.z, hi.z);
        for k in k0..k1 {
            for j in j0..j1 {
                for i in i0..i1 {
                    let c = grid.voxel_center(i, j, k);
                    if inside(&c) {
                        let idx = self.index(i, j, k);
                        self.set(idx, material);
                    }
                }
            }
        }
    }

    /// Relabel voxels inside the screw's solid of revolution as titanium.
    pub fn insert_screw(&mut self, screw: &ScrewSpec) -> Result<()> {
        screw.validate()?;
        let grid = self.grid();
        if !screw.inside_extent(&grid) {
            return Err(Error::Range("screw protrudes outside the volume".into()));
        }
        let (lo, hi) = screw.bounding_box();
        let ti = Material::nominal(MaterialLabel::Titanium);
        self.paint(ti, lo, hi, |p| screw.contains(p));
        Ok(())
    }
}

/// Functional form of [`MaterialVolume::insert_screw`].
pub fn insert_screw(vol: &MaterialVolume, screw: &ScrewSpec) -> Result<MaterialVolume> {
    let mut out = vol.clone();
    out.insert_screw(screw)?;
    Ok(out)
}

/// Geometry of a centred voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub voxel_size: f64,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size: f64) -> Self {
        Self { dims, voxel_size }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// World coordinate of the low corner, per axis.
    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(
            -(self.dims[0] as f64) * self.voxel_size / 2.0,
            -(self.dims[1] as f64) * self.voxel_size / 2.0,
            -(self.dims[2] as f64) * self.voxel_size / 2.0,
        )
    }

    pub fn half_extent(&self) -> Vector3<f64> {
        -self.origin()
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin() + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Continuous voxel coordinates (voxel centres at integers).
    pub fn to_voxel(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.origin()) / self.voxel_size - Vector3::repeat(0.5)
    }

    /// Voxel index nearest to a world point, if inside.
    pub fn locate(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let c = self.to_voxel(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = c[a].round();
            if r < 0.0 || r >= self.dims[a] as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// Voxel index range along `axis` whose centres may fall in `[lo, hi]`.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
        let o = self.origin()[axis];
        let a = ((lo - o) / self.voxel_size - 0.5).floor().max(0.0) as usize;
        let b = (((hi - o) / self.voxel_size - 0.5).ceil() + 1.0).clamp(0.0, self.dims[axis] as f64) as usize;
        (a.min(self.dims[axis]), b)
    }

    /// Trilinear interpolation of a voxel array at a world point, zero outside.
    pub fn sample(&self, data: &[f64], p: &Vector3<f64>) -> f64 {
        let c = self.to_voxel(p);
        let base = [c.x.floor(), c.y.floor(), c.z.floor()];
        let frac = [c.x - base[0], c.y - base[1], c.z - base[2]];
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let v = base[a] as i64 + off[a] as i64;
                if v < 0 || v >= self.dims[a] as i64 {
                    inside = false;
                    break;
                }
                idx[a] = v as usize;
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if inside && w != 0.0 {
                acc += w * data[self.index(idx[0], idx[1], idx[2])];
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrewSpec {
    pub length: f64,
    pub shaft_radius: f64,
    pub thread_depth: f64,
    pub thread_pitch: f64,
    /// Tip position, mm.
    pub tip_position: Vector3<f64>,
    /// Unit vector from the tip towards the head.
    pub axis: Vector3<f64>,
}

impl ScrewSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.shaft_radius > 0.0 && self.thread_depth >= 0.0) {
            return Err(Error::Range("screw dimensions must be positive".into()));
        }
        if self.thread_depth >= self.shaft_radius {
            return Err(Error::Range("thread depth must be below the shaft radius".into()));
        }
        if !(self.thread_pitch > 0.0) {
            return Err(Error::Range("thread pitch must be positive".into()));
        }
        if (self.axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Range("screw axis must be a unit vector".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.tip_position + self.axis * (self.length / 2.0)
    }

    pub fn head(&self) -> Vector3<f64> {
        self.tip_position + self.axis * self.length
    }

    pub fn outer_radius(&self) -> f64 {
        self.shaft_radius + self.thread_depth
    }

    /// Local radius at axial distance `s` from the tip.
    pub fn radius_at(&self, s: f64) -> f64 {
        self.shaft_radius + self.thread_depth * (std::f64::consts::TAU * s / self.thread_pitch).sin()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.tip_position;
        let s = d.dot(&self.axis);
        if s < 0.0 || s > self.length {
            return false;
        }
        let r2 = (d - self.axis * s).norm_squared();
        let r = self.radius_at(s);
        r2 <= r * r
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = Vector3::repeat(self.outer_radius());
        let a = self.tip_position;
        let b = self.head();
        (a.inf(&b) - r, a.sup(&b) + r)
    }

    fn inside_extent(&self, grid: &VoxelGrid) -> bool {
        let (lo, hi) = self.bounding_box();
        let h = grid.half_extent();
        (0..3).all(|a| lo[a] >= -h[a] && hi[a] <= h[a])
    }

    /// Analytic volume of the threaded solid, mm^3.
    pub fn analytic_volume(&self) -> f64 {
        let (l, r, d, p) = (self.length, self.shaft_radius, self.thread_depth, self.thread_pitch);
        let w = std::f64::consts::TAU / p;
        let int_sin = (1.0 - (w * l).cos()) / w;
        let int_sin2 = l / 2.0 - (2.0 * w * l).sin() / (4.0 * w);
        std::f64::consts::PI * (r * r * l + 2.0 * r * d * int_sin + d * d * int_sin2)
    }

    fn rotated_about_center(&self, rot: &nalgebra::Rotation3<f64>) -> Self {
        let c = self.center();
        let axis = (rot * self.axis).normalize();
        Self {
            tip_position: c - axis * (self.length / 2.0),
            axis,
            ..*self
        }
    }

    fn translated(&self, d: Vector3<f64>) -> Self {
        Self {
            tip_position: self.tip_position + d,
            ..*self
        }
    }
}

/// Minimum distance between two segments `[p0, p1]` and `[q0, q1]`.
fn segment_distance(p0: Vector3<f64>, p1: Vector3<f64>, q0: Vector3<f64>, q1: Vector3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-12 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub center: Vector3<f64>,
    pub half_extent: Vector3<f64>,
    pub material: MaterialLabel,
}

/// Cylinder parallel to `z`, clipped to `z_range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderSpec {
    pub center_xy: [f64; 2],
    pub radius: f64,
    pub z_range: [f64; 2],
    pub material: MaterialLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub body: Option<BoxSpec>,
    pub cylinders: Vec<CylinderSpec>,
    pub screws: Vec<ScrewSpec>,
    /// Uniform translation jitter per object and axis, mm.
    pub jitter_translation: f64,
    /// Uniform screw-axis tilt jitter, degrees.
    pub jitter_tilt: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        let converge = 10f64.to_radians();
        let screw = |side: f64| ScrewSpec {
            length: 40.0,
            shaft_radius: 2.5,
            thread_depth: 0.6,
            thread_pitch: 4.0,
            tip_position: Vector3::new(side * 8.0, -14.0, 0.0),
            axis: Vector3::new(side * converge.sin(), converge.cos(), 0.0),
        };
        Self {
            dims: [96, 96, 96],
            voxel_size: 1.0,
            body: Some(BoxSpec {
                center: Vector3::zeros(),
                half_extent: Vector3::new(34.0, 28.0, 40.0),
                material: MaterialLabel::SoftTissue,
            }),
            cylinders: vec![
                CylinderSpec {
                    center_xy: [0.0, -10.0],
                    radius: 14.0,
                    z_range: [-40.0, 40.0],
                    material: MaterialLabel::Bone,
                },
                CylinderSpec {
                    center_xy: [0.0, 18.0],
                    radius: 6.0,
                    z_range: [-40.0, 40.0],
                    material: MaterialLabel::Wood,
                },
            ],
            screws: vec![screw(-1.0), screw(1.0)],
            jitter_translation: 10.0,
            jitter_tilt: 10.0,
        }
    }
}

impl PhantomParams {
    pub fn without_jitter(mut self) -> Self {
        self.jitter_translation = 0.0;
        self.jitter_tilt = 0.0;
        self
    }

    /// Scale every length by `factor` (grid dims unchanged), for coarse test
    /// phantoms that keep the default layout.
    pub fn scaled(mut self, dims: [usize; 3], voxel_size: f64) -> Self {
        let f = (dims[0] as f64 * voxel_size) / (self.dims[0] as f64 * self.voxel_size);
        self.dims = dims;
        self.voxel_size = voxel_size;
        if let Some(b) = self.body.as_mut() {
            b.center *= f;
            b.half_extent *= f;
        }
        for c in &mut self.cylinders {
            c.center_xy = [c.center_xy[0] * f, c.center_xy[1] * f];
            c.radius *= f;
            c.z_range = [c.z_range[0] * f, c.z_range[1] * f];
        }
        for s in &mut self.screws {
            s.length *= f;
            s.shaft_radius *= f;
            s.thread_depth *= f;
            s.thread_pitch *= f;
            s.tip_position *= f;
        }
        self.jitter_translation *= f;
        self
    }

    /// Screws after applying the seed's jitter, in construction order.
    pub fn jittered_screws(&self, seed: u64) -> Vec<ScrewSpec> {
        self.realize(seed).2
    }

    fn realize(&self, seed: u64) -> (Option<BoxSpec>, Vec<CylinderSpec>, Vec<ScrewSpec>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.jitter_translation;
        let uniform = |rng: &mut ChaCha8Rng, h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };

        let body = self.body.map(|mut b| {
            b.center += Vector3::new(uniform(&mut rng, j), uniform(&mut rng, j), 0.0);
            b
        });
        let cylinders = self
            .cylinders
            .iter()
            .map(|c| {
                let mut c = *c;
                c.center_xy[0] += uniform(&mut rng, j);
                c.center_xy[1] += uniform(&mut rng, j);
                c
            })
            .collect();
        // The screw pair moves rigidly; each screw tilts about its own centre.
        let shift = Vector3::new(uniform(&mut rng, j), uniform(&mut rng, j), uniform(&mut rng, j));
        let screws = self
            .screws
            .iter()
            .map(|s| {
                let mut s = s.translated(shift);
                if self.jitter_tilt > 0.0 {
                    let helper = if s.axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
                    let p1 = s.axis.cross(&helper).normalize();
                    let p2 = s.axis.cross(&p1);
                    let az = rng.random_range(0.0..std::f64::consts::TAU);
                    let tilt = uniform(&mut rng, self.jitter_tilt).to_radians();
                    let about = nalgebra::Unit::new_normalize(p1 * az.cos() + p2 * az.sin());
                    s = s.rotated_about_center(&nalgebra::Rotation3::from_axis_angle(&about, tilt));
                }
                s
            })
            .collect();
        (body, cylinders, screws)
    }
}

/// Build a phantom from `params`, jittered deterministically by `seed`.
pub fn build_phantom(params: &PhantomParams, seed: u64) -> Result<MaterialVolume> {
    let mut vol = MaterialVolume::filled(params.dims, params.voxel_size, Material::nominal(MaterialLabel::Air))?;
    let (body, cylinders, screws) = params.realize(seed);

    for s in &screws {
        s.validate()?;
        if !s.inside_extent(&vol.grid()) {
            return Err(Error::Range("screw protrudes outside the volume".into()));
        }
    }
    for (a, sa) in screws.iter().enumerate() {
        for sb in &screws[a + 1..] {
            let gap = segment_distance(sa.tip_position, sa.head(), sb.tip_position, sb.head());
            if gap < sa.outer_radius() + sb.outer_radius() {
                return Err(Error::Range(format!("overlapping screws (axis gap {gap:.2} mm)")));
            }
        }
    }

    if let Some(b) = body {
        let lo = b.center - b.half_extent;
        let hi = b.center + b.half_extent;
        vol.paint(Material::nominal(b.material), lo, hi, |p| {
            (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
        });
    }
    for c in &cylinders {
        let lo = Vector3::new(c.center_xy[0] - c.radius, c.center_xy[1] - c.radius, c.z_range[0]);
        let hi = Vector3::new(c.center_xy[0] + c.radius, c.center_xy[1] + c.radius, c.z_range[1]);
        let r2 = c.radius * c.radius;
        vol.paint(Material::nominal(c.material), lo, hi, |p| {
            let dx = p.x - c.center_xy[0];
            let dy = p.y - c.center_xy[1];
            dx * dx + dy * dy <= r2 && p.z >= c.z_range[0] && p.z <= c.z_range[1]
        });
    }
    for s in &screws {
        vol.insert_screw(s)?;
    }
    Ok(vol)
}
