//! C-arm pose parameterization and projection matrices.
//!
//! World frame: millimetres, isocenter at the origin, `z` along the long axis
//! of the imaged object. A pose is an in-plane angle `phi` and an out-of-plane
//! angle `theta`, both in degrees. The unit vector from the isocenter to the
//! source is
//!
//! ```text
//! s(phi, theta) = (sin(theta) cos(phi), -sin(theta) sin(phi), cos(theta))
//! ```
//!
//! so `theta = 90` is the untilted scan plane `z = 0`, and increasing `phi`
//! turns the world by `+phi` about `z` before imaging. Detector `u` runs along
//! the in-plane tangent `(sin(phi), cos(phi), 0)`, detector `v` along the
//! remaining axis orthogonal to `u` and the central ray; at `theta = 90` it
//! points towards `-z`, so row 0 is the top of the image. Pixel `(0, 0)` is a
//! detector corner and the isocenter projects to `((cols-1)/2, (rows-1)/2)`.

use std::fmt;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

pub const THETA_MIN: f64 = 45.0;
pub const THETA_MAX: f64 = 135.0;

/// Slack used when checking `theta` against the sampling interval, so values
/// produced by adding multiples of 5 degrees never fail on rounding.
const ANGLE_EPS: f64 = 1e-9;

/// Wrap an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed smallest difference `a - b` on the circle, in `(-180, 180]`.
pub fn circular_difference(a: f64, b: f64) -> f64 {
    let d = wrap_degrees(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAngles {
    phi: f64,
    theta: f64,
}

impl ViewAngles {
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        if !phi.is_finite() || !theta.is_finite() {
            return Err(Error::Range(format!("non-finite pose ({phi}, {theta})")));
        }
        if !theta_in_range(theta) {
            return Err(Error::Range(format!(
                "theta {theta} outside [{THETA_MIN}, {THETA_MAX}]"
            )));
        }
        Ok(Self {
            phi: wrap_degrees(phi),
            theta: theta.clamp(THETA_MIN, THETA_MAX),
        })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Unit vector from the isocenter towards the source.
    pub fn source_direction(&self) -> Vector3<f64> {
        let (sp, cp) = self.phi.to_radians().sin_cos();
        let (st, ct) = self.theta.to_radians().sin_cos();
        Vector3::new(st * cp, -st * sp, ct)
    }
}

impl fmt::Display for ViewAngles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.phi, self.theta)
    }
}

pub fn theta_in_range(theta: f64) -> bool {
    (THETA_MIN - ANGLE_EPS..=THETA_MAX + ANGLE_EPS).contains(&theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Pixel pitch at the detector, mm.
    pub pixel_pitch: f64,
    pub source_isocenter_distance: f64,
    pub source_detector_distance: f64,
}

impl DetectorGeometry {
    /// 96x72 detector sized so a pixel maps to ~1 mm at the isocenter.
    pub fn desk() -> Self {
        Self {
            rows: 72,
            cols: 96,
            pixel_pitch: 1.6,
            source_isocenter_distance: 600.0,
            source_detector_distance: 1000.0,
        }
    }

    /// Central 620x480 region of a flat panel in 4x4 binning.
    pub fn full_scale() -> Self {
        Self {
            rows: 480,
            cols: 620,
            pixel_pitch: 0.31,
            source_isocenter_distance: 600.0,
            source_detector_distance: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.rows > 0
            && self.cols > 0
            && self.pixel_pitch > 0.0
            && self.source_isocenter_distance > 0.0
            && self.source_detector_distance > 0.0;
        if !positive {
            return Err(Error::Geometry(format!("non-positive detector geometry {self:?}")));
        }
        if self.source_detector_distance <= self.source_isocenter_distance {
            return Err(Error::Geometry(
                "source-detector distance must exceed source-isocenter distance".into(),
            ));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.cols as f64 - 1.0) / 2.0, (self.rows as f64 - 1.0) / 2.0)
    }

    pub fn magnification(&self) -> f64 {
        self.source_detector_distance / self.source_isocenter_distance
    }

    /// Same physical panel sampled `factor` times more finely per axis.
    pub fn oversampled(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        Self {
            rows: self.rows * factor,
            cols: self.cols * factor,
            pixel_pitch: self.pixel_pitch / factor as f64,
            ..*self
        }
    }
}

/// A 3x4 camera matrix from homogeneous world mm to homogeneous detector pixels.
///
/// Matrices are kept with a positive depth convention: the third homogeneous
/// coordinate of any point in front of the source is positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    m: Matrix3x4<f64>,
}

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite projection matrix".into()));
        }
        let left: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let scale = left.norm().max(f64::MIN_POSITIVE);
        if (left / scale).determinant().abs() < 1e-12 {
            return Err(Error::Geometry("projection matrix left block is singular".into()));
        }
        Ok(Self { m })
    }

    pub fn from_entries(e: &[f64]) -> Result<Self> {
        if e.len() != 12 {
            return Err(Error::Format(format!("expected 12 matrix entries, got {}", e.len())));
        }
        Self::new(Matrix3x4::from_row_slice(e))
    }

    /// Row-major entries.
    pub fn entries(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.m
    }

    fn left_block(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    fn left_inverse(&self) -> Matrix3<f64> {
        // Invertibility is a constructor invariant.
        self.left_block()
            .try_inverse()
            .expect("projection matrix left block is invertible")
    }

    /// Homogeneous projection `P (x, 1)`.
    pub fn project_homogeneous(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.m * Vector4::new(x.x, x.y, x.z, 1.0)
    }

    /// Pixel coordinates `(u, v)` of a world point, or `None` for points on the
    /// source plane.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        let h = self.project_homogeneous(x);
        if h.z.abs() < 1e-300 {
            None
        } else {
            Some((h.x / h.z, h.y / h.z))
        }
    }

    /// Source (camera centre) position in world mm.
    pub fn source(&self) -> Vector3<f64> {
        let p4 = Vector3::new(self.m[(0, 3)], self.m[(1, 3)], self.m[(2, 3)]);
        -(self.left_inverse() * p4)
    }

    /// Unit direction of the ray from the source through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        (self.left_inverse() * Vector3::new(u, v, 1.0)).normalize()
    }

    /// Precomputed source and back-projection matrix for tracing many rays.
    pub fn ray_basis(&self) -> RayBasis {
        RayBasis {
            source: self.source(),
            inverse: self.left_inverse(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RayBasis {
    pub source: Vector3<f64>,
    inverse: Matrix3<f64>,
}

impl RayBasis {
    pub fn direction(&self, u: f64, v: f64) -> Vector3<f64> {
        (self.inverse * Vector3::new(u, v, 1.0)).normalize()
    }
}

impl fmt::Display for ProjectionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = self.entries();
        for (i, v) in e.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry("rotation is not a proper orthonormal matrix".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(d: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: d,
        }
    }

    /// Rotation by `degrees` about `axis` (right-handed), then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, degrees: f64, translation: Vector3<f64>) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::Geometry("zero rotation axis".into()))?;
        let rotation = nalgebra::Rotation3::from_axis_angle(&axis, degrees.to_radians());
        Self::new(*rotation.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }
}

/// Camera matrix for a C-arm pose.
pub fn pose_to_matrix(angles: ViewAngles, geom: &DetectorGeometry) -> Result<ProjectionMatrix> {
    geom.validate()?;
    if !theta_in_range(angles.theta()) {
        return Err(Error::Range(format!("theta {} outside sampling interval", angles.theta())));
    }
    let phi = angles.phi().to_radians();
    let beta = (90.0 - angles.theta()).to_radians();
    let (sp, cp) = phi.sin_cos();
    let (sb, cb) = beta.sin_cos();
    // World turned by +phi about z, then tilted about the in-plane tangent.
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    // Base frame (source on +x) to camera frame (u, v, depth).
    let to_camera = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0);
    let rotation = to_camera * ry * rz;
    let translation = Vector3::new(0.0, 0.0, geom.source_isocenter_distance);

    let focal = geom.source_detector_distance / geom.pixel_pitch;
    let (cu, cv) = geom.principal_point();
    let intrinsic = Matrix3::new(focal, 0.0, cu, 0.0, focal, cv, 0.0, 0.0, 1.0);

    let mut extrinsic = Matrix3x4::zeros();
    extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
    extrinsic.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
    ProjectionMatrix::new(intrinsic * extrinsic)
}

/// Re-express a matrix calibrated for an object in its reference placement for
/// the object moved by `t`: `P_tilt = P_flat * T^-1`.
pub fn retarget_matrix(p_flat: &ProjectionMatrix, t: &RigidTransform) -> ProjectionMatrix {
    let m = p_flat.matrix() * t.inverse().to_homogeneous();
    ProjectionMatrix::new(m).expect("rigid retargeting preserves rank")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and (population) standard deviation of `|theta_a - theta_b|` over two
/// pose sequences sharing the same `phi` steps.
pub fn angular_distance(a: &[ViewAngles], b: &[ViewAngles]) -> Result<AngularStats> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "trajectory lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty trajectories".into()));
    }
    for (pa, pb) in a.iter().zip(b) {
        if circular_difference(pa.phi(), pb.phi()).abs() > 1e-6 {
            return Err(Error::Dimension(format!(
                "phi sequences differ: {} vs {}",
                pa.phi(),
                pb.phi()
            )));
        }
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x.theta() - y.theta()).abs()).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(AngularStats { mean, std: var.sqrt() })
}

/// Regular sampling of the pose space: `phi` over a full turn, `theta` over
/// a closed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGrid {
    pub phi_step: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_step: f64,
}

impl Default for PoseGrid {
    fn default() -> Self {
        Self { phi_step: 5.0, theta_min: THETA_MIN, theta_max: THETA_MAX, theta_step: 5.0 }
    }
}

impl PoseGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_step > 0.0) || !(self.theta_step > 0.0) {
            return Err(Error::Config("grid steps must be positive".into()));
        }
        if !theta_in_range(self.theta_min) || !theta_in_range(self.theta_max) || self.theta_min > self.theta_max {
            return Err(Error::Config(format!(
                "theta grid [{}, {}] outside [{THETA_MIN}, {THETA_MAX}]",
                self.theta_min, self.theta_max
            )));
        }
        let n_phi = 360.0 / self.phi_step;
        let n_theta = (self.theta_max - self.theta_min) / self.theta_step;
        if (n_phi - n_phi.round()).abs() > 1e-9 || (n_theta - n_theta.round()).abs() > 1e-9 {
            return Err(Error::Config("grid steps must divide the angular ranges".into()));
        }
        Ok(())
    }

    pub fn phis(&self) -> Vec<f64> {
        let n = (360.0 / self.phi_step).round() as usize;
        (0..n).map(|i| i as f64 * self.phi_step).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        let n = ((self.theta_max - self.theta_min) / self.theta_step).round() as usize + 1;
        (0..n).map(|i| self.theta_min + i as f64 * self.theta_step).collect()
    }

    /// Every node, `phi`-major.
    pub fn poses(&self) -> Result<Vec<ViewAngles>> {
        self.validate()?;
        let thetas = self.thetas();
        self.phis()
            .into_iter()
            .flat_map(|p| thetas.iter().map(move |&t| (p, t)))
            .map(|(p, t)| ViewAngles::new(p, t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pose(phi: f64, theta: f64) -> ViewAngles {
        ViewAngles::new(phi, theta).unwrap()
    }

    #[test]
    fn default_pose_grid_has_1368_nodes() {
        let g = PoseGrid::default();
        assert_eq!(g.phis().len(), 72);
        assert_eq!(g.thetas().len(), 19);
        let poses = g.poses().unwrap();
        assert_eq!(poses.len(), 1368);
        assert_eq!((poses[19].phi(), poses[19].theta()), (5.0, 45.0));
        assert!(PoseGrid { theta_step: 7.0, ..g }.validate().is_err());
        assert!(PoseGrid { theta_min: 40.0, ..g }.validate().is_err());
    }

    #[test]
    fn origin_projects_to_principal_point() {
        let g = DetectorGeometry::desk();
        for &(phi, theta) in &[(0.0, 90.0), (30.0, 75.0), (200.0, 130.0)] {
            let p = pose_to_matrix(pose(phi, theta), &g).unwrap();
            let (u, v) = p.project(&Vector3::zeros()).unwrap();
            let (cu, cv) = g.principal_point();
            assert_abs_diff_eq!(u, cu, epsilon = 1e-9);
            assert_abs_diff_eq!(v, cv, epsilon = 1e-9);
        }
    }

    #[test]
    fn isocenter_magnification() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(0.0, 90.0), &g).unwrap();
        let (u, _) = p.project(&Vector3::new(0.0, 10.0, 0.0)).unwrap();
        let (cu, _) = g.principal_point();
        assert_abs_diff_eq!((u - cu) * g.pixel_pitch / 10.0, g.magnification(), epsilon = 1e-12);
    }

    #[test]
    fn quarter_turn_symmetry() {
        let g = DetectorGeometry::desk();
        let p0 = pose_to_matrix(pose(0.0, 90.0), &g).unwrap();
        let p90 = pose_to_matrix(pose(90.0, 90.0), &g).unwrap();
        let r = 17.0;
        let a = p90.project(&Vector3::new(r, 0.0, 0.0)).unwrap();
        let b = p0.project(&Vector3::new(0.0, r, 0.0)).unwrap();
        assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-9);
    }

    /// Look-at construction assembled by hand from the source position and
    /// detector axes, independent of the rotation composition.
    fn look_at_oracle(phi: f64, theta: f64, g: &DetectorGeometry) -> Matrix3x4<f64> {
        let (sp, cp) = phi.to_radians().sin_cos();
        let (st, ct) = theta.to_radians().sin_cos();
        let source = Vector3::new(st * cp, -st * sp, ct) * g.source_isocenter_distance;
        let u_axis = Vector3::new(sp, cp, 0.0);
        let v_axis = Vector3::new(ct * cp, -ct * sp, -st);
        let w_axis = -source.normalize();
        let r = Matrix3::from_rows(&[u_axis.transpose(), v_axis.transpose(), w_axis.transpose()]);
        let t = -(r * source);
        let f = g.source_detector_distance / g.pixel_pitch;
        let (cu, cv) = g.principal_point();
        let k = Matrix3::new(f, 0.0, cu, 0.0, f, cv, 0.0, 0.0, 1.0);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        k * rt
    }

    #[test]
    fn matches_look_at_oracle() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(30.0, 75.0), &g).unwrap();
        let oracle = look_at_oracle(30.0, 75.0, &g);
        for (a, b) in p.matrix().iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn source_has_zero_depth() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(123.0, 101.0), &g).unwrap();
        let s = p.source();
        assert!(p.project_homogeneous(&s).norm() < 1e-6);
        assert_abs_diff_eq!(s.norm(), g.source_isocenter_distance, epsilon = 1e-9);
        assert_abs_diff_eq!(
            (s / s.norm() - pose(123.0, 101.0).source_direction()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn theta_out_of_range_rejected() {
        assert!(matches!(ViewAngles::new(0.0, 30.0), Err(Error::Range(_))));
        assert!(matches!(ViewAngles::new(0.0, 140.0), Err(Error::Range(_))));
        assert_abs_diff_eq!(pose(-10.0, 90.0).phi(), 350.0);
        assert_abs_diff_eq!(pose(720.0, 90.0).phi(), 0.0);
    }

    #[test]
    fn retarget_identity_is_exact() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(40.0, 80.0), &g).unwrap();
        assert_eq!(retarget_matrix(&p, &RigidTransform::identity()), p);
    }

    #[test]
    fn retarget_translation() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(40.0, 80.0), &g).unwrap();
        let d = Vector3::new(3.0, -2.0, 5.0);
        let q = retarget_matrix(&p, &RigidTransform::translation(d));
        let x = Vector3::new(10.0, 4.0, -7.0);
        let a = q.project(&x).unwrap();
        let b = p.project(&(x - d)).unwrap();
        assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-9);
    }

    #[test]
    fn retarget_quarter_rotation() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(10.0, 95.0), &g).unwrap();
        let t = RigidTransform::from_axis_angle(Vector3::z(), 90.0, Vector3::zeros()).unwrap();
        let q = retarget_matrix(&p, &t);
        // Moving the object by +90 deg about z carries (0,-1,0) onto (1,0,0).
        let moved = Vector3::new(1.0, 0.0, 0.0);
        let original = Vector3::new(0.0, -1.0, 0.0);
        assert_abs_diff_eq!((t.apply(&original) - moved).norm(), 0.0, epsilon = 1e-12);
        let a = q.project(&moved).unwrap();
        let b = p.project(&original).unwrap();
        assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-9);
    }

    #[test]
    fn angular_distance_cases() {
        let a: Vec<_> = (0..10).map(|i| pose(5.0 * i as f64, 90.0)).collect();
        let s = angular_distance(&a, &a).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));

        let b: Vec<_> = (0..10).map(|i| pose(5.0 * i as f64, 95.0)).collect();
        let s = angular_distance(&a, &b).unwrap();
        assert_abs_diff_eq!(s.mean, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std, 0.0, epsilon = 1e-12);

        // Elementwise oracle on hand-written theta sequences.
        let ta = [90.0, 95.0, 100.0, 105.0, 100.0, 95.0, 90.0, 85.0, 80.0, 75.0];
        let tb = [90.0, 90.0, 90.0, 95.0, 100.0, 105.0, 110.0, 110.0, 105.0, 100.0];
        let a: Vec<_> = ta.iter().enumerate().map(|(i, &t)| pose(5.0 * i as f64, t)).collect();
        let b: Vec<_> = tb.iter().enumerate().map(|(i, &t)| pose(5.0 * i as f64, t)).collect();
        // |d| = 0,5,10,10,0,10,20,25,25,25 -> sum 130, mean 13
        // squared deviations from 13: 169,64,9,9,169,9,49,144,144,144 -> 910
        let s = angular_distance(&a, &b).unwrap();
        assert_abs_diff_eq!(s.mean, 13.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std, (910.0f64 / 10.0).sqrt(), epsilon = 1e-12);

        assert!(angular_distance(&a, &b[..5]).is_err());
    }

    #[test]
    fn matrix_text_round_trip() {
        let g = DetectorGeometry::desk();
        let p = pose_to_matrix(pose(33.3, 61.7), &g).unwrap();
        let vals: Vec<f64> = p.to_string().split_whitespace().map(|s| s.parse().unwrap()).collect();
        assert_eq!(ProjectionMatrix::from_entries(&vals).unwrap(), p);
    }

    proptest! {
        #[test]
        fn distinct_poses_distinct_matrices(
            phi in 0.0f64..360.0, theta in 45.0f64..135.0,
            dphi in 0.01f64..10.0, dtheta in -5.0f64..5.0,
        ) {
            let g = DetectorGeometry::desk();
            let t2 = (theta + dtheta).clamp(45.0, 135.0);
            let a = pose_to_matrix(pose(phi, theta), &g).unwrap();
            let b = pose_to_matrix(pose(phi + dphi, t2), &g).unwrap();
            let diff = (a.matrix() - b.matrix()).amax();
            prop_assert!(diff > 1e-6);
        }

        #[test]
        fn retarget_round_trip_and_action(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            deg in -180.0f64..180.0,
            tx in -20.0f64..20.0, ty in -20.0f64..20.0, tz in -20.0f64..20.0,
            px in -40.0f64..40.0, py in -40.0f64..40.0, pz in -40.0f64..40.0,
        ) {
            let g = DetectorGeometry::desk();
            let p = pose_to_matrix(pose(17.0, 83.0), &g).unwrap();
            let t = RigidTransform::from_axis_angle(Vector3::new(ax, ay, az), deg, Vector3::new(tx, ty, tz)).unwrap();
            let back = retarget_matrix(&retarget_matrix(&p, &t), &t.inverse());
            prop_assert!((back.matrix() - p.matrix()).amax() < 1e-9);

            let x = Vector3::new(px, py, pz);
            let a = retarget_matrix(&p, &t).project(&x).unwrap();
            let b = p.project(&t.inverse().apply(&x)).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }
}
