//! Image-quality figures for screw reconstructions.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::phantom::ScrewSpec;
use crate::recon::ReconVolume;

/// A straight intensity profile through a screw, perpendicular to its axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSpec {
    pub center: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub half_length: f64,
    pub spacing: f64,
}

impl ProfileSpec {
    pub fn new(center: Vector3<f64>, direction: Vector3<f64>, screw_axis: &Vector3<f64>, half_length: f64, spacing: f64) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !(half_length > 0.0) || !(spacing > 0.0) || spacing > half_length {
            return Err(Error::Config("profile needs a direction, half length and spacing".into()));
        }
        let direction = direction / norm;
        if direction.dot(&screw_axis.normalize()).abs() > 1e-6 {
            return Err(Error::Geometry("profile must be perpendicular to the screw axis".into()));
        }
        Ok(Self { center, direction, half_length, spacing })
    }

    /// Profile at `fraction` of the shaft (0 = tip), lying in the plane
    /// spanned by the axis and the in-plane normal `axis x z`.
    pub fn across_screw(screw: &ScrewSpec, fraction: f64, half_length: f64, spacing: f64) -> Result<Self> {
        let axis = screw.axis.normalize();
        let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let direction = axis.cross(&helper).normalize();
        Self::new(screw.tip_position + axis * (screw.length * fraction), direction, &axis, half_length, spacing)
    }

    pub fn sample_count(&self) -> usize {
        2 * (self.half_length / self.spacing).floor() as usize + 1
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full width at half maximum of a sampled profile. The baseline is the
/// median of the outer 25% of samples (one eighth from each end).
pub fn fwhm_profile(samples: &[f64], spacing: f64) -> Result<f64> {
    let n = samples.len();
    if n < 5 || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension(format!("profile of {n} samples")));
    }
    let tail = (n / 8).max(1);
    let baseline = median(samples[..tail].iter().chain(&samples[n - tail..]).copied().collect());
    let (ipk, &peak) = samples.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    if !(peak > baseline) {
        return Err(Error::Numerical("screw not found: no peak above baseline".into()));
    }
    let half = baseline + 0.5 * (peak - baseline);
    let crossing = |i: usize, j: usize| -> f64 {
        // Linear interpolation between samples i (>= half) and j (< half).
        let t = (samples[i] - half) / (samples[i] - samples[j]);
        i as f64 + t * (j as f64 - i as f64)
    };
    let left = (0..ipk).rev().find(|&j| samples[j] < half).map(|j| crossing(j + 1, j));
    let right = (ipk + 1..n).find(|&j| samples[j] < half).map(|j| crossing(j - 1, j));
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l) * spacing),
        _ => Err(Error::Numerical("screw not found: profile does not fall to half maximum".into())),
    }
}

pub fn sample_profile(vol: &ReconVolume, spec: &ProfileSpec) -> Vec<f64> {
    let grid = vol.grid();
    let m = spec.sample_count() as i64 / 2;
    (-m..=m)
        .map(|i| grid.sample(&vol.values, &(spec.center + spec.direction * (i as f64 * spec.spacing))))
        .collect()
}

pub fn fwhm(vol: &ReconVolume, spec: &ProfileSpec) -> Result<f64> {
    fwhm_profile(&sample_profile(vol, spec), spec.spacing)
}

/// Screw FWHM averaged over profiles at one and three quarters of the shaft.
pub fn screw_fwhm(vol: &ReconVolume, screw: &ScrewSpec) -> Result<f64> {
    let half = 4.0 * screw.outer_radius();
    let spacing = vol.voxel_size / 4.0;
    let a = fwhm(vol, &ProfileSpec::across_screw(screw, 0.25, half, spacing)?)?;
    let b = fwhm(vol, &ProfileSpec::across_screw(screw, 0.75, half, spacing)?)?;
    Ok(0.5 * (a + b))
}

/// An oriented box around a screw's threaded shaft, sampled on a regular
/// lattice aligned with the screw axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub center: Vector3<f64>,
    pub axis: Vector3<f64>,
    /// Extent along the axis, mm.
    pub length: f64,
    /// Half extent across the axis, mm.
    pub half_width: f64,
    pub spacing: f64,
}

impl PatchSpec {
    /// Patch over the middle half of the shaft, as wide as the thread.
    pub fn around_screw(screw: &ScrewSpec, spacing: f64) -> Self {
        Self {
            center: screw.center(),
            axis: screw.axis.normalize(),
            length: screw.length / 2.0,
            half_width: screw.outer_radius(),
            spacing,
        }
    }

    fn lattice(&self) -> Result<(usize, usize, Vector3<f64>, Vector3<f64>)> {
        if !(self.spacing > 0.0) || !(self.length >= 2.0 * self.spacing) || !(self.half_width >= 0.0) {
            return Err(Error::Config("patch needs positive length and spacing".into()));
        }
        let axis = self.axis.normalize();
        let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let t1 = axis.cross(&helper).normalize();
        let t2 = axis.cross(&t1);
        let m = (self.length / self.spacing).round() as usize;
        let w = 2 * (self.half_width / self.spacing).floor() as usize + 1;
        Ok((m, w, t1, t2))
    }
}

/// Magnitude of the unitary DFT, `|sum_s g_s exp(-2 pi i k s / M)| / sqrt(M)`,
/// at the bin nearest `frequency` cycles/mm for samples `spacing` mm apart.
pub fn unitary_dft_magnitude(profile: &[f64], spacing: f64, frequency: f64) -> f64 {
    let m = profile.len();
    let k = ((frequency * m as f64 * spacing).round() as usize).min(m / 2);
    let (mut re, mut im) = (0.0, 0.0);
    for (s, g) in profile.iter().enumerate() {
        let ph = -std::f64::consts::TAU * (k * s) as f64 / m as f64;
        re += g * ph.cos();
        im += g * ph.sin();
    }
    (re * re + im * im).sqrt() / (m as f64).sqrt()
}

/// Thread-frequency peak: the patch is normalised to zero mean and unit
/// variance, averaged across the axis into an axial profile, and the unitary
/// DFT magnitude is read at the bin nearest `1 / pitch`.
pub fn thread_peak(vol: &ReconVolume, spec: &PatchSpec, pitch: f64) -> Result<f64> {
    if !(pitch > 0.0) {
        return Err(Error::Config(format!("thread pitch {pitch}")));
    }
    let (m, w, t1, t2) = spec.lattice()?;
    let grid = vol.grid();
    let axis = spec.axis.normalize();
    let hw = (w / 2) as f64;
    let mut patch = Vec::with_capacity(m * w * w);
    for s in 0..m {
        let along = (s as f64 - (m as f64 - 1.0) / 2.0) * spec.spacing;
        for a in 0..w {
            for b in 0..w {
                let p = spec.center + axis * along + t1 * ((a as f64 - hw) * spec.spacing) + t2 * ((b as f64 - hw) * spec.spacing);
                patch.push(grid.sample(&vol.values, &p));
            }
        }
    }
    Ok(patch_thread_peak(&patch, m, w * w, spec.spacing, pitch))
}

/// Core of [`thread_peak`] on an already sampled patch: `m` axial positions
/// with `k` transverse samples each.
pub fn patch_thread_peak(patch: &[f64], m: usize, k: usize, spacing: f64, pitch: f64) -> f64 {
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let var = patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-24 * mean.abs().max(1.0).powi(2)) {
        return 0.0;
    }
    let sd = var.sqrt();
    let profile: Vec<f64> = (0..m)
        .map(|s| patch[s * k..(s + 1) * k].iter().map(|v| (v - mean) / sd).sum::<f64>() / k as f64)
        .collect();
    unitary_dft_magnitude(&profile, spacing, 1.0 / pitch)
}

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean structural similarity of two `rows x cols` images over all fully
/// contained 7x7 windows. The dynamic range comes from the reference `b`.
pub fn ssim(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::Dimension(format!("ssim inputs {} / {} for {rows}x{cols}", a.len(), b.len())));
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Dimension(format!("image {rows}x{cols} smaller than the ssim window")));
    }
    let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - SSIM_WINDOW {
        for c0 in 0..=cols - SSIM_WINDOW {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sa += a[r * cols + c];
                    sb += b[r * cols + c];
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (da, db) = (a[r * cols + c] - ma, b[r * cols + c] - mb);
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Index of the axial slice through the screws' centres.
pub fn screw_slice(vol: &ReconVolume, screws: &[ScrewSpec]) -> Result<usize> {
    if screws.is_empty() {
        return Err(Error::Config("no screws".into()));
    }
    let z = screws.iter().map(|s| s.center().z).sum::<f64>() / screws.len() as f64;
    let k = ((z - vol.grid().origin().z) / vol.voxel_size).floor();
    if k < 0.0 || k >= vol.dims[2] as f64 {
        return Err(Error::Range(format!("screw slice z = {z} outside the volume")));
    }
    Ok(k as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_line(sigma: f64, spacing: f64, n: usize) -> Vec<f64> {
        let c = (n / 2) as f64;
        (0..n).map(|i| (-((i as f64 - c) * spacing).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
    }

    #[test]
    fn gaussian_fwhm_identity() {
        for sigma in [0.8, 1.5, 3.0] {
            let w = fwhm_profile(&gaussian_line(sigma, 0.1, 301), 0.1).unwrap();
            assert!((w - 2.3548 * sigma).abs() / (2.3548 * sigma) < 0.01, "{w}");
        }
    }

    #[test]
    fn rectangle_fwhm_within_one_sample() {
        let spacing = 0.25;
        let mut p = vec![1.0; 81];
        for v in p.iter_mut().skip(30).take(20) {
            *v = 5.0;
        }
        let w = fwhm_profile(&p, spacing).unwrap();
        assert!((w - 20.0 * spacing).abs() <= spacing);
        assert!(fwhm_profile(&[1.0; 20], spacing).is_err());
    }

    #[test]
    fn fwhm_of_sampled_volume() {
        // A z-invariant Gaussian ridge along y, profiled across x.
        let dims = [64, 16, 8];
        let vs = 0.5;
        let grid = crate::phantom::VoxelGrid::new(dims, vs);
        let mut values = vec![0.0; grid.len()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = grid.voxel_center(i, j, k).x;
                    values[grid.index(i, j, k)] = 2.0 + 3.0 * (-x * x / (2.0 * 1.2 * 1.2)).exp();
                }
            }
        }
        let vol = ReconVolume::new(dims, vs, values, "ridge").unwrap();
        let spec = ProfileSpec::new(Vector3::zeros(), Vector3::x(), &Vector3::y(), 12.0, 0.1).unwrap();
        let w = fwhm(&vol, &spec).unwrap();
        // Voxel centres straddle the peak, so linear interpolation flattens
        // it slightly; allow a fifth of a voxel.
        assert!((w - 2.3548 * 1.2).abs() < 0.2 * vs, "{w}");
        assert!(ProfileSpec::new(Vector3::zeros(), Vector3::new(1.0, 0.1, 0.0), &Vector3::y(), 12.0, 0.1).is_err());
    }

    #[test]
    fn constant_patch_has_no_peak() {
        assert_eq!(patch_thread_peak(&[3.0; 40], 10, 4, 0.5, 2.0), 0.0);
    }

    #[test]
    fn sinusoid_peak_matches_direct_dft() {
        let (m, k, spacing, pitch) = (32usize, 3usize, 0.5, 4.0);
        let patch: Vec<f64> = (0..m)
            .flat_map(|s| std::iter::repeat_n((std::f64::consts::TAU * s as f64 * spacing / pitch).sin(), k))
            .collect();
        let got = patch_thread_peak(&patch, m, k, spacing, pitch);
        // Normalised: zero mean, unit variance -> amplitude sqrt(2).
        let bin = (m as f64 * spacing / pitch) as usize;
        let (mut re, mut im) = (0.0, 0.0);
        for s in 0..m {
            let g = 2f64.sqrt() * (std::f64::consts::TAU * s as f64 * spacing / pitch).sin();
            let ph = -std::f64::consts::TAU * (bin * s) as f64 / m as f64;
            re += g * ph.cos();
            im += g * ph.sin();
        }
        let direct = (re * re + im * im).sqrt() / (m as f64).sqrt();
        assert!((got - direct).abs() < 1e-9, "{got} vs {direct}");
        assert!((got - (m as f64 / 2.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn thread_peak_on_volume_sees_thread() {
        // Axial modulation along y with a 4 mm period.
        let dims = [24, 64, 24];
        let vs = 0.5;
        let grid = crate::phantom::VoxelGrid::new(dims, vs);
        let mut threaded = vec![0.0; grid.len()];
        let mut smooth = vec![0.0; grid.len()];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let c = grid.voxel_center(i, j, k);
                    let r = (c.x * c.x + c.z * c.z).sqrt();
                    let radius = 2.5 + 0.5 * (std::f64::consts::TAU * c.y / 4.0).sin();
                    threaded[grid.index(i, j, k)] = if r < radius { 1.0 } else { 0.0 };
                    smooth[grid.index(i, j, k)] = if r < 2.5 { 1.0 } else { 0.0 };
                }
            }
        }
        let spec = PatchSpec { center: Vector3::zeros(), axis: Vector3::y(), length: 24.0, half_width: 3.0, spacing: 0.25 };
        let a = thread_peak(&ReconVolume::new(dims, vs, threaded, "t").unwrap(), &spec, 4.0).unwrap();
        let b = thread_peak(&ReconVolume::new(dims, vs, smooth, "s").unwrap(), &spec, 4.0).unwrap();
        assert!(a > 10.0 * b.max(1e-6), "{a} vs {b}");
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        assert_eq!(ssim(&a, &a, 20, 20).unwrap(), 1.0);
        assert!(ssim(&a, &a[..399], 20, 20).is_err());
    }

    #[test]
    fn ssim_offset_matches_formula() {
        let (rows, cols) = (9, 10);
        let a: Vec<f64> = (0..rows * cols).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        let c = 0.3;
        let b: Vec<f64> = a.iter().map(|v| v + c).collect();
        // Only the luminance term changes: per window
        // (2 m (m + c) + C1) / (m^2 + (m + c)^2 + C1).
        let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let c1 = (0.01 * (hi - lo)).powi(2);
        let mut expected = 0.0;
        let mut n = 0.0;
        for r0 in 0..=rows - 7 {
            for c0 in 0..=cols - 7 {
                let mut m = 0.0;
                for r in r0..r0 + 7 {
                    for cc in c0..c0 + 7 {
                        m += a[r * cols + cc];
                    }
                }
                m /= 49.0;
                expected += (2.0 * m * (m + c) + c1) / (m * m + (m + c) * (m + c) + c1);
                n += 1.0;
            }
        }
        let got = ssim(&b, &a, rows, cols).unwrap();
        let got_ref_b = ssim(&a, &b, rows, cols).unwrap();
        assert!((got_ref_b - expected / n).abs() < 1e-12, "{got_ref_b} vs {}", expected / n);
        assert!(got < 1.0 && got > 0.0);
    }

    #[test]
    fn ssim_of_independent_noise_is_low() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
            assert!(ssim(&a, &b, 64, 64).unwrap() < 0.2);
        }
    }

    #[test]
    fn profile_across_default_screw() {
        let s = crate::phantom::PhantomParams::default().screws[0];
        let spec = ProfileSpec::across_screw(&s, 0.25, 10.0, 0.25).unwrap();
        assert!(spec.direction.dot(&s.axis).abs() < 1e-12);
        assert!((spec.center - (s.tip_position + s.axis * 10.0)).norm() < 1e-12);
        assert_eq!(spec.direction.z, 0.0);
    }

    proptest! {
        #[test]
        fn fwhm_invariant_under_affine_intensity(scale in 0.1f64..10.0, offset in -5.0f64..5.0, sigma in 0.5f64..2.0) {
            let p = gaussian_line(sigma, 0.1, 201);
            let q: Vec<f64> = p.iter().map(|v| scale * v + offset).collect();
            let (a, b) = (fwhm_profile(&p, 0.1).unwrap(), fwhm_profile(&q, 0.1).unwrap());
            prop_assert!((a - b).abs() < 1e-9 * a);
        }

        #[test]
        fn thread_peak_invariant_under_affine_intensity(seed in 0u64..500, scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p: Vec<f64> = (0..96).map(|_| rng.random_range(0.0..1.0)).collect();
            let q: Vec<f64> = p.iter().map(|v| scale * v + offset).collect();
            let (a, b) = (patch_thread_peak(&p, 24, 4, 0.5, 4.0), patch_thread_peak(&q, 24, 4, 0.5, 4.0));
            prop_assert!((a - b).abs() < 1e-9 * a.max(1e-12));
        }

        #[test]
        fn ssim_is_bounded(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = ssim(&a, &b, 12, 12).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
