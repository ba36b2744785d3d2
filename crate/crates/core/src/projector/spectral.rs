use crate::error::{Error, Result};
use crate::geometry::{DetectorGeometry, ProjectionMatrix};
use crate::phantom::{MaterialLabel, MaterialVolume};

use super::{material_paths, pixel_rays};

/// Energy used for mono-energetic projections and reference attenuation.
pub const REFERENCE_ENERGY_KEV: f64 = 70.0;

/// Discrete x-ray spectrum: `(energy keV, photons per pixel)` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<(f64, f64)>,
}

impl Spectrum {
    pub fn new(bins: Vec<(f64, f64)>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("empty spectrum".into()));
        }
        for w in bins.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config("spectrum energies must increase strictly".into()));
            }
        }
        if bins.iter().any(|&(e, f)| !(e > 0.0) || !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config("spectrum energies must be positive, fluences non-negative".into()));
        }
        let s = Self { bins };
        if !(s.total_fluence() > 0.0) {
            return Err(Error::Config("spectrum total fluence must be positive".into()));
        }
        Ok(s)
    }

    /// Five-bin 40-110 keV spectrum scaled to `total_fluence` photons/pixel.
    pub fn builtin(total_fluence: f64) -> Result<Self> {
        const SHAPE: [(f64, f64); 5] = [(40.0, 0.12), (55.0, 0.28), (70.0, 0.30), (90.0, 0.20), (110.0, 0.10)];
        Self::new(SHAPE.iter().map(|&(e, w)| (e, w * total_fluence)).collect())
    }

    pub fn mono(energy_kev: f64, fluence: f64) -> Result<Self> {
        Self::new(vec![(energy_kev, fluence)])
    }

    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    pub fn total_fluence(&self) -> f64 {
        self.bins.iter().map(|b| b.1).sum()
    }

    pub fn scaled_to(&self, total_fluence: f64) -> Result<Self> {
        let k = total_fluence / self.total_fluence();
        Self::new(self.bins.iter().map(|&(e, f)| (e, f * k)).collect())
    }
}

/// Mass attenuation coefficients (cm^2/g) per material and energy.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationTable {
    energies: Vec<f64>,
    /// `values[material][energy]`.
    values: [Vec<f64>; 5],
}

impl AttenuationTable {
    pub fn new(energies: Vec<f64>, values: [Vec<f64>; 5]) -> Result<Self> {
        if energies.is_empty() || values.iter().any(|v| v.len() != energies.len()) {
            return Err(Error::Config("attenuation table shape mismatch".into()));
        }
        for w in energies.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config("table energies must increase strictly".into()));
            }
        }
        if values.iter().flatten().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("attenuation coefficients must be positive".into()));
        }
        for m in [MaterialLabel::Titanium, MaterialLabel::Bone] {
            let in_band: Vec<f64> = energies
                .iter()
                .zip(&values[m.index()])
                .filter(|(e, _)| (30.0..=120.0).contains(*e))
                .map(|(_, v)| *v)
                .collect();
            if in_band.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::Config(format!(
                    "{} attenuation must decrease with energy over 30-120 keV",
                    m.name()
                )));
            }
        }
        Ok(Self { energies, values })
    }

    /// Tabulated at the built-in spectrum's bin energies (after NIST XCOM).
    pub fn builtin() -> Self {
        let energies = vec![40.0, 55.0, 70.0, 90.0, 110.0];
        let values = [
            vec![0.2485, 0.1970, 0.1764, 0.1598, 0.1500],
            vec![0.2683, 0.2160, 0.1940, 0.1769, 0.1665],
            vec![0.2510, 0.2050, 0.1850, 0.1690, 0.1590],
            vec![0.6655, 0.3650, 0.2610, 0.2020, 0.1770],
            vec![2.2140, 0.9570, 0.5470, 0.3290, 0.2420],
        ];
        Self::new(energies, values).expect("built-in table is valid")
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn values(&self, m: MaterialLabel) -> &[f64] {
        &self.values[m.index()]
    }

    pub fn mass_attenuation(&self, m: MaterialLabel, energy_kev: f64) -> Result<f64> {
        self.energies
            .iter()
            .position(|e| (e - energy_kev).abs() < 1e-6)
            .map(|i| self.values[m.index()][i])
            .ok_or_else(|| Error::Config(format!("no attenuation entry for {} at {energy_kev} keV", m.name())))
    }

    /// Linear attenuation per unit density-weighted path (1 / (g/cm^3 * mm)).
    fn per_mm(&self, m: MaterialLabel, energy_kev: f64) -> Result<f64> {
        Ok(self.mass_attenuation(m, energy_kev)? * 0.1)
    }
}

/// Spectrum and table folded into per-bin coefficients for fast evaluation.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    fluence: Vec<f64>,
    coef: Vec<[f64; 5]>,
}

impl SpectralModel {
    pub fn new(spectrum: &Spectrum, table: &AttenuationTable) -> Result<Self> {
        let mut coef = Vec::with_capacity(spectrum.bins().len());
        for &(e, _) in spectrum.bins() {
            let mut c = [0.0; 5];
            for m in MaterialLabel::ALL {
                c[m.index()] = table.per_mm(m, e)?;
            }
            coef.push(c);
        }
        Ok(Self {
            fluence: spectrum.bins().iter().map(|b| b.1).collect(),
            coef,
        })
    }

    /// Expected counts behind the given per-material density-weighted paths.
    #[inline]
    pub fn counts(&self, paths: &[f64; 5]) -> f64 {
        self.fluence
            .iter()
            .zip(&self.coef)
            .map(|(f, c)| {
                let att: f64 = c.iter().zip(paths).map(|(a, b)| a * b).sum();
                f * (-att).exp()
            })
            .sum()
    }

    pub fn total_fluence(&self) -> f64 {
        self.fluence.iter().sum()
    }
}

/// Expected detector counts per pixel under a polychromatic beam.
pub fn polychromatic_project(
    vol: &MaterialVolume,
    matrix: &ProjectionMatrix,
    geom: &DetectorGeometry,
    spectrum: &Spectrum,
    table: &AttenuationTable,
) -> Result<Vec<f64>> {
    let model = SpectralModel::new(spectrum, table)?;
    let basis = pixel_rays(matrix, geom)?;
    let mut out = vec![0.0; geom.pixel_count()];
    for v in 0..geom.rows {
        for u in 0..geom.cols {
            let dir = basis.direction(u as f64, v as f64);
            out[v * geom.cols + u] = model.counts(&material_paths(vol, &basis.source, &dir));
        }
    }
    Ok(out)
}

/// `-ln(counts / I0)`, small negatives from noise clipped to zero.
pub fn log_normalize(counts: &[f64], spectrum: &Spectrum) -> Result<Vec<f64>> {
    let i0 = spectrum.total_fluence();
    counts
        .iter()
        .map(|&c| {
            if !(c > 0.0) || !c.is_finite() {
                Err(Error::Numerical(format!("non-positive count {c} before log")))
            } else {
                Ok((-(c / i0).ln()).max(0.0))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_to_matrix, ViewAngles};
    use crate::phantom::{Material, MaterialVolume};
    use crate::projector::{inject_noise, line_integrals_with};

    fn central_geom() -> DetectorGeometry {
        DetectorGeometry { rows: 9, cols: 9, pixel_pitch: 0.5, ..DetectorGeometry::desk() }
    }

    fn slab(thickness_vox: usize, m: MaterialLabel) -> MaterialVolume {
        // Slab normal to x, centred, thin enough that central rays cross it
        // almost perpendicularly.
        let mut v = MaterialVolume::filled([64, 16, 16], 0.5, Material::nominal(MaterialLabel::Air)).unwrap();
        let start = 32 - thickness_vox / 2;
        for k in 0..16 {
            for j in 0..16 {
                for i in start..start + thickness_vox {
                    let idx = v.index(i, j, k);
                    v.set(idx, Material::nominal(m));
                }
            }
        }
        v
    }

    fn central(v: &[f64]) -> f64 {
        v[4 * 9 + 4]
    }

    #[test]
    fn single_bin_is_beer_lambert() {
        let vol = slab(6, MaterialLabel::Bone);
        let g = central_geom();
        let p = pose_to_matrix(ViewAngles::new(0.0, 90.0).unwrap(), &g).unwrap();
        let table = AttenuationTable::builtin();
        let spec = Spectrum::mono(70.0, 1e5).unwrap();
        let counts = polychromatic_project(&vol, &p, &g, &spec, &table).unwrap();
        let li = line_integrals_with(&vol, &p, &g, None, &table, 70.0).unwrap();
        for (c, l) in counts.iter().zip(&li) {
            assert!((c - 1e5 * (-l).exp()).abs() <= 1e-9 * 1e5);
        }
    }

    #[test]
    fn empty_volume_passes_full_fluence() {
        let vol = MaterialVolume::filled([16, 16, 16], 1.0, Material::new(MaterialLabel::Air, 0.0).unwrap()).unwrap();
        let g = central_geom();
        let p = pose_to_matrix(ViewAngles::new(30.0, 60.0).unwrap(), &g).unwrap();
        let spec = Spectrum::builtin(4e5).unwrap();
        let counts = polychromatic_project(&vol, &p, &g, &spec, &AttenuationTable::builtin()).unwrap();
        assert!(counts.iter().all(|&c| (c - 4e5).abs() < 1e-6));
    }

    #[test]
    fn two_bin_titanium_slab_closed_form() {
        let vol = slab(8, MaterialLabel::Titanium); // 4 mm
        let g = central_geom();
        let p = pose_to_matrix(ViewAngles::new(0.0, 90.0).unwrap(), &g).unwrap();
        let table = AttenuationTable::builtin();
        let spec = Spectrum::new(vec![(55.0, 3e4), (90.0, 2e4)]).unwrap();
        let counts = polychromatic_project(&vol, &p, &g, &spec, &table).unwrap();
        // Central ray: 4 mm titanium (4.5 g/cm^3) plus 28 mm air (0.0012).
        let ti: f64 = 4.5 * 4.0 * 0.1;
        let air: f64 = 0.0012 * 28.0 * 0.1;
        let expected = 3e4 * (-(0.9570 * ti + 0.1970 * air)).exp() + 2e4 * (-(0.3290 * ti + 0.1598 * air)).exp();
        assert!((central(&counts) - expected).abs() / expected < 1e-9, "{} vs {expected}", central(&counts));
    }

    #[test]
    fn beam_hardening_lowers_effective_attenuation() {
        let g = central_geom();
        let p = pose_to_matrix(ViewAngles::new(0.0, 90.0).unwrap(), &g).unwrap();
        let table = AttenuationTable::builtin();
        let spec = Spectrum::builtin(1e5).unwrap();
        let mut last = f64::INFINITY;
        for t in [2usize, 4, 8, 12, 16] {
            let counts = polychromatic_project(&slab(t, MaterialLabel::Titanium), &p, &g, &spec, &table).unwrap();
            let mu_eff = -(central(&counts) / 1e5).ln() / (t as f64 * 0.5);
            assert!(mu_eff < last, "thickness {t}: {mu_eff} !< {last}");
            last = mu_eff;
        }
    }

    #[test]
    fn log_normalize_cases() {
        let spec = Spectrum::builtin(1e5).unwrap();
        let p = log_normalize(&[1e5, 1e5 * (-2.0f64).exp(), 1.1e5], &spec).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 2.0).abs() < 1e-9);
        assert_eq!(p[2], 0.0);
        assert!(log_normalize(&[0.0], &spec).is_err());
    }

    #[test]
    fn noisy_slab_matches_spectral_average() {
        // Flat bone slab seen by a wide detector patch; every pixel in the
        // central region crosses ~4 mm of bone.
        let vol = slab(8, MaterialLabel::Bone);
        let g = DetectorGeometry { rows: 15, cols: 15, pixel_pitch: 0.5, ..DetectorGeometry::desk() };
        let p = pose_to_matrix(ViewAngles::new(0.0, 90.0).unwrap(), &g).unwrap();
        let table = AttenuationTable::builtin();
        let spec = Spectrum::builtin(1e5).unwrap();
        let counts = polychromatic_project(&vol, &p, &g, &spec, &table).unwrap();
        let noisy = inject_noise(&counts, 5).unwrap();
        let logp = log_normalize(&noisy, &spec).unwrap();
        let mean = logp.iter().sum::<f64>() / logp.len() as f64;

        // Per-bin numerical oracle along the principal ray.
        let bone = 1.85 * 4.0 * 0.1;
        let air: f64 = 0.0012 * 28.0 * 0.1;
        let i: f64 = spec
            .bins()
            .iter()
            .map(|&(e, f)| {
                let mb = table.mass_attenuation(MaterialLabel::Bone, e).unwrap();
                let ma = table.mass_attenuation(MaterialLabel::Air, e).unwrap();
                f * (-(mb * bone + ma * air)).exp()
            })
            .sum();
        let oracle = -(i / 1e5).ln();
        assert!((mean - oracle).abs() / oracle < 0.02, "{mean} vs {oracle}");
    }

    #[test]
    fn missing_table_entry_is_an_error() {
        let vol = slab(2, MaterialLabel::Bone);
        let g = central_geom();
        let p = pose_to_matrix(ViewAngles::new(0.0, 90.0).unwrap(), &g).unwrap();
        let spec = Spectrum::mono(60.0, 1e5).unwrap();
        assert!(polychromatic_project(&vol, &p, &g, &spec, &AttenuationTable::builtin()).is_err());
    }

    #[test]
    fn table_validation() {
        let t = AttenuationTable::builtin();
        let mut values: [Vec<f64>; 5] = std::array::from_fn(|i| t.values(MaterialLabel::ALL[i]).to_vec());
        values[MaterialLabel::Titanium.index()][3] = 2.0;
        assert!(AttenuationTable::new(t.energies().to_vec(), values).is_err());
        assert!(Spectrum::new(vec![(50.0, 1.0), (40.0, 1.0)]).is_err());
    }
}
