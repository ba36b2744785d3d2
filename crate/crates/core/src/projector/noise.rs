//! Poisson photon noise with per-row counter-based seeding, so the output
//! for a given seed does not depend on how rows are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::ViewAngles;

/// Counts assigned to pixels that recorded no photons.
pub const STARVED_COUNTS: f64 = 0.25;

/// Pixels sharing one random stream; also the unit of parallel work.
const ROW: usize = 256;

pub fn inject_noise(counts: &[f64], seed: u64) -> Result<Vec<f64>> {
    inject_noise_with_clamp(counts, seed, STARVED_COUNTS)
}

pub fn inject_noise_with_clamp(counts: &[f64], seed: u64, starved: f64) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(Error::Range(format!("negative or non-finite expected count {c}")));
    }
    let mut out = vec![0.0; counts.len()];
    for (chunk, (src, dst)) in counts.chunks(ROW).zip(out.chunks_mut(ROW)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        for (&mean, o) in src.iter().zip(dst.iter_mut()) {
            let k = if mean > 0.0 {
                Poisson::new(mean)
                    .map_err(|e| Error::Numerical(format!("poisson({mean}): {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            *o = if k > 0.0 { k } else { starved };
        }
    }
    Ok(out)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed for one view, keyed by pose rather than acquisition order so a
/// pose revisited by another trajectory sees identical noise.
pub fn view_seed(noise_seed: u64, pose: &ViewAngles) -> u64 {
    let phi = (pose.phi() * 1000.0).round() as i64 as u64;
    let theta = (pose.theta() * 1000.0).round() as i64 as u64;
    splitmix(splitmix(splitmix(noise_seed) ^ phi) ^ theta.rotate_left(32))
}
