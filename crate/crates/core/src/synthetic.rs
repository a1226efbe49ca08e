//! Deterministic synthetic scenes with bright rectangular "clouds" over a
//! darker textured background. Used by tests, the acceptance suite and
//! smoke runs of the command-line tool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster_io::{Raster, SpectralScene};
use crate::scalar::Scalar;
use crate::tiling::{normalize, MaskKind, MaskPatch, SpectralPatch, CHANNELS};
use crate::trainer::Sample;

/// A `height x width` scene with 1 to 3 cloud rectangles and its binary mask.
pub fn cloud_scene(scene_id: &str, height: usize, width: usize, seed: u64) -> (SpectralScene, Raster<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Raster::filled(height, width, 0u8);
    for _ in 0..rng.random_range(1..=3) {
        let h = rng.random_range(height / 5..=height / 2).max(1);
        let w = rng.random_range(width / 5..=width / 2).max(1);
        let r0 = rng.random_range(0..=height - h);
        let c0 = rng.random_range(0..=width - w);
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                mask.set(r, c, 1);
            }
        }
    }
    let bands: [Raster<u16>; CHANNELS] = std::array::from_fn(|b| {
        let base = 0.06 + 0.04 * b as f64;
        Raster::from_fn(height, width, |r, c| {
            let v = if mask.get(r, c) == 1 {
                rng.random_range(0.65..0.9)
            } else {
                base + 0.1 * (((r / 7 + c / 5) % 3) as f64 / 2.0) + rng.random_range(0.0..0.08)
            };
            (v * f64::from(u16::MAX)).round() as u16
        })
    });
    let scene = SpectralScene::new(scene_id, bands).expect("bands share dimensions");
    (scene, mask)
}

/// `count` square samples of side `side`, normalized to `[0, 1]`.
pub fn cloud_samples<T: Scalar>(count: usize, side: usize, seed: u64) -> Vec<Sample<T>> {
    (0..count)
        .map(|i| {
            let (scene, mask) = cloud_scene(&format!("synthetic{i}"), side, side, seed.wrapping_add(i as u64));
            let mut pixels = Vec::with_capacity(CHANNELS * side * side);
            for band in scene.bands() {
                pixels.extend_from_slice(band.data());
            }
            let patch = normalize::<T>(&SpectralPatch::new(0, 0, side, pixels));
            let values = mask.data().iter().map(|&v| T::lit(f64::from(v))).collect();
            let mask = MaskPatch::new(0, 0, side, values, MaskKind::Binary).expect("binary mask");
            Sample::new(patch, mask).expect("matching sides")
        })
        .collect()
}
