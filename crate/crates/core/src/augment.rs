//! Paired geometric augmentation of (patch, mask) training samples.
//!
//! A transform is a horizontal flip, then a counter-clockwise rotation by a
//! multiple of 90°, then a zoom implemented as scale-about-centre followed by
//! a crop back to the original side. Spectral channels are resampled
//! bilinearly, masks with nearest neighbour so they stay binary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tiling::{bilinear_sample, MaskPatch, SpectralPatch, CHANNELS};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("patch side {patch} does not match mask side {mask}")]
    ShapeMismatch { patch: usize, mask: usize },
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub flip_probability: f64,
    /// Allowed rotations in degrees, each one of 0, 90, 180, 270.
    pub rotation_choices: Vec<u32>,
    /// Closed interval of zoom factors, lower bound at least 1.
    pub zoom_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            rotation_choices: vec![0, 90, 180, 270],
            zoom_range: [1.0, 1.2],
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    /// Policy that leaves every sample unchanged.
    pub fn identity(seed: u64) -> Self {
        Self {
            flip_probability: 0.0,
            rotation_choices: vec![0],
            zoom_range: [1.0, 1.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(AugmentError::Policy(format!(
                "flip_probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if self.rotation_choices.is_empty() {
            return Err(AugmentError::Policy("rotation_choices is empty".into()));
        }
        if let Some(d) = self.rotation_choices.iter().find(|d| ![0, 90, 180, 270].contains(*d)) {
            return Err(AugmentError::Policy(format!(
                "rotation {d} is not a multiple of 90 in [0, 270]"
            )));
        }
        let [lo, hi] = self.zoom_range;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(AugmentError::Policy(format!("zoom range [{lo}, {hi}] must satisfy 1 <= lo <= hi")));
        }
        Ok(())
    }

    /// Independent random stream for one sample in one epoch.
    pub fn sample_rng(&self, epoch: usize, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((epoch as u64) << 32) ^ index as u64);
        rng
    }

    pub fn sample_transform<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform {
        let flip = rng.random::<f64>() < self.flip_probability;
        let deg = self.rotation_choices[rng.random_range(0..self.rotation_choices.len())];
        let [lo, hi] = self.zoom_range;
        let zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Transform {
            flip,
            quarter_turns: (deg / 90) as u8,
            zoom,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    /// Mirror columns.
    pub flip: bool,
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    pub zoom: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        quarter_turns: 0,
        zoom: 1.0,
    };
}

fn flip_plane<V: Copy>(src: &[V], side: usize) -> Vec<V> {
    src.chunks_exact(side)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

/// One counter-clockwise quarter turn: `out[r][c] = in[c][side - 1 - r]`.
fn rotate_plane<V: Copy>(src: &[V], side: usize) -> Vec<V> {
    let mut out = Vec::with_capacity(src.len());
    for r in 0..side {
        for c in 0..side {
            out.push(src[c * side + (side - 1 - r)]);
        }
    }
    out
}

/// Source coordinate of output pixel `i` when zooming by `zoom` about the
/// centre (pixel-centre convention).
#[inline]
fn zoom_source(i: usize, side: usize, zoom: f64) -> f64 {
    let centre = side as f64 / 2.0;
    (i as f64 + 0.5 - centre) / zoom + centre - 0.5
}

fn zoom_plane_nearest<V: Copy>(src: &[V], side: usize, zoom: f64) -> Vec<V> {
    let idx: Vec<usize> = (0..side)
        .map(|i| (zoom_source(i, side, zoom) + 0.5).floor().clamp(0.0, (side - 1) as f64) as usize)
        .collect();
    let mut out = Vec::with_capacity(src.len());
    for &r in &idx {
        for &c in &idx {
            out.push(src[r * side + c]);
        }
    }
    out
}

fn zoom_plane_bilinear<T: Scalar>(src: &[T], side: usize, zoom: f64) -> Vec<T> {
    let coords: Vec<T> = (0..side).map(|i| T::lit(zoom_source(i, side, zoom))).collect();
    let mut out = Vec::with_capacity(src.len());
    for &y in &coords {
        for &x in &coords {
            out.push(bilinear_sample(src, side, side, y, x));
        }
    }
    out
}

fn transform_plane<V: Copy>(
    src: &[V],
    side: usize,
    tf: &Transform,
    zoom: impl Fn(&[V], usize, f64) -> Vec<V>,
) -> Vec<V> {
    let mut plane = if tf.flip { flip_plane(src, side) } else { src.to_vec() };
    for _ in 0..tf.quarter_turns % 4 {
        plane = rotate_plane(&plane, side);
    }
    if tf.zoom != 1.0 {
        plane = zoom(&plane, side, tf.zoom);
    }
    plane
}

/// Applies `tf` to every channel of `patch` and to `mask`.
pub fn apply_transform<T: Scalar, V: Copy>(
    patch: &SpectralPatch<T>,
    mask: &MaskPatch<V>,
    tf: &Transform,
) -> Result<(SpectralPatch<T>, MaskPatch<V>)> {
    if patch.side != mask.side {
        return Err(AugmentError::ShapeMismatch {
            patch: patch.side,
            mask: mask.side,
        });
    }
    let side = patch.side;
    let mut pixels = Vec::with_capacity(patch.pixels.len());
    for c in 0..CHANNELS {
        pixels.extend(transform_plane(patch.channel(c), side, tf, zoom_plane_bilinear));
    }
    let values = transform_plane(&mask.values, side, tf, zoom_plane_nearest);
    Ok((
        SpectralPatch::new(patch.grid_row, patch.grid_col, side, pixels),
        MaskPatch {
            values,
            ..mask.clone()
        },
    ))
}

/// Draws one transform from `policy` and applies it to the pair.
pub fn augment_pair<T: Scalar, V: Copy, R: Rng + ?Sized>(
    patch: &SpectralPatch<T>,
    mask: &MaskPatch<V>,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<(SpectralPatch<T>, MaskPatch<V>)> {
    let tf = policy.sample_transform(rng);
    apply_transform(patch, mask, &tf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::MaskKind;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair(side: usize, seed: u64) -> (SpectralPatch<f32>, MaskPatch<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..CHANNELS * side * side).map(|_| rng.random::<f32>()).collect();
        let values = (0..side * side).map(|_| rng.random_bool(0.3) as u8).collect();
        (
            SpectralPatch::new(0, 0, side, pixels),
            MaskPatch::new(0, 0, side, values, MaskKind::Binary).unwrap(),
        )
    }

    #[test]
    fn identity_policy_is_identity() {
        let (p, m) = pair(8, 1);
        let policy = AugmentationPolicy::identity(3);
        let mut rng = policy.sample_rng(0, 0);
        let (p2, m2) = augment_pair(&p, &m, &policy, &mut rng).unwrap();
        assert_eq!((p2, m2), (p, m));
    }

    #[test]
    fn double_flip_restores_pair() {
        let (p, m) = pair(6, 2);
        let flip = Transform {
            flip: true,
            ..Transform::IDENTITY
        };
        let (a, b) = apply_transform(&p, &m, &flip).unwrap();
        assert_ne!(b.values, m.values);
        let (a, b) = apply_transform(&a, &b, &flip).unwrap();
        assert_eq!((a, b), (p, m));
    }

    /// Rotates by moving every pixel's centre through a y-up rotation matrix.
    fn rotate_by_coordinates(src: &[u8], n: usize) -> Vec<u8> {
        let half = (n as f64 - 1.0) / 2.0;
        let mut out = vec![0; n * n];
        for r in 0..n {
            for c in 0..n {
                let (x, y) = (c as f64 - half, half - r as f64);
                let (xr, yr) = (-y, x);
                let (r2, c2) = ((half - yr).round() as usize, (xr + half).round() as usize);
                out[r2 * n + c2] = src[r * n + c];
            }
        }
        out
    }

    #[test]
    fn quarter_turn_moves_origin_to_bottom_left() {
        let mut values = vec![0u8; 16];
        values[0] = 1;
        let m = MaskPatch::new(0, 0, 4, values, MaskKind::Binary).unwrap();
        let p = SpectralPatch::new(0, 0, 4, vec![0.0f64; 64]);
        let tf = Transform {
            quarter_turns: 1,
            ..Transform::IDENTITY
        };
        let (_, out) = apply_transform(&p, &m, &tf).unwrap();
        let hot: Vec<usize> = (0..16).filter(|&i| out.values[i] == 1).collect();
        assert_eq!(hot, vec![3 * 4]);
        // Full indexed grid agrees with the coordinate-rotation oracle.
        let grid: Vec<u8> = (0..16).collect();
        assert_eq!(rotate_plane(&grid, 4), rotate_by_coordinates(&grid, 4));
    }

    #[test]
    fn side_mismatch() {
        let (p, _) = pair(4, 0);
        let (_, m) = pair(5, 0);
        assert!(matches!(
            apply_transform(&p, &m, &Transform::IDENTITY),
            Err(AugmentError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentationPolicy::default().validate().is_ok());
        let bad_zoom = AugmentationPolicy {
            zoom_range: [0.8, 1.2],
            ..Default::default()
        };
        assert!(bad_zoom.validate().is_err());
        let bad_rot = AugmentationPolicy {
            rotation_choices: vec![45],
            ..Default::default()
        };
        assert!(bad_rot.validate().is_err());
        let bad_p = AugmentationPolicy {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(bad_p.validate().is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let policy = AugmentationPolicy {
            seed: 99,
            ..Default::default()
        };
        let draw = |e, i| {
            let mut rng = policy.sample_rng(e, i);
            (0..8).map(|_| policy.sample_transform(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3, 5), draw(3, 5));
        assert_ne!(draw(3, 5), draw(3, 6));
        assert_ne!(draw(3, 5), draw(4, 5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sampled_transforms_keep_ranges(side in 2usize..24, seed in any::<u64>(), epoch in 0usize..5) {
            let (p, m) = pair(side, seed);
            let policy = AugmentationPolicy { seed, flip_probability: 0.5, ..Default::default() };
            let mut rng = policy.sample_rng(epoch, 0);
            let (p2, m2) = augment_pair(&p, &m, &policy, &mut rng).unwrap();
            prop_assert_eq!(p2.side, side);
            prop_assert_eq!(m2.values.len(), side * side);
            prop_assert!(m2.values.iter().all(|&v| v <= 1));
            prop_assert!(p2.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn flips_and_rotations_preserve_cloud_count(side in 1usize..16, seed in any::<u64>(), turns in 0u8..4, flip in any::<bool>()) {
            let (p, m) = pair(side, seed);
            let tf = Transform { flip, quarter_turns: turns, zoom: 1.0 };
            let (_, m2) = apply_transform(&p, &m, &tf).unwrap();
            let count = |v: &[u8]| v.iter().filter(|&&x| x == 1).count();
            prop_assert_eq!(count(&m.values), count(&m2.values));
        }
    }
}
