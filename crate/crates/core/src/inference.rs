//! Scene-level cloud masks from a trained network.
//!
//! A scene is cut into padded patches, each patch is normalized, downsized
//! bilinearly to the network input side, scored, thresholded, upsized back
//! with nearest neighbour and stitched into a scene-sized mask.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureMap, ModelError, Network};
use crate::raster_io::{write_f32, write_u8, Raster, RasterError, SpectralScene};
use crate::scalar::Scalar;
use crate::tiling::{
    cut_patches, normalize, resize_mask, resize_patch, resize_probability, stitch, MaskKind, MaskPatch,
    ResizeMethod, SpectralPatch, TilingError, MODEL_INPUT_SIDE, PATCH_SIZE,
};

pub const DEFAULT_THRESHOLD: f64 = 0.047;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid inference config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// A pixel is cloud when its probability is strictly greater.
    pub threshold: f64,
    pub patch_size: usize,
    pub model_input_side: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            patch_size: PATCH_SIZE,
            model_input_side: MODEL_INPUT_SIDE,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(InferenceError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.patch_size == 0 || self.model_input_side == 0 {
            return Err(InferenceError::Config("patch_size and model_input_side must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps a `side x side x 4` input to a one-channel probability map.
pub trait Segmenter<T>: Sync {
    fn probabilities(&self, x: &FeatureMap<T>) -> std::result::Result<FeatureMap<T>, ModelError>;
}

impl<T: Scalar> Segmenter<T> for Network<T> {
    fn probabilities(&self, x: &FeatureMap<T>) -> std::result::Result<FeatureMap<T>, ModelError> {
        self.forward_one(x)
    }
}

pub fn binarize<T: Scalar>(probs: &[T], threshold: f64) -> Vec<u8> {
    let th = T::lit(threshold);
    probs.iter().map(|&p| u8::from(p > th)).collect()
}

/// Binary mask and probability map for one normalized patch, both at the
/// patch's own side.
pub fn predict_patch<T: Scalar>(
    model: &dyn Segmenter<T>,
    patch: &SpectralPatch<T>,
    cfg: &InferenceConfig,
) -> Result<(MaskPatch<u8>, MaskPatch<T>)> {
    let small = resize_patch(patch, cfg.model_input_side, ResizeMethod::Bilinear)?;
    let x = FeatureMap::new(small.pixels.len() / (small.side * small.side), small.side, small.pixels);
    let y = model.probabilities(&x)?;
    let side = y.side;
    let binary = MaskPatch::new(
        patch.grid_row,
        patch.grid_col,
        side,
        binarize(&y.data, cfg.threshold),
        MaskKind::Binary,
    )?;
    let prob = MaskPatch::new(patch.grid_row, patch.grid_col, side, y.data, MaskKind::Probability)?;
    Ok((
        resize_mask(&binary, patch.side, ResizeMethod::Nearest)?,
        resize_probability(&prob, patch.side, ResizeMethod::Bilinear)?,
    ))
}

pub struct ScenePrediction {
    pub scene_id: String,
    /// `{0, 1}` mask with the scene's dimensions.
    pub mask: Raster<u8>,
    pub probability: Raster<f32>,
}

pub fn predict_scene<T: Scalar>(
    model: &dyn Segmenter<T>,
    scene: &SpectralScene,
    cfg: &InferenceConfig,
) -> Result<ScenePrediction> {
    cfg.validate()?;
    let (grid, patches) = cut_patches(scene, cfg.patch_size);
    let results: Vec<Result<(MaskPatch<u8>, MaskPatch<T>)>> = patches
        .par_iter()
        .map(|p| predict_patch(model, &normalize::<T>(p), cfg))
        .collect();
    let mut masks = Vec::with_capacity(results.len());
    let mut probs = Vec::with_capacity(results.len());
    for r in results {
        let (m, p) = r?;
        masks.push(m);
        probs.push(MaskPatch {
            grid_row: p.grid_row,
            grid_col: p.grid_col,
            side: p.side,
            values: p.values.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
            kind: p.kind,
        });
    }
    Ok(ScenePrediction {
        scene_id: scene.scene_id().to_string(),
        mask: stitch(&grid, &masks)?,
        probability: stitch(&grid, &probs)?,
    })
}

pub fn mask_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}_mask.TIF"))
}

pub fn probability_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}_prob.TIF"))
}

/// Writes the mask as `{0, 255}` and optionally the float probability map.
pub fn write_prediction(dir: &Path, pred: &ScenePrediction, emit_probability: bool) -> Result<Vec<PathBuf>> {
    let mask_file = mask_path(dir, &pred.scene_id);
    write_u8(&mask_file, &pred.mask.map(|v| v * 255))?;
    let mut written = vec![mask_file];
    if emit_probability {
        let prob_file = probability_path(dir, &pred.scene_id);
        write_f32(&prob_file, &pred.probability)?;
        written.push(prob_file);
    }
    Ok(written)
}
