//! Cloud segmentation for 4-band Landsat 8 scenes.
//!
//! The pipeline cuts scenes into 384x384 patches, downsizes them to the
//! network input side, predicts a cloud probability per pixel with an
//! encoder-decoder network trained under a soft Jaccard loss, binarizes the
//! result and stitches patch masks back into scene masks.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases at
//! the crate root fix the element type for the common cases.

pub mod augment;
pub mod evaluation;
pub mod inference;
pub mod loss;
pub mod model;
pub mod raster_io;
pub mod scalar;
pub mod synthetic;
pub mod tiling;
pub mod trainer;

pub use scalar::Scalar;

pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
pub type FeatureMap32 = model::FeatureMap<f32>;
pub type FeatureMap64 = model::FeatureMap<f64>;
pub type SpectralPatch32 = tiling::SpectralPatch<f32>;
pub type SpectralPatch64 = tiling::SpectralPatch<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
