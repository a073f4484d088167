//! Data model for amodal reasoning segmentation.
//!
//! A [`SceneSample`] is one image with per-object visible/amodal masks and a
//! list of question/answer [`Conversation`]s whose answers carry one `[SEG]`
//! marker per referenced object. This crate owns the ground-truth
//! derivations (occlusion rate, occlusion-aware spatial map), validation,
//! the dataset directory format, a COCOA-style annotation adapter and the
//! procedural scene generator used for training at desk scale.

pub mod cocoa;
mod error;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod sample;
pub mod synth;
pub mod text;
pub mod validate;

pub use error::{CoreError, Result};
pub use geometry::{build_spatial_map, compute_occlusion_rate};
pub use mask::{BinaryMask, BoxPx, Rle, SpatialMap};
pub use sample::{Conversation, ObjectId, OcclusionPair, RgbImage, SceneSample, SegTarget};
pub use text::{count_seg, SEG_TOKEN};
pub use validate::{validate_sample, ValidationReport, Violation};
