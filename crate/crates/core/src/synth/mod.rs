//! Procedural occlusion scenes with exact ground truth.

mod build;
mod config;
mod scene;
mod templates;

pub use build::{build_dataset, sample_seed, BuildSummary, Split};
pub use config::{ColorName, SceneConfig, ShapeKind};
pub use scene::{compose_scene, generate_sample, generate_scene, PlacedShape, Shape};
pub use templates::{
    default_templates, generate_conversations, occlusion_templates, Binding, ConversationBatch,
    QATemplate,
};
