//! Toy amodal reasoning segmentation network with its losses, trainer,
//! checkpoint format and evaluation.

pub mod checkpoint;
mod config;
mod error;
pub mod eval;
pub mod inference;
pub mod layers;
pub mod losses;
mod model;
pub mod network;
pub mod trainer;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use error::{ModelError, Result};
pub use eval::{evaluate_model, render_report, EvalReport, Predictor};
pub use inference::{Generation, Prediction, SegPrediction};
pub use losses::{total_loss, LossBreakdown, LossWeights};
pub use model::{AuraModel, ModelOutputs, SegOutput, TextOutput, VisualFeatures};
pub use trainer::{build_vocab, lr_at, TrainConfig, Trainer};
pub use vocab::Vocab;
