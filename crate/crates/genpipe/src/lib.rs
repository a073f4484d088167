//! Semi-automatic QA generation: annotations in, prompt out, service reply
//! parsed into `[SEG]`-aligned conversations and queued for human review.

pub mod bundle;
pub mod client;
mod error;
pub mod parse;
pub mod pipeline;
pub mod prompt;

pub use bundle::{ObjectAnnotation, ObjectAnnotationBundle, OcclusionRelation};
pub use client::{vlm_generate, HttpClient, MockClient, RetryPolicy, VlmClient, VlmRequest, VlmResponse};
pub use error::{GenError, Result};
pub use parse::{parse_qa, render_qa, ParsedQa};
pub use pipeline::{load_sources, run_pipeline, PipelineOptions, PipelineReport, SourceSample};
pub use prompt::{assemble_prompt, PromptTemplate};

/// Question/answer pairs requested per image.
pub const QA_PAIRS: usize = 10;
