use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use aura_core::io::{load_dataset, SampleRecord};
use aura_core::SceneSample;
use aura_review::{Enqueued, ItemIssue, ReviewPayload, ReviewStore};
use serde::Serialize;

use crate::bundle::ObjectAnnotationBundle;
use crate::client::{vlm_generate, GenerationParams, RetryPolicy, VlmClient, VlmRequest};
use crate::parse::parse_qa;
use crate::prompt::{assemble_prompt, PromptTemplate};
use crate::Result;

/// A sample plus the image file the service is shown.
#[derive(Clone, Debug)]
pub struct SourceSample {
    pub sample: SceneSample,
    pub image_path: PathBuf,
}

pub fn load_sources(dir: &Path) -> Result<Vec<SourceSample>> {
    Ok(load_dataset(dir)?
        .into_iter()
        .map(|sample| {
            let image_path = dir.join(SampleRecord::from_sample(&sample).image);
            SourceSample { sample, image_path }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    pub template: PromptTemplate,
    pub retry: RetryPolicy,
    pub params: GenerationParams,
    /// Maximum service calls in flight.
    pub concurrency: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            template: PromptTemplate::builtin(),
            retry: RetryPolicy::default(),
            params: GenerationParams::default(),
            concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleFailure {
    pub sample_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    /// Newly created records, in input order.
    pub enqueued: Vec<String>,
    /// Samples that already had a record.
    pub existing: Vec<String>,
    pub failures: Vec<SampleFailure>,
    /// Enqueued records that carry at least one issue.
    pub flagged: Vec<String>,
}

enum Outcome {
    Enqueued { id: String, flagged: bool },
    Existing(String),
    Failed(SampleFailure),
}

fn process(source: &SourceSample, client: &dyn VlmClient, store: &ReviewStore, options: &PipelineOptions) -> Result<Outcome> {
    let sample = &source.sample;
    let bundle = ObjectAnnotationBundle::from_sample(sample, source.image_path.clone());
    let prompt = assemble_prompt(&bundle, &options.template)?;
    let request = VlmRequest {
        prompt,
        image_ref: source.image_path.clone(),
        params: options.params.clone(),
        annotations: bundle.clone(),
    };
    let response = vlm_generate(client, &request, &options.retry)?;
    let parsed = parse_qa(&response.text, &bundle)?;
    log::info!(
        "{}: {} items, {} issues, {} attempt(s), {:?}",
        sample.sample_id,
        parsed.items.len(),
        parsed.errors.len(),
        response.attempts,
        response.latency
    );

    let mut record = SampleRecord::from_sample(sample);
    record.conversations = parsed.conversations();
    let payload = ReviewPayload {
        sample: record,
        image_path: source.image_path.clone(),
        issues: Vec::new(),
    };
    let position = |index: usize| parsed.items.iter().position(|(i, _)| *i == index);
    let mut issues: Vec<ItemIssue> = parsed
        .errors
        .iter()
        .map(|e| match e.index.map(|i| (i, position(i))) {
            Some((_, Some(pos))) => ItemIssue {
                item: Some(pos),
                message: e.problem.to_string(),
            },
            Some((i, None)) => ItemIssue {
                item: None,
                message: format!("pair {i}: {}", e.problem),
            },
            None => ItemIssue {
                item: None,
                message: e.problem.to_string(),
            },
        })
        .collect();
    // Dataset rules catch anything the parser lets through.
    for (pos, (_, conv)) in parsed.items.iter().enumerate() {
        let violations = payload.check_items(std::slice::from_ref(conv));
        if !violations.is_empty() && !issues.iter().any(|i| i.item == Some(pos)) {
            issues.extend(violations.into_iter().map(|message| ItemIssue {
                item: Some(pos),
                message,
            }));
        }
    }
    let flagged = !issues.is_empty();
    let payload = ReviewPayload { issues, ..payload };
    Ok(match store.enqueue(payload)? {
        Enqueued::Created(r) => Outcome::Enqueued {
            id: r.record_id.clone(),
            flagged,
        },
        Enqueued::Existing(r) => Outcome::Existing(r.record_id.clone()),
    })
}

/// Generates QA for every sample and enqueues one review record per sample.
/// Samples that already have a record are skipped without a service call.
pub fn run_pipeline(
    sources: &[SourceSample],
    client: &dyn VlmClient,
    store: &ReviewStore,
    options: &PipelineOptions,
) -> PipelineReport {
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<(usize, Outcome)>> = Mutex::new(Vec::with_capacity(sources.len()));
    let workers = options.concurrency.clamp(1, sources.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(source) = sources.get(i) else {
                    break;
                };
                let id = &source.sample.sample_id;
                let outcome = if store.get(id).is_ok() {
                    Outcome::Existing(id.clone())
                } else {
                    process(source, client, store, options).unwrap_or_else(|e| {
                        log::warn!("{id}: {e}");
                        Outcome::Failed(SampleFailure {
                            sample_id: id.clone(),
                            error: e.to_string(),
                        })
                    })
                };
                outcomes.lock().unwrap().push((i, outcome));
            });
        }
    });

    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by_key(|(i, _)| *i);
    let mut report = PipelineReport::default();
    for (_, outcome) in outcomes {
        match outcome {
            Outcome::Enqueued { id, flagged } => {
                if flagged {
                    report.flagged.push(id.clone());
                }
                report.enqueued.push(id);
            }
            Outcome::Existing(id) => report.existing.push(id),
            Outcome::Failed(f) => report.failures.push(f),
        }
    }
    report
}
