#![allow(dead_code)]

use std::path::Path;

use aura_core::io::{write_png, SampleRecord};
use aura_core::synth::{generate_sample, SceneConfig};
use aura_core::Conversation;
use aura_review::{CrossVerdict, Policy, ReviewDecision, ReviewPayload, ReviewStore};

pub const A: &str = "ann-a";
pub const B: &str = "ann-b";
pub const C: &str = "ann-c";

/// A synthetic sample whose image is written under `dir`.
pub fn payload(dir: &Path, seed: u64) -> ReviewPayload {
    let mut sample = generate_sample(&SceneConfig::default(), seed).unwrap();
    sample.sample_id = format!("rec-{seed:03}");
    let image_path = dir.join(format!("{}.png", sample.sample_id));
    write_png(&image_path, &sample.image).unwrap();
    ReviewPayload {
        sample: SampleRecord::from_sample(&sample),
        image_path,
        issues: Vec::new(),
    }
}

/// A valid single-item revision of `p`.
pub fn revision(p: &ReviewPayload) -> Vec<Conversation> {
    let target = p.sample.objects[0].id.clone();
    vec![Conversation {
        question: "Which shape is in front?".into(),
        answer: "It is the shape [SEG].".into(),
        target_ids: vec![target],
    }]
}

/// Drives a fresh record through claim, approve and one cross-check.
pub fn finalize(store: &ReviewStore, id: &str) {
    let r = store.claim(id, A, None).unwrap();
    let r = store.submit_review(id, A, ReviewDecision::Approve, r.version).unwrap();
    store.cross_check(id, B, CrossVerdict::Approve, r.version).unwrap();
}

pub fn fixed_clock_store() -> ReviewStore {
    ReviewStore::in_memory(Policy::default()).with_clock(|| 1_700_000_000_000)
}
