//! Invariant checks over scene samples. Violations are data, never panics.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::geometry::build_spatial_map;
use crate::sample::{Conversation, SceneSample};
use crate::text::count_seg;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ImageShape { expected: (usize, usize), found: (usize, usize) },
    MaskShape { object: String, expected: (usize, usize), found: (usize, usize) },
    EmptyAmodal { object: String },
    VisibleOutsideAmodal { object: String, pixels: usize },
    RateMismatch { object: String, stored: f64, derived: f64 },
    SpatialMapMismatch { object: String },
    BoxMismatch { object: String, which: &'static str },
    DuplicateObject { object: String },
    VisibleOverlap { first: String, second: String, pixels: usize },
    DepthOrder { detail: String },
    SegCountMismatch { conversation: usize, seg_tokens: usize, targets: usize },
    NoTargets { conversation: usize },
    UnknownTarget { conversation: usize, target: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ImageShape { expected, found } => {
                write!(f, "image is {found:?}, masks are {expected:?}")
            }
            Self::MaskShape { object, expected, found } => {
                write!(f, "object {object}: mask is {found:?}, expected {expected:?}")
            }
            Self::EmptyAmodal { object } => write!(f, "object {object}: amodal mask is empty"),
            Self::VisibleOutsideAmodal { object, pixels } => write!(
                f,
                "object {object}: {pixels} visible pixels lie outside the amodal mask"
            ),
            Self::RateMismatch { object, stored, derived } => write!(
                f,
                "object {object}: occlusion rate {stored} differs from derived {derived}"
            ),
            Self::SpatialMapMismatch { object } => {
                write!(f, "object {object}: spatial map disagrees with its masks")
            }
            Self::BoxMismatch { object, which } => {
                write!(f, "object {object}: {which} box is not the tight box of its mask")
            }
            Self::DuplicateObject { object } => write!(f, "object id {object} is duplicated"),
            Self::VisibleOverlap { first, second, pixels } => write!(
                f,
                "visible masks of {first} and {second} share {pixels} pixels"
            ),
            Self::DepthOrder { detail } => write!(f, "depth order: {detail}"),
            Self::SegCountMismatch { conversation, seg_tokens, targets } => write!(
                f,
                "conversation {conversation}: {seg_tokens} [SEG] tokens but {targets} targets"
            ),
            Self::NoTargets { conversation } => {
                write!(f, "conversation {conversation}: answer references no object")
            }
            Self::UnknownTarget { conversation, target } => write!(
                f,
                "conversation {conversation}: target {target} is not an object of the sample"
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub sample_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sample {}: ", self.sample_id)?;
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_sample(sample: &SceneSample) -> ValidationReport {
    let mut out = Vec::new();
    let dims = sample
        .objects
        .first()
        .map(|o| o.amodal_mask.dims())
        .unwrap_or_else(|| sample.image.dims());
    if sample.image.dims() != dims {
        out.push(Violation::ImageShape {
            expected: dims,
            found: sample.image.dims(),
        });
    }

    let mut seen = HashSet::new();
    for obj in &sample.objects {
        let id = obj.id.clone();
        if !seen.insert(obj.id.as_str()) {
            out.push(Violation::DuplicateObject { object: id.clone() });
        }
        let mut shaped = true;
        for found in [obj.visible_mask.dims(), obj.amodal_mask.dims(), obj.spatial_map.dims()] {
            if found != dims {
                out.push(Violation::MaskShape {
                    object: id.clone(),
                    expected: dims,
                    found,
                });
                shaped = false;
            }
        }
        if !shaped {
            continue;
        }
        let amodal_px = obj.amodal_mask.count();
        if amodal_px == 0 {
            out.push(Violation::EmptyAmodal { object: id.clone() });
        }
        let outside = obj.visible_mask.count_outside(&obj.amodal_mask);
        if outside > 0 {
            out.push(Violation::VisibleOutsideAmodal {
                object: id.clone(),
                pixels: outside,
            });
        }
        if amodal_px > 0 {
            let derived = 1.0 - obj.visible_mask.count() as f64 / amodal_px as f64;
            if !((obj.occlusion_rate - derived).abs() <= 1e-9) {
                out.push(Violation::RateMismatch {
                    object: id.clone(),
                    stored: obj.occlusion_rate,
                    derived,
                });
            }
        }
        if outside == 0 {
            let expected = build_spatial_map(&obj.visible_mask, &obj.amodal_mask);
            if expected.as_ref().ok() != Some(&obj.spatial_map) {
                out.push(Violation::SpatialMapMismatch { object: id.clone() });
            }
        }
        if obj.visible_box != obj.visible_mask.bounding_box() {
            out.push(Violation::BoxMismatch {
                object: id.clone(),
                which: "visible",
            });
        }
        if Some(obj.amodal_box) != obj.amodal_mask.bounding_box() {
            out.push(Violation::BoxMismatch {
                object: id,
                which: "amodal",
            });
        }
    }

    for (i, a) in sample.objects.iter().enumerate() {
        for b in &sample.objects[i + 1..] {
            if a.visible_mask.dims() != b.visible_mask.dims() {
                continue;
            }
            let shared = a.visible_mask.intersection_count(&b.visible_mask);
            if shared > 0 {
                out.push(Violation::VisibleOverlap {
                    first: a.id.clone(),
                    second: b.id.clone(),
                    pixels: shared,
                });
            }
        }
    }

    check_depth_order(sample, &mut out);
    for (i, conv) in sample.conversations.iter().enumerate() {
        check_conversation(i, conv, |id| sample.object(id).is_some(), &mut out);
    }

    ValidationReport {
        sample_id: sample.sample_id.clone(),
        violations: out,
    }
}

fn check_depth_order(sample: &SceneSample, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for id in &sample.depth_order {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DepthOrder {
                detail: format!("{id} listed more than once"),
            });
        } else if sample.object(id).is_none() {
            out.push(Violation::DepthOrder {
                detail: format!("{id} is not an object of the sample"),
            });
        }
    }
    for obj in &sample.objects {
        if !seen.contains(obj.id.as_str()) {
            out.push(Violation::DepthOrder {
                detail: format!("{} is missing", obj.id),
            });
        }
    }
}

/// Checks `[SEG]` alignment and target resolution for one conversation.
pub fn check_conversation(
    index: usize,
    conv: &Conversation,
    resolves: impl Fn(&str) -> bool,
    out: &mut Vec<Violation>,
) {
    let seg_tokens = count_seg(&conv.answer);
    if seg_tokens != conv.target_ids.len() {
        out.push(Violation::SegCountMismatch {
            conversation: index,
            seg_tokens,
            targets: conv.target_ids.len(),
        });
    }
    if conv.target_ids.is_empty() {
        out.push(Violation::NoTargets { conversation: index });
    }
    for t in &conv.target_ids {
        if !resolves(t) {
            out.push(Violation::UnknownTarget {
                conversation: index,
                target: t.clone(),
            });
        }
    }
}
