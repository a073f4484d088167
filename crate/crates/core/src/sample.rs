//! Scene samples: image, per-object targets and conversations.

use serde::{Deserialize, Serialize};

use crate::geometry::{build_spatial_map, compute_occlusion_rate};
use crate::mask::{BinaryMask, BoxPx, SpatialMap};
use crate::{CoreError, Result};

pub type ObjectId = String;

/// 8-bit RGB image, row-major, channel-interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.height, self.width)
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(CoreError::InvalidGeometry(format!(
                "{} bytes cannot form a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, height * width).flatten().collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first `3 x H x W` values in `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = f64::from(px[c]) / 255.0;
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.put_pixel(y, x, self.pixel(y, self.width - 1 - x));
            }
        }
        out
    }
}

/// Ground truth for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct SegTarget {
    pub id: ObjectId,
    pub category: String,
    /// Optional color word used by generated text ("red").
    pub color: Option<String>,
    pub visible_mask: BinaryMask,
    pub amodal_mask: BinaryMask,
    pub occlusion_rate: f64,
    pub spatial_map: SpatialMap,
    /// `None` when the object is fully hidden.
    pub visible_box: Option<BoxPx>,
    pub amodal_box: BoxPx,
}

impl SegTarget {
    /// Builds a target and derives rate, spatial map and boxes from the masks.
    pub fn new(
        id: impl Into<ObjectId>,
        category: impl Into<String>,
        color: Option<String>,
        visible_mask: BinaryMask,
        amodal_mask: BinaryMask,
    ) -> Result<Self> {
        let occlusion_rate = compute_occlusion_rate(&visible_mask, &amodal_mask)?;
        let spatial_map = build_spatial_map(&visible_mask, &amodal_mask)?;
        let amodal_box = amodal_mask
            .bounding_box()
            .ok_or_else(|| CoreError::InvalidGeometry("amodal mask is empty".into()))?;
        Ok(Self {
            id: id.into(),
            category: category.into(),
            color,
            visible_box: visible_mask.bounding_box(),
            visible_mask,
            amodal_mask,
            occlusion_rate,
            spatial_map,
            amodal_box,
        })
    }

    /// Short noun phrase, e.g. "red ellipse", or the bare category.
    pub fn descriptor(&self) -> String {
        match &self.color {
            Some(c) => format!("{c} {}", self.category),
            None => self.category.clone(),
        }
    }
}

/// One question with an answer whose `[SEG]` markers refer, in order, to
/// `target_ids`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conversation {
    pub question: String,
    pub answer: String,
    pub target_ids: Vec<ObjectId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub sample_id: String,
    pub image: RgbImage,
    pub objects: Vec<SegTarget>,
    pub conversations: Vec<Conversation>,
    /// Object ids, front to back.
    pub depth_order: Vec<ObjectId>,
}

impl SceneSample {
    pub fn object(&self, id: &str) -> Option<&SegTarget> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Total number of `[SEG]` targets over all conversations.
    pub fn target_count(&self) -> usize {
        self.conversations.iter().map(|c| c.target_ids.len()).sum()
    }
}

/// `occluder` is nearer than `occludee` and is the front-most shape on
/// `pixels` pixels of the occludee's amodal extent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionPair {
    pub occluder: ObjectId,
    pub occludee: ObjectId,
    pub pixels: usize,
}

impl SceneSample {
    /// Direct occlusion relations, ordered by occludee then occluder depth.
    pub fn occlusion_pairs(&self) -> Vec<OcclusionPair> {
        let ordered: Vec<&SegTarget> = self
            .depth_order
            .iter()
            .filter_map(|id| self.object(id))
            .collect();
        let mut out = Vec::new();
        for (i, back) in ordered.iter().enumerate() {
            for front in &ordered[..i] {
                let pixels = back.amodal_mask.intersection_count(&front.visible_mask);
                if pixels > 0 {
                    out.push(OcclusionPair {
                        occluder: front.id.clone(),
                        occludee: back.id.clone(),
                        pixels,
                    });
                }
            }
        }
        out
    }
}
