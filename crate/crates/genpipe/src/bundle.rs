use std::path::PathBuf;

use aura_core::{BoxPx, SceneSample};
use serde::{Deserialize, Serialize};

use crate::{GenError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: String,
    pub category: String,
    pub color: Option<String>,
    pub visible_box: Option<BoxPx>,
    pub amodal_box: BoxPx,
    pub occlusion_rate: f64,
}

impl ObjectAnnotation {
    /// "red circle", or just the category when uncoloured.
    pub fn label(&self) -> String {
        match &self.color {
            Some(c) => format!("{c} {}", self.category),
            None => self.category.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionRelation {
    pub occluder: String,
    pub occludee: String,
    pub pixels: usize,
}

/// Everything the generator is told about one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotationBundle {
    pub sample_id: String,
    pub image_ref: PathBuf,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectAnnotation>,
    /// Direct occlusions, from the depth order.
    pub relations: Vec<OcclusionRelation>,
}

impl ObjectAnnotationBundle {
    pub fn from_sample(sample: &SceneSample, image_ref: PathBuf) -> Self {
        let (height, width) = sample.dims();
        Self {
            sample_id: sample.sample_id.clone(),
            image_ref,
            height,
            width,
            objects: sample
                .objects
                .iter()
                .map(|o| ObjectAnnotation {
                    id: o.id.clone(),
                    category: o.category.clone(),
                    color: o.color.clone(),
                    visible_box: o.visible_box,
                    amodal_box: o.amodal_box,
                    occlusion_rate: o.occlusion_rate,
                })
                .collect(),
            relations: sample
                .occlusion_pairs()
                .into_iter()
                .map(|p| OcclusionRelation {
                    occluder: p.occluder,
                    occludee: p.occludee,
                    pixels: p.pixels,
                })
                .collect(),
        }
    }

    pub fn object(&self, id: &str) -> Option<&ObjectAnnotation> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.objects {
            if !(0.0..=1.0).contains(&o.occlusion_rate) {
                return Err(GenError::Bundle(format!(
                    "object {} has occlusion rate {}",
                    o.id, o.occlusion_rate
                )));
            }
        }
        for r in &self.relations {
            for id in [&r.occluder, &r.occludee] {
                if self.object(id).is_none() {
                    return Err(GenError::Bundle(format!("relation references unknown object {id}")));
                }
            }
            if r.occluder == r.occludee {
                return Err(GenError::Bundle(format!("object {} occludes itself", r.occluder)));
            }
        }
        Ok(())
    }
}
