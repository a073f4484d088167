//! Adapter for COCOA-style amodal annotation files.
//!
//! ```json
//! {
//!   "images": [{"id": 1, "file_name": "kitchen.png", "width": 64, "height": 48}],
//!   "annotations": [{
//!     "id": 7, "image_id": 1, "category": "cup", "depth": 0,
//!     "visible": {"polygons": [[x0, y0, x1, y1, ...]]},
//!     "amodal":  {"rle": {"size": [48, 64], "counts": [120, 6, ...]}}
//!   }]
//! }
//! ```
//!
//! Polygon coordinates are in pixels; a pixel belongs to a polygon when its
//! center `(x + 0.5, y + 0.5)` is inside by the even-odd rule, and several
//! polygons of one region are unioned. Run lengths follow the dataset
//! format: row-major, alternating, starting with a background run. Lower
//! `depth` is nearer to the camera.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::io::{line_col_offset, read_image};
use crate::mask::{BinaryMask, Rle};
use crate::sample::{SceneSample, SegTarget};
use crate::validate::validate_sample;
use crate::{CoreError, Result};

#[derive(Debug, Deserialize)]
struct AnnotationFile {
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Deserialize)]
struct ImageEntry {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Deserialize)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    category: String,
    depth: i64,
    visible: Region,
    amodal: Region,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Polygons(Vec<Vec<f64>>),
    Rle(RleRegion),
}

#[derive(Debug, Clone, Deserialize)]
pub struct RleRegion {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl Region {
    pub fn decode(&self, height: usize, width: usize) -> Result<BinaryMask> {
        match self {
            Region::Rle(r) => {
                if r.size != [height, width] {
                    return Err(CoreError::InvalidGeometry(format!(
                        "rle size {:?} differs from image size [{height}, {width}]",
                        r.size
                    )));
                }
                Rle {
                    height,
                    width,
                    counts: r.counts.clone(),
                }
                .decode()
            }
            Region::Polygons(polys) => {
                let mut mask = BinaryMask::new(height, width);
                for poly in polys {
                    if poly.len() < 6 || poly.len() % 2 != 0 || poly.iter().any(|v| !v.is_finite()) {
                        return Err(CoreError::InvalidGeometry(format!(
                            "polygon needs an even number (>= 6) of finite coordinates, got {}",
                            poly.len()
                        )));
                    }
                    let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|c| (c[0], c[1])).collect();
                    mask.or_assign(&rasterize_polygon(&pts, height, width));
                }
                Ok(mask)
            }
        }
    }
}

/// Even-odd fill sampled at pixel centers.
pub fn rasterize_polygon(points: &[(f64, f64)], height: usize, width: usize) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut inside = false;
        let mut j = points.len() - 1;
        for i in 0..points.len() {
            let (xi, yi) = points[i];
            let (xj, yj) = points[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedImage {
    pub image_id: u64,
    pub file_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectError {
    pub image_id: u64,
    pub annotation_id: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct CocoaLoad {
    pub samples: Vec<SceneSample>,
    pub skipped: Vec<SkippedImage>,
    pub object_errors: Vec<ObjectError>,
}

pub fn sample_id_for(image_id: u64) -> String {
    format!("cocoa-{image_id}")
}

pub fn object_id_for(annotation_id: u64) -> String {
    format!("ann{annotation_id}")
}

/// Loads every image of the annotation file. Missing or unreadable images
/// are skipped with a record; undecodable regions drop only their object.
pub fn load_cocoa_style(annotation_path: &Path, image_dir: &Path) -> Result<CocoaLoad> {
    let bytes = std::fs::read(annotation_path).map_err(|e| CoreError::io(annotation_path, e))?;
    let file: AnnotationFile = serde_json::from_slice(&bytes).map_err(|e| CoreError::Format {
        path: annotation_path.to_path_buf(),
        offset: line_col_offset(&bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let mut by_image: BTreeMap<u64, Vec<&AnnotationEntry>> = BTreeMap::new();
    for a in &file.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }

    let mut out = CocoaLoad::default();
    for img in &file.images {
        let path = image_dir.join(&img.file_name);
        let image = match read_image(&path) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("skipping image {}: {e}", img.file_name);
                out.skipped.push(SkippedImage {
                    image_id: img.id,
                    file_name: img.file_name.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if image.dims() != (img.height, img.width) {
            out.skipped.push(SkippedImage {
                image_id: img.id,
                file_name: img.file_name.clone(),
                reason: format!(
                    "image is {:?}, annotation says {:?}",
                    image.dims(),
                    (img.height, img.width)
                ),
            });
            continue;
        }

        let mut anns = by_image.remove(&img.id).unwrap_or_default();
        anns.sort_by_key(|a| (a.depth, a.id));
        let mut objects = Vec::new();
        for a in anns {
            let target = a
                .visible
                .decode(img.height, img.width)
                .and_then(|v| Ok((v, a.amodal.decode(img.height, img.width)?)))
                .and_then(|(v, am)| {
                    SegTarget::new(object_id_for(a.id), a.category.clone(), None, v, am)
                });
            match target {
                Ok(t) => objects.push(t),
                Err(e) => out.object_errors.push(ObjectError {
                    image_id: img.id,
                    annotation_id: a.id,
                    message: e.to_string(),
                }),
            }
        }
        let sample = SceneSample {
            sample_id: sample_id_for(img.id),
            image,
            depth_order: objects.iter().map(|o| o.id.clone()).collect(),
            objects,
            conversations: Vec::new(),
        };
        let report = validate_sample(&sample);
        if report.is_valid() {
            out.samples.push(sample);
        } else {
            out.skipped.push(SkippedImage {
                image_id: img.id,
                file_name: img.file_name.clone(),
                reason: report.to_string(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_polygon_covers_centers() {
        let m = rasterize_polygon(&[(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0)], 5, 5);
        assert_eq!(m.count(), 4);
        assert!(m.get(1, 1) && m.get(2, 2) && !m.get(0, 0) && !m.get(3, 3));
    }

    #[test]
    fn self_overlapping_polygon_uses_even_odd() {
        // Two windings over the same square cancel out.
        let pts = [
            (0.0, 0.0),
            (4.0, 0.0),
            (4.0, 4.0),
            (0.0, 4.0),
            (0.0, 0.0),
            (4.0, 0.0),
            (4.0, 4.0),
            (0.0, 4.0),
        ];
        assert_eq!(rasterize_polygon(&pts, 4, 4).count(), 0);
    }
}
