//! Dataset directory format.
//!
//! ```text
//! DIR/manifest.json      schema tag, version, sample count, records checksum, free-form meta
//! DIR/records.jsonl      one JSON sample record per line, LF-terminated
//! DIR/images/<id>.png    8-bit RGB, one per sample
//! ```
//!
//! Masks are stored as row-major run lengths starting with a background run.
//! Spatial maps are derived on load; rates and boxes are stored and checked.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::build_spatial_map;
use crate::mask::{BoxPx, Rle};
use crate::sample::{Conversation, ObjectId, RgbImage, SceneSample, SegTarget};
use crate::validate::validate_sample;
use crate::{CoreError, Result};

pub const SCHEMA: &str = "aura.dataset";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: u32,
    pub sample_count: usize,
    pub records: String,
    pub records_bytes: u64,
    pub records_crc32: u32,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub visible_rle: Vec<u32>,
    pub amodal_rle: Vec<u32>,
    pub occlusion_rate: f64,
    pub visible_box: Option<BoxPx>,
    pub amodal_box: BoxPx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image: String,
    pub height: usize,
    pub width: usize,
    pub depth_order: Vec<ObjectId>,
    pub objects: Vec<ObjectRecord>,
    pub conversations: Vec<Conversation>,
}

impl SampleRecord {
    pub fn from_sample(sample: &SceneSample) -> Self {
        let (height, width) = sample.dims();
        Self {
            sample_id: sample.sample_id.clone(),
            image: image_rel_path(&sample.sample_id),
            height,
            width,
            depth_order: sample.depth_order.clone(),
            objects: sample
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id.clone(),
                    category: o.category.clone(),
                    color: o.color.clone(),
                    visible_rle: o.visible_mask.to_rle().counts,
                    amodal_rle: o.amodal_mask.to_rle().counts,
                    occlusion_rate: o.occlusion_rate,
                    visible_box: o.visible_box,
                    amodal_box: o.amodal_box,
                })
                .collect(),
            conversations: sample.conversations.clone(),
        }
    }

    /// Rebuilds the sample around an already-loaded image.
    pub fn into_sample(self, image: RgbImage) -> Result<SceneSample> {
        let mut objects = Vec::with_capacity(self.objects.len());
        for o in self.objects {
            let decode = |counts: Vec<u32>| {
                Rle {
                    height: self.height,
                    width: self.width,
                    counts,
                }
                .decode()
            };
            let visible_mask = decode(o.visible_rle)?;
            let amodal_mask = decode(o.amodal_rle)?;
            let spatial_map = build_spatial_map(&visible_mask, &amodal_mask)?;
            objects.push(SegTarget {
                id: o.id,
                category: o.category,
                color: o.color,
                visible_mask,
                amodal_mask,
                occlusion_rate: o.occlusion_rate,
                spatial_map,
                visible_box: o.visible_box,
                amodal_box: o.amodal_box,
            });
        }
        Ok(SceneSample {
            sample_id: self.sample_id,
            image,
            objects,
            conversations: self.conversations,
            depth_order: self.depth_order,
        })
    }
}

fn image_rel_path(sample_id: &str) -> String {
    format!("{IMAGE_DIR}/{sample_id}.png")
}

fn check_sample_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(CoreError::Config(format!(
            "sample id {id:?} must be non-empty ASCII [A-Za-z0-9._-] and not start with '.'"
        )))
    }
}

pub fn save_dataset(samples: &[SceneSample], dir: &Path) -> Result<Manifest> {
    save_dataset_with_meta(samples, dir, serde_json::Value::Null)
}

/// Writes `samples` under `dir`, replacing any previous dataset files there.
pub fn save_dataset_with_meta(
    samples: &[SceneSample],
    dir: &Path,
    meta: serde_json::Value,
) -> Result<Manifest> {
    let mut records = Vec::new();
    for s in samples {
        check_sample_id(&s.sample_id)?;
        let report = validate_sample(s);
        if !report.is_valid() {
            return Err(CoreError::Validation(report));
        }
        let mut line = serde_json::to_vec(&SampleRecord::from_sample(s)).map_err(|e| {
            CoreError::Config(format!("cannot serialize sample {}: {e}", s.sample_id))
        })?;
        line.push(b'\n');
        records.extend_from_slice(&line);
    }

    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| CoreError::io(&image_dir, e))?;
    for s in samples {
        let path = dir.join(image_rel_path(&s.sample_id));
        write_png(&path, &s.image)?;
    }
    let records_path = dir.join(RECORDS_FILE);
    fs::write(&records_path, &records).map_err(|e| CoreError::io(&records_path, e))?;

    let manifest = Manifest {
        schema: SCHEMA.into(),
        version: FORMAT_VERSION,
        sample_count: samples.len(),
        records: RECORDS_FILE.into(),
        records_bytes: records.len() as u64,
        records_crc32: crc32fast::hash(&records),
        meta,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    let mut f = fs::File::create(&manifest_path).map_err(|e| CoreError::io(&manifest_path, e))?;
    f.write_all(&text).map_err(|e| CoreError::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| CoreError::Format {
        offset: line_col_offset(&bytes, e.line(), e.column()),
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.schema != SCHEMA || manifest.version != FORMAT_VERSION {
        return Err(CoreError::Format {
            path,
            offset: 0,
            message: format!(
                "unsupported schema {} v{} (expected {SCHEMA} v{FORMAT_VERSION})",
                manifest.schema, manifest.version
            ),
        });
    }
    Ok(manifest)
}

/// Loads and validates every sample. Any corruption fails the whole load.
pub fn load_dataset(dir: &Path) -> Result<Vec<SceneSample>> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(&manifest.records);
    let bytes = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
    let format_err = |offset: u64, message: String| CoreError::Format {
        path: path.clone(),
        offset,
        message,
    };
    if (bytes.len() as u64) < manifest.records_bytes {
        return Err(format_err(
            bytes.len() as u64,
            format!(
                "records truncated: {} of {} bytes present",
                bytes.len(),
                manifest.records_bytes
            ),
        ));
    }
    if bytes.len() as u64 > manifest.records_bytes {
        return Err(format_err(
            manifest.records_bytes,
            format!("{} unexpected trailing bytes", bytes.len() as u64 - manifest.records_bytes),
        ));
    }
    if crc32fast::hash(&bytes) != manifest.records_crc32 {
        return Err(format_err(0, "records checksum mismatch".into()));
    }

    let mut samples = Vec::with_capacity(manifest.sample_count);
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let Some(len) = rest.iter().position(|&b| b == b'\n') else {
            return Err(format_err(offset as u64, "record is not newline-terminated".into()));
        };
        let line = &rest[..len];
        let record: SampleRecord = serde_json::from_slice(line).map_err(|e| {
            format_err(
                offset as u64 + line_col_offset(line, e.line(), e.column()),
                e.to_string(),
            )
        })?;
        check_sample_id(&record.sample_id)
            .map_err(|e| format_err(offset as u64, e.to_string()))?;
        let image_path = dir.join(&record.image);
        let image = read_png(&image_path)?;
        if image.dims() != (record.height, record.width) {
            return Err(format_err(
                offset as u64,
                format!(
                    "image {} is {:?}, record says {:?}",
                    record.image,
                    image.dims(),
                    (record.height, record.width)
                ),
            ));
        }
        let sample = record
            .into_sample(image)
            .map_err(|e| format_err(offset as u64, e.to_string()))?;
        let report = validate_sample(&sample);
        if !report.is_valid() {
            return Err(CoreError::Validation(report));
        }
        samples.push(sample);
        offset += len + 1;
    }
    if samples.len() != manifest.sample_count {
        return Err(format_err(
            bytes.len() as u64,
            format!(
                "manifest declares {} samples, records hold {}",
                manifest.sample_count,
                samples.len()
            ),
        ));
    }
    Ok(samples)
}

pub(crate) fn line_col_offset(bytes: &[u8], line: usize, column: usize) -> u64 {
    let mut offset = 0usize;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1).min(l.len())) as u64;
        }
        offset += l.len() + 1;
    }
    bytes.len() as u64
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.raw().to_vec())
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| CoreError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    read_image(path)
}

/// Reads any supported image file and converts it to 8-bit RGB.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| CoreError::Image {
        path: PathBuf::from(path),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::new(h as usize, w as usize, rgb.into_raw())
}
