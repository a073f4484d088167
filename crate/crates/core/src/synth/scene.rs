use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ColorName, SceneConfig, ShapeKind};
use super::templates::{default_templates, generate_conversations};
use crate::mask::BinaryMask;
use crate::sample::{RgbImage, SceneSample, SegTarget};
use crate::{CoreError, Result};

/// Analytic shape in pixel coordinates (x right, y down).
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Rectangle { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Triangle { vertices: [(f64, f64); 3] },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Rectangle { .. } => ShapeKind::Rectangle,
            Shape::Ellipse { .. } => ShapeKind::Ellipse,
            Shape::Triangle { .. } => ShapeKind::Triangle,
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Rectangle { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (px - cx) / rx;
                let dy = (py - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Shape::Triangle { vertices: [a, b, c] } => {
                let edge = |p: (f64, f64), q: (f64, f64)| (q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0);
                let (d1, d2, d3) = (edge(a, b), edge(b, c), edge(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }

    /// Full extent sampled at pixel centers.
    pub fn rasterize(&self, height: usize, width: usize) -> BinaryMask {
        BinaryMask::from_fn(height, width, |y, x| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacedShape {
    pub shape: Shape,
    pub color: ColorName,
}

/// Builds a sample from shapes listed front to back. Object `i` is `obj{i}`
/// in listing order. Fails when a shape has no pixel inside the canvas.
pub fn compose_scene(
    sample_id: &str,
    size: usize,
    shapes: &[PlacedShape],
    background_seed: u64,
) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(background_seed);
    let mut image = background(size, &mut rng);
    let amodal: Vec<BinaryMask> = shapes.iter().map(|s| s.shape.rasterize(size, size)).collect();

    let mut covered = BinaryMask::new(size, size);
    let mut objects = Vec::with_capacity(shapes.len());
    for (i, (placed, full)) in shapes.iter().zip(&amodal).enumerate() {
        let visible = full.minus(&covered);
        covered.or_assign(full);
        let id = format!("obj{i}");
        let target = SegTarget::new(
            id.clone(),
            placed.shape.kind().name(),
            Some(placed.color.name().to_string()),
            visible,
            full.clone(),
        )
        .map_err(|e| CoreError::Generation(format!("object {id}: {e}")))?;
        objects.push(target);
    }

    // Paint back to front so nearer shapes overwrite farther ones.
    for (placed, obj) in shapes.iter().zip(&objects).rev() {
        let base = placed.color.rgb();
        for y in 0..size {
            for x in 0..size {
                if obj.amodal_mask.get(y, x) {
                    let jitter: i16 = rng.random_range(-10..=10);
                    image.put_pixel(y, x, base.map(|c| (i16::from(c) + jitter).clamp(0, 255) as u8));
                }
            }
        }
    }

    Ok(SceneSample {
        sample_id: sample_id.to_string(),
        image,
        depth_order: objects.iter().map(|o| o.id.clone()).collect(),
        objects,
        conversations: Vec::new(),
    })
}

/// Seeded grey gradient with per-pixel noise.
fn background(size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let lo: f64 = rng.random_range(35.0..80.0);
    let hi: f64 = rng.random_range(90.0..150.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tint: [f64; 3] = [
        rng.random_range(-12.0..12.0),
        rng.random_range(-12.0..12.0),
        rng.random_range(-12.0..12.0),
    ];
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = RgbImage::filled(size, size, [0, 0, 0]);
    let span = size as f64;
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 / span - 0.5) * ca + (y as f64 / span - 0.5) * sa) / std::f64::consts::SQRT_2 + 0.5;
            let level = lo + (hi - lo) * u;
            let noise: f64 = rng.random_range(-22.0..22.0);
            let px = tint.map(|t| (level + t + noise).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(y, x, px);
        }
    }
    img
}

fn random_shape(kind: ShapeKind, size: usize, rng: &mut ChaCha8Rng) -> Shape {
    let s = size as f64;
    let half = |rng: &mut ChaCha8Rng| rng.random_range(0.12 * s..0.3 * s);
    match kind {
        ShapeKind::Rectangle => {
            let (hw, hh) = (half(rng), half(rng));
            let cx = rng.random_range(hw..s - hw);
            let cy = rng.random_range(hh..s - hh);
            Shape::Rectangle {
                x0: (cx - hw).round(),
                y0: (cy - hh).round(),
                x1: (cx + hw).round(),
                y1: (cy + hh).round(),
            }
        }
        ShapeKind::Ellipse => {
            let (rx, ry) = (half(rng), half(rng));
            Shape::Ellipse {
                cx: rng.random_range(rx..s - rx),
                cy: rng.random_range(ry..s - ry),
                rx,
                ry,
            }
        }
        ShapeKind::Triangle => {
            let r = rng.random_range(0.18 * s..0.36 * s);
            let cx = rng.random_range(r..s - r);
            let cy = rng.random_range(r..s - r);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let vertices = std::array::from_fn(|k| {
                let jitter: f64 = rng.random_range(-0.35..0.35);
                let a = phase + k as f64 * std::f64::consts::TAU / 3.0 + jitter;
                (cx + r * a.cos(), cy + r * a.sin())
            });
            Shape::Triangle { vertices }
        }
    }
}

/// Shapes, colors and depth order drawn from `seed`; retried until the
/// scene satisfies the config's size, visibility and rate-band constraints.
/// The returned sample has no conversations.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SceneSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.image_size;
    let mut pairs: Vec<(ShapeKind, ColorName)> = Vec::new();
    for &s in &config.shapes {
        for &c in &config.colors {
            if !pairs.contains(&(s, c)) {
                pairs.push((s, c));
            }
        }
    }

    for _ in 0..config.max_attempts {
        let n = rng.random_range(config.min_objects..=config.max_objects);
        let chosen: Vec<(ShapeKind, ColorName)> =
            pairs.choose_multiple(&mut rng, n).copied().collect();
        let shapes: Vec<PlacedShape> = chosen
            .iter()
            .map(|&(kind, color)| PlacedShape {
                shape: random_shape(kind, size, &mut rng),
                color,
            })
            .collect();
        let background_seed: u64 = rng.random();

        if shapes
            .iter()
            .any(|p| p.shape.rasterize(size, size).count() < config.min_object_pixels)
        {
            continue;
        }
        let sample = compose_scene(&format!("scene-{seed}"), size, &shapes, background_seed)?;
        let visible_ok = sample
            .objects
            .iter()
            .all(|o| 1.0 - o.occlusion_rate >= config.min_visible_fraction);
        let in_band = sample
            .objects
            .iter()
            .any(|o| o.occlusion_rate >= config.rate_min && o.occlusion_rate <= config.rate_max);
        if visible_ok && in_band {
            return Ok(sample);
        }
    }
    Err(CoreError::Generation(format!(
        "no valid scene for seed {seed} after {} attempts; widen the rate band [{}, {}], \
         lower min_visible_fraction or raise max_attempts",
        config.max_attempts, config.rate_min, config.rate_max
    )))
}

/// Scene plus `config.conversations_per_scene` templated conversations.
pub fn generate_sample(config: &SceneConfig, seed: u64) -> Result<SceneSample> {
    let mut sample = generate_scene(config, seed)?;
    let batch = generate_conversations(
        &sample,
        &default_templates(),
        config.conversations_per_scene,
        seed ^ 0x5eed_c0de,
    );
    for w in &batch.warnings {
        log::warn!("{}: {w}", sample.sample_id);
    }
    sample.conversations = batch.conversations;
    Ok(sample)
}
