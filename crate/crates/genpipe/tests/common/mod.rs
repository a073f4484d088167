#![allow(dead_code)]

use std::path::{Path, PathBuf};

use aura_core::io::write_png;
use aura_core::synth::{compose_scene, generate_sample, ColorName, PlacedShape, SceneConfig, Shape};
use aura_core::{Conversation, SceneSample};
use aura_genpipe::{ObjectAnnotationBundle, SourceSample};

/// A red ellipse in front of a blue rectangle.
pub fn two_objects() -> SceneSample {
    let shapes = [
        PlacedShape {
            shape: Shape::Ellipse {
                cx: 20.0,
                cy: 20.0,
                rx: 10.0,
                ry: 10.0,
            },
            color: ColorName::Red,
        },
        PlacedShape {
            shape: Shape::Rectangle {
                x0: 18.0,
                y0: 18.0,
                x1: 44.0,
                y1: 44.0,
            },
            color: ColorName::Blue,
        },
    ];
    compose_scene("pair", 64, &shapes, 1).unwrap()
}

pub fn bundle_of(sample: &SceneSample) -> ObjectAnnotationBundle {
    ObjectAnnotationBundle::from_sample(sample, PathBuf::from(format!("{}.png", sample.sample_id)))
}

pub fn sources(dir: &Path, n: u64) -> Vec<SourceSample> {
    (0..n)
        .map(|seed| {
            let mut sample = generate_sample(&SceneConfig::default(), seed).unwrap();
            sample.sample_id = format!("gen-{seed}");
            let image_path = dir.join(format!("{}.png", sample.sample_id));
            write_png(&image_path, &sample.image).unwrap();
            SourceSample { sample, image_path }
        })
        .collect()
}

/// `n` valid items about the objects of `sample`.
pub fn valid_items(sample: &SceneSample, n: usize) -> Vec<Conversation> {
    (0..n)
        .map(|i| {
            let o = &sample.objects[i % sample.objects.len()];
            Conversation {
                question: format!("Question {i}: where is the {}?", o.category),
                answer: format!("The {} [SEG] is there.", o.category),
                target_ids: vec![o.id.clone()],
            }
        })
        .collect()
}
