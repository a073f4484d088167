#![allow(dead_code)]

use aura_core::synth::{compose_scene, generate_sample, ColorName, PlacedShape, SceneConfig, Shape};
use aura_core::{Conversation, SceneSample};
use aura_model::{build_vocab, AuraModel, ModelConfig};

/// Five overlapping rectangles on a 64x64 canvas, front to back.
pub fn five_object_scene() -> SceneSample {
    let colors = [
        ColorName::Red,
        ColorName::Blue,
        ColorName::Green,
        ColorName::Yellow,
        ColorName::Purple,
    ];
    let shapes: Vec<PlacedShape> = colors
        .iter()
        .enumerate()
        .map(|(i, &color)| {
            let o = 6.0 + 8.0 * i as f64;
            PlacedShape {
                shape: Shape::Rectangle {
                    x0: o,
                    y0: o,
                    x1: o + 18.0,
                    y1: o + 18.0,
                },
                color,
            }
        })
        .collect();
    compose_scene("five", 64, &shapes, 3).unwrap()
}

/// A conversation whose answer names the first `k` objects, one `[SEG]` each.
pub fn conversation_with_segs(sample: &SceneSample, k: usize) -> Conversation {
    let names: Vec<String> = sample.objects[..k]
        .iter()
        .map(|o| format!("the {}[SEG]", o.descriptor()))
        .collect();
    let answer = if k == 0 {
        "There is nothing to segment.".to_string()
    } else {
        format!("Here are {}.", names.join(" and "))
    };
    Conversation {
        question: "Which shapes are there?".into(),
        answer,
        target_ids: sample.objects[..k].iter().map(|o| o.id.clone()).collect(),
    }
}

pub fn scene_with_all_conversations() -> SceneSample {
    let mut s = five_object_scene();
    s.conversations = [0, 1, 2, 3, 5].iter().map(|&k| conversation_with_segs(&s, k)).collect();
    s
}

pub fn synthetic(n: usize) -> Vec<SceneSample> {
    let cfg = SceneConfig::default();
    (0..n as u64).map(|i| generate_sample(&cfg, i).unwrap()).collect()
}

pub fn model_for(samples: &[SceneSample], config: ModelConfig) -> AuraModel {
    AuraModel::new(config, build_vocab(samples)).unwrap()
}
