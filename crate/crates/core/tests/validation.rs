use aura_core::synth::{generate_sample, SceneConfig};
use aura_core::{validate_sample, BinaryMask, SceneSample, Violation};

fn base() -> SceneSample {
    let cfg = SceneConfig {
        min_objects: 3,
        max_objects: 3,
        ..SceneConfig::default()
    };
    let s = generate_sample(&cfg, 21).unwrap();
    assert!(validate_sample(&s).is_valid(), "{}", validate_sample(&s));
    s
}

fn single(sample: &SceneSample) -> Violation {
    let report = validate_sample(sample);
    assert_eq!(report.violations.len(), 1, "{report}");
    report.violations[0].clone()
}

#[test]
fn generated_sample_is_valid() {
    for seed in 0..20 {
        let s = generate_sample(&SceneConfig::default(), seed).unwrap();
        assert!(validate_sample(&s).is_valid());
    }
}

#[test]
fn seg_count_mismatch_cites_conversation() {
    let mut s = base();
    s.conversations[1].answer = "The cup[SEG] and plate[SEG].".into();
    s.conversations[1].target_ids.truncate(1);
    assert!(matches!(
        single(&s),
        Violation::SegCountMismatch { conversation: 1, seg_tokens: 2, targets: 1 }
    ));
}

#[test]
fn visible_outside_amodal_names_object() {
    let mut s = base();
    // Pick a background pixel so no other invariant breaks except the
    // derived quantities, which are then recomputed from the damaged masks.
    let (h, w) = s.dims();
    let (y, x) = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .find(|&(y, x)| s.objects.iter().all(|o| !o.amodal_mask.get(y, x)))
        .unwrap();
    let o = &mut s.objects[0];
    o.visible_mask.set(y, x, true);
    o.visible_box = o.visible_mask.bounding_box();
    let report = validate_sample(&s);
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::VisibleOutsideAmodal { object, pixels: 1 } if object == "obj0")));
}

#[test]
fn each_injected_violation_is_caught() {
    type Mutation = fn(&mut SceneSample);
    let mutations: Vec<(&str, Mutation)> = vec![
        ("rate", |s| s.objects[0].occlusion_rate += 0.01),
        ("spatial", |s| {
            let o = &mut s.objects[0];
            let (h, w) = o.amodal_mask.dims();
            let mut v = o.spatial_map.values().to_vec();
            v[0] = if v[0] == 0 { 2 } else { 0 };
            o.spatial_map = aura_core::SpatialMap::from_values(h, w, v).unwrap();
        }),
        ("amodal box", |s| s.objects[1].amodal_box.x1 += 1),
        ("visible box", |s| s.objects[1].visible_box = None),
        ("empty amodal", |s| {
            let o = &mut s.objects[2];
            let (h, w) = o.amodal_mask.dims();
            o.amodal_mask = BinaryMask::new(h, w);
        }),
        ("duplicate id", |s| {
            let id = s.objects[0].id.clone();
            s.objects[1].id = id;
        }),
        ("depth missing", |s| {
            s.depth_order.pop();
        }),
        ("depth repeated", |s| {
            let first = s.depth_order[0].clone();
            s.depth_order.push(first);
        }),
        ("unknown target", |s| s.conversations[0].target_ids[0] = "ghost".into()),
        ("no targets", |s| {
            s.conversations[0].answer = "Nothing.".into();
            s.conversations[0].target_ids.clear();
        }),
        ("overlap", |s| {
            let front = s.objects[0].visible_mask.clone();
            let o = &mut s.objects[1];
            o.visible_mask.or_assign(&front);
            o.amodal_mask.or_assign(&front);
        }),
        ("mask shape", |s| s.objects[0].visible_mask = BinaryMask::new(3, 3)),
    ];
    for (name, mutate) in mutations {
        let mut s = base();
        mutate(&mut s);
        assert!(!validate_sample(&s).is_valid(), "mutation {name} not caught");
    }
}

#[test]
fn validation_never_mutates() {
    let s = base();
    let copy = s.clone();
    let _ = validate_sample(&s);
    assert_eq!(s, copy);
}
