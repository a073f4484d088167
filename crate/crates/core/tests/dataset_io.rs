use aura_core::io::{load_dataset, load_manifest, save_dataset, RECORDS_FILE};
use aura_core::synth::{generate_sample, SceneConfig};
use aura_core::{CoreError, SceneSample};

fn sample(seed: u64) -> SceneSample {
    generate_sample(&SceneConfig::default(), seed).unwrap()
}

#[test]
fn empty_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&[], dir.path()).unwrap();
    assert_eq!(manifest.sample_count, 0);
    assert_eq!(manifest.records_bytes, 0);
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn two_objects_three_conversations_round_trip() {
    let mut s = (0..)
        .map(sample)
        .find(|s| s.objects.len() == 2 && s.conversations.len() >= 3)
        .unwrap();
    s.conversations.truncate(3);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(std::slice::from_ref(&s), dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, vec![s]);
}

#[test]
fn many_samples_round_trip_bit_exact() {
    let samples: Vec<SceneSample> = (0..6).map(sample).collect();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&samples, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in loaded.iter().zip(&samples) {
        assert_eq!(a, b);
        for (oa, ob) in a.objects.iter().zip(&b.objects) {
            assert_eq!(oa.occlusion_rate.to_bits(), ob.occlusion_rate.to_bits());
        }
    }
}

#[test]
fn truncated_records_fail_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&[sample(1), sample(2)], dir.path()).unwrap();
    let path = dir.path().join(RECORDS_FILE);
    let bytes = std::fs::read(&path).unwrap();
    let cut = bytes.len() - bytes.len() / 3;
    std::fs::write(&path, &bytes[..cut]).unwrap();
    match load_dataset(dir.path()) {
        Err(CoreError::Format { offset, .. }) => assert_eq!(offset, cut as u64),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn corrupted_byte_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&[sample(3)], dir.path()).unwrap();
    let path = dir.path().join(RECORDS_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[10] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(CoreError::Format { .. })));
}

#[test]
fn invalid_sample_is_rejected_on_save() {
    let mut s = sample(4);
    s.conversations[0].target_ids.push("obj0".into());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(save_dataset(&[s], dir.path()), Err(CoreError::Validation(_))));
}

#[test]
fn manifest_is_schema_tagged() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&[sample(5)], dir.path()).unwrap();
    let m = load_manifest(dir.path()).unwrap();
    assert_eq!(m.schema, "aura.dataset");
    assert_eq!(m.version, 1);
    assert_eq!(m.sample_count, 1);
}
