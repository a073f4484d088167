mod common;

use std::fs;
use std::io::Write;

use aura_core::io::{load_dataset, RECORDS_FILE};
use aura_core::validate_sample;
use aura_review::store::{LOG_FILE, SNAPSHOT_FILE};
use aura_review::{export_finalized, CrossVerdict, Policy, ReviewDecision, ReviewRecord, ReviewStore};
use common::*;

#[test]
fn reopen_recovers_every_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("store");
    let before = {
        let store = ReviewStore::open(&data, Policy::default()).unwrap().with_snapshot_every(3);
        for seed in 0..4 {
            store.enqueue(payload(dir.path(), seed)).unwrap();
        }
        finalize(&store, "rec-000");
        let r = store.claim("rec-001", B, None).unwrap();
        store
            .submit_review("rec-001", B, ReviewDecision::Approve, r.version)
            .unwrap();
        store.claim("rec-002", C, None).unwrap();
        store.list(None)
    };
    assert!(data.join(SNAPSHOT_FILE).exists());
    let store = ReviewStore::open(&data, Policy::default()).unwrap();
    assert_eq!(store.list(None), before);

    // Without a snapshot the log alone is enough.
    fs::remove_file(data.join(SNAPSHOT_FILE)).unwrap();
    let store = ReviewStore::open(&data, Policy::default()).unwrap();
    assert_eq!(store.list(None), before);
}

#[test]
fn torn_final_log_line_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("store");
    let before = {
        let store = ReviewStore::open(&data, Policy::default()).unwrap();
        store.enqueue(payload(dir.path(), 1)).unwrap();
        store.claim("rec-001", A, None).unwrap();
        store.list(None)
    };
    let mut log = fs::OpenOptions::new().append(true).open(data.join(LOG_FILE)).unwrap();
    log.write_all(b"{\"kind\":\"event\",\"record_id\":\"rec-0").unwrap();
    drop(log);
    let store = ReviewStore::open(&data, Policy::default()).unwrap();
    assert_eq!(store.list(None), before);
}

#[test]
fn history_replay_reproduces_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixed_clock_store();
    let p = payload(dir.path(), 5);
    let items = revision(&p);
    store.enqueue(p.clone()).unwrap();
    let id = "rec-005";
    let r = store.claim(id, A, None).unwrap();
    let r = store.submit_review(id, A, ReviewDecision::Approve, r.version).unwrap();
    store
        .cross_check(id, B, CrossVerdict::Dispute { reason: "wrong object".into() }, r.version)
        .unwrap();
    let r = store.claim(id, C, None).unwrap();
    store
        .submit_review(id, C, ReviewDecision::Revise { items }, r.version)
        .unwrap();
    let r = store.claim(id, A, None).unwrap();
    let r = store.cross_check(id, A, CrossVerdict::Approve, r.version).unwrap();
    let r = store.cross_check(id, B, CrossVerdict::Approve, r.version).unwrap();
    assert_eq!(r.state.as_str(), "finalized");
    assert_eq!(ReviewRecord::replay(p, &r.history).unwrap(), *r);
}

#[test]
fn export_contains_only_finalized_samples_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixed_clock_store();

    let empty = dir.path().join("empty");
    assert_eq!(export_finalized(&store, &empty).unwrap().sample_count, 0);
    assert!(load_dataset(&empty).unwrap().is_empty());

    for seed in 0..3 {
        store.enqueue(payload(dir.path(), seed)).unwrap();
    }
    finalize(&store, "rec-002");
    finalize(&store, "rec-000");
    store.claim("rec-001", A, None).unwrap();

    let out = dir.path().join("export");
    export_finalized(&store, &out).unwrap();
    let samples = load_dataset(&out).unwrap();
    let ids: Vec<_> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids, ["rec-000", "rec-002"]);
    assert!(samples.iter().all(|s| validate_sample(s).is_valid()));

    let first = fs::read(out.join(RECORDS_FILE)).unwrap();
    let again = dir.path().join("export2");
    export_finalized(&store, &again).unwrap();
    assert_eq!(fs::read(again.join(RECORDS_FILE)).unwrap(), first);
    assert_eq!(
        fs::read(again.join("manifest.json")).unwrap(),
        fs::read(out.join("manifest.json")).unwrap()
    );
    assert_eq!(
        fs::read(again.join("images/rec-000.png")).unwrap(),
        fs::read(out.join("images/rec-000.png")).unwrap()
    );
}
