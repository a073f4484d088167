mod common;

use std::sync::{Arc, Barrier};
use std::thread;

use aura_review::{CrossVerdict, ReviewDecision, ReviewError, ReviewRecord, ReviewStore};
use common::*;

fn race<T: Send + 'static>(jobs: Vec<Box<dyn FnOnce() -> T + Send>>) -> Vec<T> {
    let barrier = Arc::new(Barrier::new(jobs.len()));
    let handles: Vec<_> = jobs
        .into_iter()
        .map(|job| {
            let barrier = barrier.clone();
            thread::spawn(move || {
                barrier.wait();
                job()
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

#[test]
fn concurrent_claims_have_exactly_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(fixed_clock_store());
    for seed in 0..50 {
        let id = store.enqueue(payload(dir.path(), seed)).unwrap().record().record_id.clone();
        let jobs = [A, B, C]
            .into_iter()
            .map(|who| {
                let (store, id) = (store.clone(), id.clone());
                Box::new(move || store.claim(&id, who, None)) as Box<dyn FnOnce() -> _ + Send>
            })
            .collect();
        let results: Vec<aura_review::Result<Arc<ReviewRecord>>> = race(jobs);
        let winners: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        assert_eq!(winners.len(), 1);
        assert!(results
            .iter()
            .filter_map(|r| r.as_ref().err())
            .all(|e| matches!(e, ReviewError::Conflict { .. })));
        let r = store.get(&id).unwrap();
        assert_eq!(r.version, 1);
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.assignments.reviewer, winners[0].assignments.reviewer);
    }
}

#[test]
fn conflicting_submissions_on_one_version_resolve_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let store: Arc<ReviewStore> = Arc::new(fixed_clock_store());
    for seed in 0..50 {
        let p = payload(dir.path(), 100 + seed);
        let items = revision(&p);
        let id = store.enqueue(p).unwrap().record().record_id.clone();
        let v = store.claim(&id, A, None).unwrap().version;
        let (s1, s2, id1, id2) = (store.clone(), store.clone(), id.clone(), id.clone());
        let results = race(vec![
            Box::new(move || s1.submit_review(&id1, A, ReviewDecision::Approve, v)),
            Box::new(move || s2.submit_review(&id2, A, ReviewDecision::Revise { items }, v)),
        ]);
        assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
        let r = store.get(&id).unwrap();
        assert_eq!(r.version, v + 1);

        if r.state.as_str() == "cross_check" {
            let (s1, s2, id1, id2) = (store.clone(), store.clone(), id.clone(), id.clone());
            let v = r.version;
            let results = race(vec![
                Box::new(move || s1.cross_check(&id1, B, CrossVerdict::Approve, v)),
                Box::new(move || {
                    s2.cross_check(
                        &id2,
                        C,
                        CrossVerdict::Dispute {
                            reason: "answer names the wrong colour".into(),
                        },
                        v,
                    )
                }),
            ]);
            assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
            assert_eq!(store.get(&id).unwrap().version, v + 1);
        }
    }
}
