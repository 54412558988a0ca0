use std::sync::Arc;

use osb_core::clickme::*;
use osb_core::{Error, Image};

fn bars() -> Vec<PoolImage> {
    let mut out = Vec::new();
    for (cat, horizontal) in [("horizontal", true), ("vertical", false)] {
        for k in 0..3 {
            let mut img = Image::blank(256, 256);
            for a in 0..256 {
                for b in 100 + 10 * k..130 + 10 * k {
                    if horizontal {
                        img.set(a, b, 1.0);
                    } else {
                        img.set(b, a, 1.0);
                    }
                }
            }
            out.push(PoolImage {
                image_id: format!("{cat}-{k}"),
                category: cat.into(),
                image: Arc::new(img),
            });
        }
    }
    out
}

fn classifier(pool: &[PoolImage]) -> Arc<dyn MaskedClassifier> {
    let classes: Vec<(String, Vec<Image>)> = ["horizontal", "vertical"]
        .iter()
        .map(|c| {
            (
                c.to_string(),
                pool.iter().filter(|p| p.category == *c).map(|p| (*p.image).clone()).collect(),
            )
        })
        .collect();
    Arc::new(PrototypeMaskedClassifier::new(PixelEmbedder { size: 16 }, &classes, 0.5).unwrap())
}

fn service(dir: &std::path::Path, config: ClickMeConfig) -> (GameService, ManualClock) {
    let pool = bars();
    let clock = ManualClock::new(1_000_000);
    let svc = GameService::new(
        config,
        pool.clone(),
        classifier(&pool),
        AnnotationStore::open(dir).unwrap(),
        Arc::new(clock.clone()),
    )
    .unwrap();
    (svc, clock)
}

fn full_cover() -> StrokeBatch {
    let grid = || (0..256).step_by(20).chain([255]);
    let points = grid().flat_map(|y| grid().map(move |x| [x, y])).collect();
    StrokeBatch {
        batch_id: Some("full".into()),
        strokes: vec![BrushStroke { points, client_ts: 0 }],
    }
}

#[test]
fn full_reveal_wins_and_persists_map() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, clock) = service(dir.path(), ClickMeConfig::default());
    let s = svc.create_session(Some("alice".into()));
    let r = svc.start_round(&s.token).unwrap();
    assert_eq!(r.status, RoundStatus::Pending);
    assert_eq!(r.revealed(), 0);
    clock.advance(300);
    let out = svc.apply_strokes(&s.token, r.round_id, &full_cover()).unwrap();
    assert_eq!(out.status, RoundStatus::Won);
    assert_eq!(out.revealed, 256 * 256);
    assert_eq!(out.verdict.unwrap().label, r.category);
    // the timer starts with the first stroke, so the whole round duration remains
    assert_eq!(out.score, 5000 / 10);
    let recs = svc.store().records().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].participant_id, "alice");
    assert_eq!(svc.store().load_map(&recs[0]).unwrap().sum(), 65536.0);
    // idempotent resubmission, then rejection of new strokes on a finished round
    assert_eq!(svc.apply_strokes(&s.token, r.round_id, &full_cover()).unwrap().score, 500);
    let again = StrokeBatch { batch_id: None, ..full_cover() };
    assert!(matches!(svc.apply_strokes(&s.token, r.round_id, &again), Err(Error::State(_))));
}

#[test]
fn deadline_times_out_without_score() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, clock) = service(dir.path(), ClickMeConfig::default());
    let s = svc.create_session(None);
    let r = svc.start_round(&s.token).unwrap();
    let corner = StrokeBatch {
        batch_id: None,
        strokes: vec![BrushStroke { points: vec![[0, 0]], client_ts: 0 }],
    };
    let first = svc.apply_strokes(&s.token, r.round_id, &corner).unwrap();
    assert_eq!(first.status, RoundStatus::Active);
    assert_eq!(first.mask_delta.len(), 121);
    let active = svc.round(&s.token, r.round_id).unwrap();
    assert_eq!(active.deadline.unwrap() - active.started_at.unwrap(), 5000);
    clock.advance(5000);
    let late = svc.apply_strokes(&s.token, r.round_id, &full_cover()).unwrap();
    assert_eq!((late.status, late.score, late.revealed), (RoundStatus::TimedOut, 0, 121));
    // excluded from the store by default
    assert!(svc.store().records().unwrap().is_empty());
}

#[test]
fn timed_out_rounds_can_be_kept() {
    let dir = tempfile::tempdir().unwrap();
    let config = ClickMeConfig {
        include_timed_out: true,
        ..Default::default()
    };
    let (svc, clock) = service(dir.path(), config);
    let s = svc.create_session(None);
    let r = svc.start_round(&s.token).unwrap();
    let dot = StrokeBatch {
        batch_id: None,
        strokes: vec![BrushStroke { points: vec![[5, 250]], client_ts: 0 }],
    };
    svc.apply_strokes(&s.token, r.round_id, &dot).unwrap();
    clock.advance(6000);
    // asking for the next round expires the current one
    let next = svc.start_round(&s.token).unwrap();
    assert_ne!(next.round_id, r.round_id);
    let recs = svc.store().records().unwrap();
    assert_eq!((recs.len(), recs[0].status, recs[0].score), (1, RoundStatus::TimedOut, 0));
}

#[test]
fn skip_stores_nothing_and_pool_is_drawn_without_replacement() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _) = service(dir.path(), ClickMeConfig::default());
    let s = svc.create_session(None);
    let mut seen = Vec::new();
    for _ in 0..6 {
        let r = svc.start_round(&s.token).unwrap();
        seen.push(r.image_id.clone());
        assert_eq!(svc.skip(&s.token, r.round_id).unwrap().status, RoundStatus::Skipped);
    }
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 6);
    assert!(matches!(svc.start_round(&s.token), Err(Error::Insufficient(_))));
    assert!(svc.store().records().unwrap().is_empty());
}

#[test]
fn sessions_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _) = service(dir.path(), ClickMeConfig::default());
    let a = svc.create_session(None);
    let b = svc.create_session(None);
    assert_ne!(a.token, b.token);
    let ra = svc.start_round(&a.token).unwrap();
    let rb = svc.start_round(&b.token).unwrap();
    assert_ne!(ra.round_id, rb.round_id);
    assert!(matches!(svc.skip(&b.token, ra.round_id), Err(Error::NotFound(_))));
    svc.apply_strokes(&a.token, ra.round_id, &full_cover()).unwrap();
    assert_eq!(svc.round(&b.token, rb.round_id).unwrap().revealed(), 0);
}

#[test]
fn concurrent_sessions_from_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _) = service(dir.path(), ClickMeConfig::default());
    let svc = Arc::new(svc);
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let svc = svc.clone();
            std::thread::spawn(move || {
                let s = svc.create_session(Some(format!("p{i}")));
                let r = svc.start_round(&s.token).unwrap();
                svc.apply_strokes(&s.token, r.round_id, &full_cover()).unwrap();
                r.round_id
            })
        })
        .collect();
    let mut ids: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4);
    assert_eq!(svc.store().records().unwrap().len(), 4);
}

#[test]
fn aggregate_is_independent_of_storage_order() {
    let maps: Vec<Image> = (0..3)
        .map(|k| {
            let mut m = Image::blank(64, 64);
            for x in 0..20 {
                m.set(5 + 10 * k + x / 2, 10 + x, 1.0);
            }
            m
        })
        .collect();
    let store_in = |order: &[usize]| {
        let dir = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(dir.path()).unwrap();
        for &k in order {
            store
                .append(
                    &MapRecord {
                        participant_id: format!("p{k}"),
                        image_id: "img".into(),
                        category: "cat".into(),
                        round_id: k as u64 + 1,
                        status: RoundStatus::Won,
                        score: 1,
                        map_file: AnnotationStore::map_file_for(k as u64 + 1),
                    },
                    &maps[k],
                )
                .unwrap();
        }
        let m = aggregate_category_map(&store, "cat", 9, None).unwrap();
        (dir, m)
    };
    let (_d1, a) = store_in(&[0, 1, 2]);
    let (_d2, b) = store_in(&[2, 0, 1]);
    assert_eq!(a.grid, b.grid);
    assert!(aggregate_category_map(&AnnotationStore::open(_d1.path()).unwrap(), "dog", 9, None).is_err());
}

#[test]
fn blur_conserves_interior_mass() {
    let mut m = Image::blank(256, 256);
    for y in 100..140 {
        for x in 90..130 {
            m.set(x, y, 1.0);
        }
    }
    let b = osb_core::image::gaussian_blur(&m, 49, None).unwrap();
    assert!((b.sum() - m.sum()).abs() < 1e-6 * m.sum() + 1e-3);
    assert!(b.pixels().iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
}
