mod common;

use arena_core::store::{Provenance, Store, StoreError, UpsertOutcome};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn scripted_correction_is_visible_only_from_its_write_time() {
    let mut store = Store::in_memory();
    let s = series_id(0);
    let t = event_time(5);
    let (t1, t2, t3) = (tx_time(10), tx_time(20), tx_time(30));
    assert_eq!(store.upsert_at(&s, t, 100.0, Provenance::new("p", "e", t1), t1).unwrap(), UpsertOutcome::Inserted);
    assert_eq!(store.upsert_at(&s, t, 105.0, Provenance::new("p", "e", t3), t3).unwrap(), UpsertOutcome::Superseded);
    let at = |tx| store.as_of(&s, t, t, tx).unwrap().points;
    assert_eq!(at(t2), vec![(t, 100.0)]);
    assert_eq!(at(t3), vec![(t, 105.0)]);
    assert_eq!(at(tx_time(9)), vec![]);
    let history = store.history(&s, t);
    assert_eq!(history.len(), 2);
    assert_eq!(history[0].valid_to, Some(t3));
    assert_eq!(history[1].valid_from, t3);
}

#[test]
fn identical_value_is_a_noop() {
    let mut store = Store::in_memory();
    let s = series_id(0);
    let t = event_time(1);
    store.upsert_at(&s, t, 0.1 + 0.2, Provenance::new("p", "e", tx_time(1)), tx_time(1)).unwrap();
    let again = store.upsert_at(&s, t, 0.1 + 0.2, Provenance::new("p", "e", tx_time(2)), tx_time(2)).unwrap();
    assert_eq!(again, UpsertOutcome::Noop);
    assert_eq!(store.rows().len(), 1);
}

#[test]
fn regressing_transaction_time_is_rejected() {
    let mut store = Store::in_memory();
    let s = series_id(0);
    let t = event_time(1);
    store.upsert_at(&s, t, 1.0, Provenance::new("p", "e", tx_time(10)), tx_time(10)).unwrap();
    let err = store.upsert_at(&s, t, 2.0, Provenance::new("p", "e", tx_time(5)), tx_time(5)).unwrap_err();
    assert!(matches!(err, StoreError::ClockRegression { .. }));
    assert!(matches!(
        store.upsert_at(&s, t, f64::NAN, Provenance::new("p", "e", tx_time(11)), tx_time(11)),
        Err(StoreError::NonFinite(_))
    ));
}

#[test]
fn random_schedules_match_replay_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5cd2);
    let mut checked = 0;
    for _ in 0..500 {
        let ops = random_schedule(&mut rng);
        let mut store = Store::in_memory();
        apply_schedule(&mut store, &ops);
        checked += compare_with_oracle(&store, &ops).unwrap();
    }
    assert!(checked > 10_000);
}

#[test]
fn log_replay_reconstructs_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..25 {
        let path = dir.path().join(format!("log-{i}.jsonl"));
        let ops = random_schedule(&mut rng);
        {
            let mut store = Store::open(&path, None).unwrap();
            apply_schedule(&mut store, &ops);
            store.commit().unwrap();
        }
        let mut reopened = Store::open(&path, None).unwrap();
        apply_schedule(&mut reopened, &[]);
        compare_with_oracle(&reopened, &ops).unwrap();
    }
}

#[test]
fn replayed_values_keep_their_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bits.jsonl");
    let values = [0.1 + 0.2, 1.0 / 3.0, 96.39812347236621, 5e-324, 1.7976931348623157e308];
    {
        let mut store = Store::open(&path, None).unwrap();
        for (i, v) in values.iter().enumerate() {
            let tx = tx_time(i as i64 + 1);
            store
                .upsert_at(&series_id(0), event_time(i as i64), *v, Provenance::new("p", "e", tx), tx)
                .unwrap();
        }
        store.commit().unwrap();
    }
    let mut store = Store::open(&path, None).unwrap();
    let view = store.as_of(&series_id(0), event_time(0), event_time(10), tx_time(100)).unwrap();
    let bits: Vec<u64> = view.points.iter().map(|(_, v)| v.to_bits()).collect();
    assert_eq!(bits, values.map(f64::to_bits));
    // Re-ingesting the same values after replay must not create versions.
    for (i, v) in values.iter().enumerate() {
        let tx = tx_time(200);
        let out = store
            .upsert_at(&series_id(0), event_time(i as i64), *v, Provenance::new("p", "e", tx), tx)
            .unwrap();
        assert_eq!(out, UpsertOutcome::Noop);
    }
}

#[test]
fn later_writes_never_change_earlier_views() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let ops = random_schedule(&mut rng);
        let cut = ops.len() / 2;
        let mut partial = Store::in_memory();
        apply_schedule(&mut partial, &ops[..cut]);
        let mut full = Store::in_memory();
        apply_schedule(&mut full, &ops);
        let tx = if cut == 0 { 0 } else { ops[cut - 1].tx_minute };
        for s in 0..3 {
            let a = partial.as_of(&series_id(s), event_time(0), event_time(7), tx_time(tx)).unwrap();
            let b = full.as_of(&series_id(s), event_time(0), event_time(7), tx_time(tx)).unwrap();
            assert_eq!(a.points, b.points);
        }
    }
}
