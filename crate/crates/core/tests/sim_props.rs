mod common;

use common::smart_filter_day;
use proptest::prelude::*;
use sitestream_core::model::Timestamp;
use sitestream_core::sim::{coffee_step, smart_filter, CoffeeConfig, CoffeeEvent, CoffeeInputs, CoffeeState, FilterPolicy};

fn inputs() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    proptest::collection::vec(
        (
            prop_oneof![Just(0.0), 0.3f64..3.0],
            prop_oneof![Just(0.0), 0.0f64..200.0],
            prop_oneof![Just(0.0), 0.0f64..1000.0],
        ),
        1..200,
    )
}

proptest! {
    #[test]
    fn coffee_mass_balance(seq in inputs()) {
        let cfg = CoffeeConfig::default();
        let mut s = CoffeeState::new(&cfg);
        let mut removals = 0;
        let mut present = false;
        for (i, &(weight, grinder_w, brewer_w)) in seq.iter().enumerate() {
            let (next, events) = coffee_step(&s, &cfg, CoffeeInputs { weight, grinder_w, brewer_w }, &Timestamp::from_secs(i as u64));
            s = next;
            removals += events.iter().filter(|e| **e == CoffeeEvent::PotRemoved).count();
            let now_present = weight >= cfg.removed_below_kg;
            if present && !now_present {
                removals -= 1;
            }
            present = now_present;
            // what left the pot never exceeds what arrived, up to the empty-pot slack
            prop_assert!(s.dispensed_kg <= s.filled_kg + cfg.pot_mass_kg - cfg.removed_below_kg + 1e-9);
            prop_assert!(s.filled_kg >= 0.0 && s.dispensed_kg >= 0.0);
        }
        prop_assert_eq!(removals, 0);
    }

    #[test]
    fn smart_filter_keeps_samples_and_heartbeats(values in proptest::collection::vec(0.0f64..10.0, 1..500), deadband in 0.0f64..3.0, interval in 1.0f64..100.0) {
        let samples: Vec<(Timestamp, f64)> = values.iter().enumerate().map(|(i, v)| (Timestamp::from_secs(i as u64), *v)).collect();
        let out = smart_filter(&samples, &FilterPolicy { deadband, min_interval_secs: interval, alert: None });
        prop_assert_eq!(&out[0].t, &samples[0].0);
        // every emission is an actual sample, in order
        for e in &out {
            let i = e.t.seconds() as usize;
            prop_assert_eq!(values[i], e.value);
        }
        prop_assert!(out.windows(2).all(|w| w[0].t < w[1].t));
        // silence never outlasts the heartbeat interval by more than one sample
        let mut last = 0.0;
        for (t, _) in &samples {
            let t = t.seconds() as f64;
            if let Some(e) = out.iter().find(|e| e.t.seconds() as f64 == t) {
                last = e.t.seconds() as f64;
            }
            prop_assert!(t - last <= interval.ceil());
        }
        // between emissions nothing strayed beyond the deadband
        for w in out.windows(2) {
            let (a, b) = (w[0].t.seconds() as usize, w[1].t.seconds() as usize);
            prop_assert!(values[a + 1..b].iter().all(|v| (v - w[0].value).abs() <= deadband));
        }
    }
}

#[test]
fn filtered_day_keeps_every_event() {
    for seed in 0..5 {
        let d = smart_filter_day(seed);
        assert_eq!(d.missed, 0, "{d:?}");
        assert!(d.raw / d.emitted >= 500, "{d:?}");
    }
}
