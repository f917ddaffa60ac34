mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{filter_matches, interleaving_case, ring_model_check};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sitestream_core::broker::{bridge, BridgeConfig, BridgeDirection, Broker, TopicFilter, Topic};
use sitestream_core::model::SystemClock;
use sitestream_core::rts::EventBus;

fn level() -> impl Strategy<Value = String> {
    prop_oneof![Just("a".to_string()), Just("b".to_string()), Just("+".to_string()), Just("#".to_string())]
}

proptest! {
    #[test]
    fn filter_matching_agrees_with_recursion(f in proptest::collection::vec(level(), 1..4), t in proptest::collection::vec("[ab]", 1..4)) {
        let filter = f.join("/");
        let topic = t.join("/");
        // '#' is only valid as the last level
        let valid = !f[..f.len() - 1].iter().any(|l| l == "#");
        let parsed = TopicFilter::parse(&filter);
        prop_assert_eq!(parsed.is_ok(), valid);
        if let Ok(p) = parsed {
            prop_assert_eq!(p.matches(&Topic::parse(&topic).unwrap()), filter_matches(&filter, &topic));
        }
    }

    #[test]
    fn interleaved_publishers_exactly_once_in_order(seed in any::<u64>()) {
        prop_assert_eq!(interleaving_case(seed), 0);
    }
}

#[test]
fn ring_model_check_all_configurations() {
    assert_eq!(ring_model_check(), (4096, 0));
}

#[test]
fn threaded_publishers_keep_per_publisher_order() {
    let a = Broker::new("a");
    let b = Broker::new("b");
    let cfg = BridgeConfig { remote: "b".into(), filters: vec!["#".into()], direction: BridgeDirection::Both };
    let _h = bridge(&a, &b, &cfg).unwrap();
    let sub_a = a.subscribe("t/+").unwrap();
    let sub_b = b.subscribe("#").unwrap();
    let threads: Vec<_> = (0..4)
        .map(|p| {
            let broker = if p % 2 == 0 { a.clone() } else { b.clone() };
            std::thread::spawn(move || {
                for i in 0..200u32 {
                    broker.publish(&format!("t/{p}"), format!("{i}").into_bytes()).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    for sub in [sub_a, sub_b] {
        let mut per: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for m in sub.drain() {
            per.entry(m.topic.to_string()).or_default().push(String::from_utf8(m.payload.to_vec()).unwrap().parse().unwrap());
        }
        assert_eq!(per.len(), 4);
        for seq in per.values() {
            assert_eq!(seq, &(0..200).collect::<Vec<_>>());
        }
    }
}

#[test]
fn bus_delivers_each_address_in_sequence() {
    let bus = EventBus::new(Arc::new(SystemClock));
    let all = bus.subscribe(&["*"], 1 << 16).unwrap();
    let feed = bus.subscribe(&["feed.*"], 1 << 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let addrs = ["feed.a", "feed.b", "cep.atomic"];
    let mut sent: BTreeMap<&str, u64> = BTreeMap::new();
    for _ in 0..5000 {
        let a = *addrs.choose(&mut rng).unwrap();
        let seq = bus.publish(a, serde_json::json!(null)).unwrap();
        let n = sent.entry(a).or_default();
        *n += 1;
        assert_eq!(seq, *n);
    }
    let mut seen: BTreeMap<String, u64> = BTreeMap::new();
    for ev in all.drain() {
        let last = seen.entry(ev.address.clone()).or_default();
        assert_eq!(ev.seq, *last + 1);
        *last = ev.seq;
    }
    assert_eq!(seen.values().sum::<u64>(), 5000);
    let feed_count = feed.drain().len() as u64;
    assert_eq!(feed_count, sent["feed.a"] + sent["feed.b"]);
}
