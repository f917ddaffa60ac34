mod common;

use common::{cep_trace_discrepancies, random_fact, random_rule, test_places};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sitestream_core::cep::{parse_rule, CepEngine, EngineConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_matches_brute_force(seed in any::<u64>(), facts in 1usize..80, window in 1usize..40) {
        prop_assert_eq!(cep_trace_discrepancies(seed, facts, window), 0);
    }

    #[test]
    fn rule_text_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rule = random_rule(&mut rng, "composite");
        let text = rule.to_string();
        prop_assert_eq!(parse_rule(&text).unwrap(), rule, "{}", text);
    }

    #[test]
    fn window_never_exceeds_capacity(seed in any::<u64>(), window in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut engine = CepEngine::new(EngineConfig { window, ..EngineConfig::default() }, vec![], test_places());
        for id in 1..60 {
            let evicted = engine.assert_fact(random_fact(&mut rng, id));
            prop_assert!(engine.window().len() <= window);
            if id as usize > window {
                prop_assert_eq!(evicted.unwrap().id, id - window as u64);
            }
        }
    }
}
