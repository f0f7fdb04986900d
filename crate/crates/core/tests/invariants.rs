use inquire_core::belief::{entropy, posterior_update, Belief, ToyCase};
use inquire_core::grader::GradeLabel;
use inquire_core::memory::{EvictionConfig, MemoryEntry, MemoryStore};
use inquire_core::metrics::running;
use proptest::prelude::*;

fn entry(i: usize, created: u32, retrieved: u32) -> MemoryEntry {
    MemoryEntry {
        id: format!("m_{i:06}"),
        context_before_action: format!("context {i}"),
        action: "AskQuestion: fever?".into(),
        outcome: "no".into(),
        grade: GradeLabel::LowYield,
        rationale: String::new(),
        created_episode: created,
        created_turn: 1,
        times_retrieved: retrieved,
        last_retrieved_episode: created,
    }
}

proptest! {
    #[test]
    fn running_mean_ends_at_overall_mean(values in prop::collection::vec(0u32..=100, 1..80)) {
        let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        let s = running(&xs);
        let overall = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert_eq!(s.mean[xs.len() - 1], overall);
        prop_assert!(s.se[0].is_none());
        prop_assert!(s.se[1..].iter().all(|se| se.is_some_and(|v| v >= 0.0)));
    }

    #[test]
    fn eviction_hits_budget_and_keeps_survivors_in_order(
        specs in prop::collection::vec((1u32..30, 0u32..5), 1..80),
        budget in 1usize..40,
    ) {
        let entries: Vec<MemoryEntry> = specs.iter().enumerate().map(|(i, &(c, r))| entry(i, c, r)).collect();
        let before: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
        let mut store = MemoryStore::from_entries(entries);
        let cfg = EvictionConfig { budget, ..Default::default() };
        let evicted = store.evict_to_budget(30, &cfg);
        prop_assert_eq!(store.len(), before.len().min(budget));
        prop_assert_eq!(evicted.len(), before.len().saturating_sub(budget));
        let kept: Vec<String> = store.entries().iter().map(|e| e.id.clone()).collect();
        let expected: Vec<String> = before.into_iter().filter(|id| !evicted.contains(id)).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn posterior_is_a_distribution(
        prior in prop::collection::vec(0.01f64..1.0, 2..6),
        hit in prop::collection::vec(0.01f64..0.99, 6),
    ) {
        let z: f64 = prior.iter().sum();
        let prior = Belief::new(prior.iter().map(|p| p / z).collect()).unwrap();
        let n = prior.len();
        let pos: Vec<f64> = hit[..n].to_vec();
        let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
        let case: ToyCase = serde_json::from_value(serde_json::json!({
            "diagnosis_set": (0..n).map(|i| format!("d{i}")).collect::<Vec<_>>(),
            "prior": prior.probabilities(),
            "likelihoods": {"test": {"pos": pos, "neg": neg}},
            "true_diagnosis": "d0",
            "costs": {"test": 1.0},
        })).unwrap();
        for outcome in ["pos", "neg"] {
            let post = posterior_update(&prior, "test", outcome, &case).unwrap();
            let sum: f64 = post.probabilities().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(entropy(&post) <= (n as f64).ln() + 1e-12);
        }
    }
}
