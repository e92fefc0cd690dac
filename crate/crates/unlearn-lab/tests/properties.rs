//! Property tests for the structural invariants: wire-format round trips
//! over arbitrary strings, metric bounds, and schedule slicing.

use proptest::prelude::*;

use unlearn_lab::corpus::{
    corpus_to_jsonl, levenshtein, normalized_similarity, read_corpus, CorpusBundle, NeighborKind,
    QAPair,
};
use unlearn_lab::metrics::{distinct_n, rouge_l};
use unlearn_lab::scheduler::{batch_schedule, build_schedule, SamplingStrategy, StrategyKind};

fn qa(id: String, entity: String, kind: NeighborKind, q: String, a: String) -> QAPair {
    QAPair {
        id,
        entity_id: entity,
        question: q,
        answer: a,
        neighbor_kind: kind,
    }
}

/// Arbitrary non-empty text, including control characters and non-ASCII,
/// to exercise JSON escaping in the JSONL wire format.
fn text() -> impl Strategy<Value = String> {
    any::<String>().prop_map(|s| format!("x{s}"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn corpus_jsonl_round_trip_is_identity(
        texts in proptest::collection::vec((text(), text(), text()), 1..8),
        n_general in 0usize..3,
    ) {
        let mut forget = Vec::new();
        let mut retain = Vec::new();
        for (i, (entity, q, a)) in texts.iter().enumerate() {
            forget.push(qa(format!("f{i}"), entity.clone(), NeighborKind::Forget, q.clone(), a.clone()));
            retain.push(qa(format!("r{i}"), entity.clone(), NeighborKind::Direct, a.clone(), q.clone()));
        }
        for g in 0..n_general {
            retain.push(qa(format!("g{g}"), "general".into(), NeighborKind::General,
                           texts[0].1.clone(), texts[0].2.clone()));
        }
        let bundle = CorpusBundle::new(forget, retain, Vec::new()).unwrap();
        let jsonl = corpus_to_jsonl(&bundle).unwrap();
        let back = read_corpus(jsonl.as_bytes()).unwrap();
        prop_assert_eq!(&back, &bundle);
        prop_assert_eq!(corpus_to_jsonl(&back).unwrap(), jsonl);
    }

    #[test]
    fn levenshtein_is_symmetric_and_similarity_bounded(a in ".{0,24}", b in ".{0,24}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        let s = normalized_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(normalized_similarity(&a, &a), 1.0);
    }

    #[test]
    fn rouge_is_bounded_and_exact_on_equal_length_iff_identical(
        gen in proptest::collection::vec(0u8..6, 1..12),
        reference in proptest::collection::vec(0u8..6, 1..12),
    ) {
        let f = rouge_l(&gen, &reference).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(rouge_l(&gen, &gen).unwrap(), 1.0);
        if gen.len() == reference.len() && (f - 1.0).abs() < 1e-12 {
            prop_assert_eq!(&gen, &reference);
        }
    }

    #[test]
    fn duplicating_generations_never_raises_distinct_n(
        gens in proptest::collection::vec(proptest::collection::vec(0u8..5, 0..10), 0..6),
        n in 1usize..4,
    ) {
        let base = distinct_n(&gens, n).unwrap();
        let doubled: Vec<Vec<u8>> = gens.iter().chain(gens.iter()).cloned().collect();
        prop_assert!(distinct_n(&doubled, n).unwrap() <= base + 1e-12);
    }

    #[test]
    fn batching_reproduces_any_schedule(
        n_forget in 1usize..6,
        n_retain in 1usize..20,
        epochs in 1usize..4,
        batch_size in 1usize..10,
        seed in any::<u64>(),
    ) {
        let forget: Vec<QAPair> = (0..n_forget)
            .map(|i| qa(format!("f{i}"), format!("e{}", i % 3), NeighborKind::Forget,
                        "q".into(), "a".into()))
            .collect();
        let retain: Vec<QAPair> = (0..n_retain)
            .map(|i| qa(format!("r{i}"), "general".into(), NeighborKind::General,
                        "q".into(), "a".into()))
            .collect();
        for kind in [StrategyKind::Cyclic, StrategyKind::Melu] {
            let schedule = build_schedule(SamplingStrategy { kind, seed }, &forget, &retain, epochs)
                .unwrap();
            let plan = batch_schedule(&schedule, batch_size).unwrap();
            // Concatenating the batches in order reproduces the schedule,
            // and every batch except an epoch's last is full.
            let mut rebuilt: Vec<Vec<_>> = vec![Vec::new(); epochs];
            for batch in &plan.batches {
                rebuilt[batch.epoch].extend(batch.pairs.iter().cloned());
            }
            prop_assert_eq!(&rebuilt, &schedule.epochs);
            let mut seen_epoch = usize::MAX;
            for pair in plan.batches.windows(2) {
                if pair[0].epoch == pair[1].epoch {
                    prop_assert_eq!(pair[0].pairs.len(), batch_size);
                }
                seen_epoch = pair[0].epoch;
            }
            let _ = seen_epoch;
        }
    }

    #[test]
    fn schedules_are_reproducible_for_any_seed(seed in any::<u64>(), epochs in 1usize..4) {
        let forget: Vec<QAPair> = (0..4)
            .map(|i| qa(format!("f{i}"), format!("e{i}"), NeighborKind::Forget, "q".into(), "a".into()))
            .collect();
        let retain: Vec<QAPair> = (0..9)
            .map(|i| qa(format!("r{i}"), format!("e{}", i % 4), NeighborKind::Direct, "q".into(), "a".into()))
            .collect();
        for kind in [
            StrategyKind::OneToOneSeq,
            StrategyKind::OneToOneRandom,
            StrategyKind::Cyclic,
            StrategyKind::Melu,
        ] {
            let s = SamplingStrategy { kind, seed };
            let a = build_schedule(s, &forget, &retain, epochs).unwrap();
            let b = build_schedule(s, &forget, &retain, epochs).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
