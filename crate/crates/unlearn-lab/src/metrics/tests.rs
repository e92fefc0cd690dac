use super::*;
use crate::corpus::NeighborKind;
use crate::rng::SplitMix64;
use crate::seqmodel::tests::tiny_model;
use crate::seqmodel::{transformer::Layout, EOS};
use crate::testsupport::{memorize, mini_corpus, mini_vocab_model, qa};

// Full-table LCS, independent of the two-row implementation in rouge_l.
fn lcs_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

fn rouge_oracle<T: PartialEq>(generated: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_oracle(generated, reference);
    if lcs == 0 || generated.is_empty() {
        return 0.0;
    }
    let p = lcs as f64 / generated.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn scores(vals: &[(f64, f64, f64)]) -> Vec<SampleScores> {
    vals.iter()
        .enumerate()
        .map(|(i, &(r, p, c))| SampleScores {
            source_id: format!("s{i}"),
            entity: "e".into(),
            rouge_l: r,
            probability: p,
            cosine: c,
        })
        .collect()
}

#[test]
fn rouge_known_values() {
    let a: Vec<&str> = "the cat sat on mat".split(' ').collect();
    assert_eq!(rouge_l(&a, &a).unwrap(), 1.0);

    let gen: Vec<&str> = "the dog sat on rug".split(' ').collect();
    let f = rouge_l(&gen, &a).unwrap();
    assert!((f - 0.6).abs() < 1e-12, "{f}"); // LCS {the, sat, on} = 3, P = R = 3/5

    let disjoint: Vec<&str> = "x y z".split(' ').collect();
    assert_eq!(rouge_l(&disjoint, &a).unwrap(), 0.0);

    assert_eq!(rouge_l::<u32>(&[], &[1, 2]).unwrap(), 0.0);
    assert!(matches!(
        rouge_l::<u32>(&[1], &[]),
        Err(Error::EmptyArgument(_))
    ));
}

#[test]
fn rouge_matches_the_lcs_oracle_on_random_instances() {
    let mut rng = SplitMix64::new(400);
    for _ in 0..200 {
        let len_a = 1 + rng.next_below(12);
        let len_b = 1 + rng.next_below(12);
        let a: Vec<u64> = (0..len_a).map(|_| rng.next_below(6) as u64).collect();
        let b: Vec<u64> = (0..len_b).map(|_| rng.next_below(6) as u64).collect();
        let got = rouge_l(&a, &b).unwrap();
        let want = rouge_oracle(&a, &b);
        assert!(
            (got - want).abs() < 1e-12,
            "{a:?} vs {b:?}: {got} != {want}"
        );
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn cosine_known_values() {
    assert!((truncated_cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(truncated_cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    // Opposite vectors clamp to zero.
    assert_eq!(truncated_cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), 0.0);
    assert!(truncated_cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(truncated_cosine(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn forget_efficacy_known_values() {
    assert_eq!(
        forget_efficacy(&scores(&[(1.0, 1.0, 1.0), (1.0, 1.0, 1.0)])).unwrap(),
        0.0
    );
    assert_eq!(forget_efficacy(&scores(&[(0.0, 0.0, 0.0)])).unwrap(), 1.0);
    let fe = forget_efficacy(&scores(&[(0.7, 0.7, 0.7)])).unwrap();
    assert!((fe - 0.3).abs() < 1e-12, "{fe}");
    assert!(matches!(forget_efficacy(&[]), Err(Error::EmptyArgument(_))));
}

#[test]
fn forget_efficacy_complements_the_mean_and_ignores_order() {
    let mut rng = SplitMix64::new(8);
    for _ in 0..100 {
        let n = 1 + rng.next_below(10);
        let mut list = Vec::new();
        for _ in 0..n {
            list.push((rng.next_f64(), rng.next_f64(), rng.next_f64()));
        }
        let sc = scores(&list);
        let fe = forget_efficacy(&sc).unwrap();
        let mean = sc.iter().map(SampleScores::mean).sum::<f64>() / sc.len() as f64;
        assert!((fe + mean - 1.0).abs() < 1e-12);

        let mut reversed = sc.clone();
        reversed.reverse();
        assert!((forget_efficacy(&reversed).unwrap() - fe).abs() < 1e-12);
    }
}

#[test]
fn model_utility_known_values() {
    assert_eq!(model_utility(&scores(&[(1.0, 1.0, 1.0)])).unwrap(), 1.0);
    // metric means (0.5, 1, 1) -> 3 / (2 + 1 + 1) = 0.75
    let mu = model_utility(&scores(&[(0.5, 1.0, 1.0)])).unwrap();
    assert!((mu - 0.75).abs() < 1e-12, "{mu}");
    assert_eq!(model_utility(&scores(&[(0.0, 1.0, 1.0)])).unwrap(), 0.0);
}

#[test]
fn model_utility_is_bounded_by_the_smallest_mean() {
    let mut rng = SplitMix64::new(9);
    for _ in 0..100 {
        let n = 1 + rng.next_below(8);
        let list: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.next_f64(), rng.next_f64(), rng.next_f64()))
            .collect();
        let sc = scores(&list);
        let mu = model_utility(&sc).unwrap();
        let count = sc.len() as f64;
        let means = [
            sc.iter().map(|s| s.rouge_l).sum::<f64>() / count,
            sc.iter().map(|s| s.probability).sum::<f64>() / count,
            sc.iter().map(|s| s.cosine).sum::<f64>() / count,
        ];
        // Harmonic mean of positive values sits between the smallest value
        // and the arithmetic mean.
        let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let arith = means.iter().sum::<f64>() / 3.0;
        assert!(mu + 1e-12 >= min, "mu {mu} below min mean {min}");
        assert!(
            mu <= arith + 1e-12,
            "mu {mu} exceeds arithmetic mean {arith}"
        );
        assert!((0.0..=1.0).contains(&mu));
    }
}

#[test]
fn distinct_n_known_values() {
    let gens = vec![vec![1u32, 1, 2]];
    assert!((distinct_n(&gens, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let unique = vec![vec![1u32, 2, 3, 4]];
    assert_eq!(distinct_n(&unique, 1).unwrap(), 1.0);
    assert_eq!(distinct_n::<u32>(&[], 1).unwrap(), 0.0);
    assert_eq!(distinct_n(&[vec![1u32]], 2).unwrap(), 0.0); // no bigrams
    assert!(distinct_n::<u32>(&[], 0).is_err());
}

#[test]
fn distinct_n_matches_a_set_count_oracle_and_duplication_never_raises_it() {
    let mut rng = SplitMix64::new(10);
    for _ in 0..100 {
        let n_gens = 1 + rng.next_below(5);
        let n = 1 + rng.next_below(3);
        let gens: Vec<Vec<u64>> = (0..n_gens)
            .map(|_| {
                let len = rng.next_below(10);
                (0..len).map(|_| rng.next_below(4) as u64).collect()
            })
            .collect();
        // Oracle: count windows with a quadratic scan.
        let mut all: Vec<&[u64]> = Vec::new();
        for g in &gens {
            for w in g.windows(n) {
                all.push(w);
            }
        }
        let mut uniques: Vec<&[u64]> = Vec::new();
        for w in &all {
            if !uniques.contains(w) {
                uniques.push(w);
            }
        }
        let want = if all.is_empty() {
            0.0
        } else {
            uniques.len() as f64 / all.len() as f64
        };
        let got = distinct_n(&gens, n).unwrap();
        assert!((got - want).abs() < 1e-12);

        let doubled: Vec<Vec<u64>> = gens.iter().chain(gens.iter()).cloned().collect();
        assert!(distinct_n(&doubled, n).unwrap() <= got + 1e-12);
    }
}

#[test]
fn exact_memorization_against_a_teacher_forced_oracle() {
    let corpus = mini_corpus();
    let model = memorize(&mini_vocab_model(50), &corpus);
    let items: Vec<(String, TokenSeq)> = corpus
        .forget()
        .iter()
        .map(|qa| {
            (
                qa.entity_key().to_string(),
                tokenize(&model.vocab, qa, UnkPolicy::Strict, 16).unwrap(),
            )
        })
        .collect();
    let report = exact_memorization(&model, &items).unwrap();
    assert!(report.overall > 0.9, "memorized model: {}", report.overall);

    // Oracle: re-derive each position's argmax from next-token probability
    // queries over growing prefixes.
    let mut oracle_total = 0.0;
    for (_, seq) in &items {
        let mut prefix = seq.prompt.clone();
        let mut matched = 0usize;
        for &target in &seq.answer {
            let probs = crate::seqmodel::next_token_probs(&model, &prefix).unwrap();
            let argmax = probs
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &p)| {
                    if p > acc.1 {
                        (i, p)
                    } else {
                        acc
                    }
                })
                .0;
            if argmax == target {
                matched += 1;
            }
            prefix.push(target);
        }
        oracle_total += matched as f64 / seq.answer.len() as f64;
    }
    let oracle = oracle_total / items.len() as f64;
    assert!((report.overall - oracle).abs() < 1e-12);
    assert_eq!(
        report.per_entity.keys().cloned().collect::<Vec<_>>(),
        vec!["e1".to_string(), "e2".to_string()]
    );
}

#[test]
fn exact_memorization_partial_match_fraction() {
    let corpus = mini_corpus();
    let model = memorize(&mini_vocab_model(51), &corpus);
    // Take a memorized 3-token answer (2 words + EOS) and corrupt one
    // position; teacher-forced matches drop by exactly that position.
    let qa0 = &corpus.forget()[0];
    let seq = tokenize(&model.vocab, qa0, UnkPolicy::Strict, 16).unwrap();
    let full = exact_memorization(&model, &[("e".into(), seq.clone())]).unwrap();
    assert_eq!(full.overall, 1.0, "answer must be fully memorized first");

    let mut corrupted = seq.clone();
    // Swap the middle answer token for a different word the model will not
    // predict there.
    let replacement = seq.answer[0];
    corrupted.answer[1] = replacement;
    let partial = exact_memorization(&model, &[("e".into(), corrupted)]).unwrap();
    assert!(
        (partial.overall - 2.0 / 3.0).abs() < 1e-12,
        "{}",
        partial.overall
    );
}

#[test]
fn perplexity_uniform_anchor_and_nll_consistency() {
    let mut model = tiny_model(0);
    model.params_mut().fill(0.0);
    let v = model.config.vocab_size as f64;
    let seq = crate::seqmodel::tests::tiny_seq();
    let ppl = perplexity(&model, std::slice::from_ref(&seq)).unwrap();
    assert!(
        (ppl - v).abs() < 1e-9,
        "uniform perplexity {ppl} vs vocab {v}"
    );

    // exp(nll / T) for a single sequence equals perplexity([seq]).
    let model = tiny_model(3);
    let nll = crate::seqmodel::sequence_nll(&model, &seq).unwrap();
    let direct = (nll / seq.answer.len() as f64).exp();
    let ppl = perplexity(&model, &[seq]).unwrap();
    assert!((ppl - direct).abs() < 1e-12);
}

#[test]
fn perplexity_matches_exp_mean_nll_on_batches() {
    let corpus = mini_corpus();
    let model = mini_vocab_model(52);
    let seqs: Vec<TokenSeq> = corpus
        .retain()
        .iter()
        .map(|p| tokenize(&model.vocab, p, UnkPolicy::Strict, 16).unwrap())
        .collect();
    let got = perplexity(&model, &seqs).unwrap();
    let total_nll: f64 = seqs
        .iter()
        .map(|s| crate::seqmodel::sequence_nll(&model, s).unwrap())
        .sum();
    let total_tokens: usize = seqs.iter().map(|s| s.answer.len()).sum();
    let want = (total_nll / total_tokens as f64).exp();
    assert!((got - want).abs() < 1e-12);
    assert!(
        got >= 1.0,
        "answer-token perplexity is at least 1, got {got}"
    );
}

#[test]
fn probability_uniform_anchor() {
    let corpus = mini_corpus();
    let mut model = mini_vocab_model(53);
    model.params_mut().fill(0.0);
    let seq = tokenize(&model.vocab, &corpus.forget()[0], UnkPolicy::Strict, 16).unwrap();
    let p = crate::seqmodel::conditional_probability(&model, &seq).unwrap();
    let v = model.config.vocab_size as f64;
    assert!((p - 1.0 / v).abs() < 1e-9);
}

#[test]
fn memorized_model_scores_perfectly_on_its_training_pair() {
    let corpus = mini_corpus();
    let model = memorize(&mini_vocab_model(54), &corpus);
    let opts = EvalOptions::default();
    let s = score_sample(&model, &corpus.forget()[0], &opts).unwrap();
    assert_eq!(s.rouge_l, 1.0);
    assert!(s.probability > 0.9, "{}", s.probability);
    assert!((s.cosine - 1.0).abs() < 1e-9);
}

#[test]
fn immediate_eos_generation_scores_zero() {
    let corpus = mini_corpus();
    let mut model = mini_vocab_model(55);
    // Zero the trunk, then bias the head so EOS always wins: with ln_f
    // gamma = 0 and beta = 1 the final hidden state is all-ones, and one
    // head column sets the EOS logit.
    model.params_mut().fill(0.0);
    let layout = Layout::new(&model.config);
    let v = model.config.vocab_size;
    model.params_mut()[layout.ln_f_b()].fill(1.0);
    let head_start = layout.head().start;
    model.params_mut()[head_start + EOS] = 10.0; // row 0, column EOS
    let gen = crate::seqmodel::greedy_generate(&model, &[crate::seqmodel::BOS], 8).unwrap();
    assert!(gen.is_empty());

    let s = score_sample(&model, &corpus.forget()[0], &EvalOptions::default()).unwrap();
    assert_eq!(s.rouge_l, 0.0);
    assert_eq!(s.cosine, 0.0);
    assert!(s.probability > 0.0);
    let _ = v;
}

#[test]
fn evaluate_model_aggregates_and_breaks_down_by_entity() {
    let corpus = mini_corpus();
    let model = memorize(&mini_vocab_model(56), &corpus);
    let report = evaluate_model(&model, &corpus, &EvalOptions::default()).unwrap();

    assert!(
        report.forget_efficacy < 0.1,
        "fe {}",
        report.forget_efficacy
    );
    assert!(report.model_utility > 0.9, "mu {}", report.model_utility);
    assert!(report.exact_memorization > 0.9);
    assert!(report.perplexity_forget < 2.0);
    assert!(report.perplexity_test < 2.0);
    assert_eq!(
        report.distinct_n.keys().cloned().collect::<Vec<_>>(),
        vec![1, 2]
    );

    let e1 = &report.per_entity["e1"];
    assert!(e1.forget_efficacy.is_some());
    assert!(e1.model_utility.is_some());
    assert!(e1.exact_memorization.is_some());
    assert!(report.per_entity.contains_key("e2"));

    // Deterministic end to end.
    let again = evaluate_model(&model, &corpus, &EvalOptions::default()).unwrap();
    assert_eq!(report, again);
}

#[test]
fn evaluate_model_requires_forget_and_test_sets() {
    let model = mini_vocab_model(57);
    let no_test = crate::corpus::CorpusBundle::new(
        vec![qa("f1", "e1", NeighborKind::Forget, "alder ?", "birch")],
        vec![qa("r1", "e1", NeighborKind::Direct, "cedar ?", "dew")],
        vec![],
    )
    .unwrap();
    assert!(matches!(
        evaluate_model(&model, &no_test, &EvalOptions::default()),
        Err(Error::EmptyArgument(_))
    ));
}
