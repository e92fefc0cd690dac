//! Evaluation metrics: per-sample scores, the aggregate forget-efficacy and
//! model-utility numbers, token diversity, exact memorization, and
//! perplexity, with per-entity breakdowns.
//!
//! Forget efficacy is one minus the arithmetic mean of (ROUGE-L,
//! conditional probability, truncated cosine) over the forget set; model
//! utility is the harmonic mean of the three metric means, computed on the
//! test set. Cosine similarity embeds generations with the evaluated model
//! itself.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, QAPair};
use crate::error::{Error, Result};
use crate::seqmodel::{
    answer_argmax, conditional_probability, embed_sequence, greedy_generate, sequence_nll,
    tokenize, ModelState, TokenId, TokenSeq, UnkPolicy,
};

/// ROUGE-L F-measure over the longest common subsequence. Returns 0 for an
/// empty generation; an empty reference is an argument error.
pub fn rouge_l<T: PartialEq>(generated: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyArgument("rouge reference"));
    }
    if generated.is_empty() {
        return Ok(0.0);
    }
    // Two-row LCS dynamic program.
    let mut prev = vec![0usize; reference.len() + 1];
    let mut cur = vec![0usize; reference.len() + 1];
    for g in generated {
        for (j, r) in reference.iter().enumerate() {
            cur[j + 1] = if g == r {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
        cur[0] = 0;
    }
    let lcs = prev[reference.len()];
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / generated.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Cosine similarity clamped below at zero.
pub fn truncated_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::InvalidArgument("zero vector in cosine".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).max(0.0))
}

/// The three per-sample metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub source_id: String,
    pub entity: String,
    pub rouge_l: f64,
    pub probability: f64,
    pub cosine: f64,
}

impl SampleScores {
    fn mean(&self) -> f64 {
        (self.rouge_l + self.probability + self.cosine) / 3.0
    }
}

/// Evaluation settings; echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Greedy-decoding budget per sample (decoding also stops at EOS or the
    /// model's maximum sequence length).
    pub max_new_tokens: usize,
    pub unk_policy: UnkPolicy,
    /// Which n-gram orders the diversity report covers.
    pub distinct_ns: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 24,
            unk_policy: UnkPolicy::Strict,
            distinct_ns: vec![1, 2],
        }
    }
}

fn score_sample_with_generation(
    model: &ModelState,
    qa: &QAPair,
    opts: &EvalOptions,
) -> Result<(SampleScores, Vec<TokenId>)> {
    let seq = tokenize(&model.vocab, qa, opts.unk_policy, model.config.max_seq_len)?;
    let budget = opts
        .max_new_tokens
        .min(model.config.max_seq_len - seq.prompt.len());
    let generated = greedy_generate(model, &seq.prompt, budget)?;
    let reference = &seq.answer[..seq.answer.len() - 1]; // strip EOS
    let probability = conditional_probability(model, &seq)?;
    let (rouge, cosine) = if generated.is_empty() {
        (0.0, 0.0) // degenerate generation scores zero by convention
    } else {
        let rouge = rouge_l(&generated, reference)?;
        let cosine = truncated_cosine(
            &embed_sequence(model, &generated)?,
            &embed_sequence(model, reference)?,
        )?;
        (rouge, cosine)
    };
    Ok((
        SampleScores {
            source_id: qa.id.clone(),
            entity: qa.entity_key().to_string(),
            rouge_l: rouge,
            probability,
            cosine,
        },
        generated,
    ))
}

/// ROUGE-L, conditional probability, and truncated cosine for one sample.
pub fn score_sample(model: &ModelState, qa: &QAPair, opts: &EvalOptions) -> Result<SampleScores> {
    Ok(score_sample_with_generation(model, qa, opts)?.0)
}

/// `1 - mean((rouge + probability + cosine) / 3)` over samples.
pub fn forget_efficacy(scores: &[SampleScores]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyArgument("score list"));
    }
    let mean = scores.iter().map(SampleScores::mean).sum::<f64>() / scores.len() as f64;
    Ok(1.0 - mean)
}

/// Harmonic mean of the three metric means; zero if any metric mean is zero.
pub fn model_utility(scores: &[SampleScores]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyArgument("score list"));
    }
    let n = scores.len() as f64;
    let means = [
        scores.iter().map(|s| s.rouge_l).sum::<f64>() / n,
        scores.iter().map(|s| s.probability).sum::<f64>() / n,
        scores.iter().map(|s| s.cosine).sum::<f64>() / n,
    ];
    if means.contains(&0.0) {
        return Ok(0.0);
    }
    Ok(3.0 / means.iter().map(|m| 1.0 / m).sum::<f64>())
}

/// Distinct n-grams over all generations divided by total n-grams; zero
/// when no n-grams exist.
pub fn distinct_n<T: Eq + Hash>(generations: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for gen in generations {
        for window in gen.windows(n) {
            seen.insert(window);
            total += 1;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Exact-memorization scores: overall mean over sequences and the mean per
/// entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub overall: f64,
    pub per_entity: BTreeMap<String, f64>,
}

/// Fraction of answer positions where the teacher-forced argmax equals the
/// ground-truth token. `items` pairs each sequence with its entity key.
pub fn exact_memorization(
    model: &ModelState,
    items: &[(String, TokenSeq)],
) -> Result<MemorizationReport> {
    if items.is_empty() {
        return Err(Error::EmptyArgument("sequence list"));
    }
    let per_seq: Vec<Result<f64>> = items
        .par_iter()
        .map(|(_, seq)| {
            let predicted = answer_argmax(model, seq)?;
            let matched = predicted
                .iter()
                .zip(&seq.answer)
                .filter(|(p, t)| p == t)
                .count();
            Ok(matched as f64 / seq.answer.len() as f64)
        })
        .collect();
    let mut grouped: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for ((entity, _), score) in items.iter().zip(per_seq) {
        let score = score?;
        total += score;
        let slot = grouped.entry(entity.clone()).or_insert((0.0, 0));
        slot.0 += score;
        slot.1 += 1;
    }
    Ok(MemorizationReport {
        overall: total / items.len() as f64,
        per_entity: grouped
            .into_iter()
            .map(|(k, (sum, count))| (k, sum / count as f64))
            .collect(),
    })
}

/// `exp(total answer NLL / total answer tokens)` over the sequences.
pub fn perplexity(model: &ModelState, seqs: &[TokenSeq]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::EmptyArgument("sequence list"));
    }
    let nlls: Vec<Result<f64>> = seqs.par_iter().map(|s| sequence_nll(model, s)).collect();
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for (seq, nll) in seqs.iter().zip(nlls) {
        total_nll += nll?;
        total_tokens += seq.answer.len();
    }
    Ok((total_nll / total_tokens as f64).exp())
}

/// Per-entity slice of the aggregate report. Forget-side values exist only
/// for entities with forget samples, test-side values only for entities
/// covered by the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityReport {
    pub forget_efficacy: Option<f64>,
    pub model_utility: Option<f64>,
    pub exact_memorization: Option<f64>,
}

/// The full metric stack for one model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub forget_efficacy: f64,
    /// Model utility on the test set.
    pub model_utility: f64,
    pub distinct_n: BTreeMap<usize, f64>,
    pub perplexity_forget: f64,
    pub perplexity_test: f64,
    /// Mean exact-memorization score over the forget set.
    pub exact_memorization: f64,
    pub per_entity: BTreeMap<String, EntityReport>,
    pub options: EvalOptions,
}

/// Score the forget and test sets and aggregate everything. Generation,
/// scoring, and NLL passes run per-sample in parallel; every reduction is
/// an ordered fold, so the report is deterministic.
pub fn evaluate_model(
    model: &ModelState,
    corpus: &CorpusBundle,
    opts: &EvalOptions,
) -> Result<AggregateReport> {
    if corpus.forget().is_empty() {
        return Err(Error::EmptyArgument("forget set"));
    }
    if corpus.test().is_empty() {
        return Err(Error::EmptyArgument("test set"));
    }
    let score_all = |pairs: &[QAPair]| -> Result<(Vec<SampleScores>, Vec<Vec<TokenId>>)> {
        let scored: Vec<Result<(SampleScores, Vec<TokenId>)>> = pairs
            .par_iter()
            .map(|qa| score_sample_with_generation(model, qa, opts))
            .collect();
        let mut scores = Vec::with_capacity(pairs.len());
        let mut generations = Vec::with_capacity(pairs.len());
        for item in scored {
            let (s, g) = item?;
            scores.push(s);
            generations.push(g);
        }
        Ok((scores, generations))
    };

    let (forget_scores, forget_gens) = score_all(corpus.forget())?;
    let (test_scores, test_gens) = score_all(corpus.test())?;

    let forget_seqs: Vec<(String, TokenSeq)> = corpus
        .forget()
        .iter()
        .map(|qa| {
            Ok((
                qa.entity_key().to_string(),
                tokenize(&model.vocab, qa, opts.unk_policy, model.config.max_seq_len)?,
            ))
        })
        .collect::<Result<_>>()?;
    let test_seqs: Vec<TokenSeq> = corpus
        .test()
        .iter()
        .map(|qa| tokenize(&model.vocab, qa, opts.unk_policy, model.config.max_seq_len))
        .collect::<Result<_>>()?;

    let memorization = exact_memorization(model, &forget_seqs)?;

    let mut distinct = BTreeMap::new();
    let all_gens: Vec<Vec<TokenId>> = forget_gens.into_iter().chain(test_gens).collect();
    for &n in &opts.distinct_ns {
        distinct.insert(n, distinct_n(&all_gens, n)?);
    }

    // Per-entity breakdowns.
    let mut per_entity: BTreeMap<String, EntityReport> = BTreeMap::new();
    let mut forget_by_entity: BTreeMap<&str, Vec<SampleScores>> = BTreeMap::new();
    for s in &forget_scores {
        forget_by_entity
            .entry(&s.entity)
            .or_default()
            .push(s.clone());
    }
    let mut test_by_entity: BTreeMap<&str, Vec<SampleScores>> = BTreeMap::new();
    for s in &test_scores {
        test_by_entity.entry(&s.entity).or_default().push(s.clone());
    }
    for (entity, scores) in &forget_by_entity {
        per_entity.insert(
            entity.to_string(),
            EntityReport {
                forget_efficacy: Some(forget_efficacy(scores)?),
                model_utility: None,
                exact_memorization: memorization.per_entity.get(*entity).copied(),
            },
        );
    }
    for (entity, scores) in &test_by_entity {
        let report = per_entity
            .entry(entity.to_string())
            .or_insert(EntityReport {
                forget_efficacy: None,
                model_utility: None,
                exact_memorization: None,
            });
        report.model_utility = Some(model_utility(scores)?);
    }

    Ok(AggregateReport {
        forget_efficacy: forget_efficacy(&forget_scores)?,
        model_utility: model_utility(&test_scores)?,
        distinct_n: distinct,
        perplexity_forget: perplexity(
            model,
            &forget_seqs
                .iter()
                .map(|(_, s)| s.clone())
                .collect::<Vec<_>>(),
        )?,
        perplexity_test: perplexity(model, &test_seqs)?,
        exact_memorization: memorization.overall,
        per_entity,
        options: opts.clone(),
    })
}

#[cfg(test)]
mod tests;
