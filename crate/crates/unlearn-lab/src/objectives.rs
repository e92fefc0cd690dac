//! Unlearning objectives and the unlearning run driver.
//!
//! Four fine-tuning-based objectives over (forget, retain) sample pairs:
//!
//! * `Ga` — gradient ascent on the forget sample; unbounded, kept for
//!   reference and as the reduction anchor of `Gd`.
//! * `Gd` — gradient difference: ascent on forget plus `retain_strength`
//!   times descent on retain.
//! * `Dpo` — preference optimization against a frozen reference model with
//!   a refusal answer as the preferred response, plus a retain NLL term.
//! * `Npo` — preference optimization using only the forget answer as the
//!   rejected response, plus a retain NLL term.
//!
//! Sequence log-probabilities are summed over answer tokens; prompts never
//! contribute loss. Batch losses are arithmetic means over the batch.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, QAPair};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scheduler::{batch_schedule, PairSchedule};
use crate::seqmodel::{
    accumulate_nll_grad, sequence_nll, tokenize, Adam, ModelState, TokenId, TokenSeq, UnkPolicy,
    Vocabulary, EOS,
};

/// Refusal answers used as the preferred response in targeted unlearning.
pub const DEFAULT_REFUSAL_PHRASES: [&str; 5] = [
    "i do not know the answer",
    "i cannot recall that information",
    "i have no knowledge of that",
    "that is not something i can answer",
    "i am unable to provide that answer",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlearnMethod {
    Ga,
    Gd,
    Dpo,
    Npo,
}

impl UnlearnMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            UnlearnMethod::Ga => "ga",
            UnlearnMethod::Gd => "gd",
            UnlearnMethod::Dpo => "dpo",
            UnlearnMethod::Npo => "npo",
        }
    }
}

/// Hyperparameters of one unlearning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    /// Inverse temperature of the preference losses.
    pub beta: f64,
    /// Weight of the preference forget term.
    pub alpha: f64,
    /// Weight of the retain NLL term in the preference losses.
    pub gamma: f64,
    /// Weight of the retain NLL term in gradient difference.
    pub retain_strength: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Refusal pool for targeted (DPO) unlearning.
    pub refusal_phrases: Vec<String>,
    pub unk_policy: UnkPolicy,
}

impl UnlearnConfig {
    pub fn new(method: UnlearnMethod) -> Self {
        Self {
            method,
            beta: 0.1,
            alpha: 1.0,
            gamma: 1.0,
            retain_strength: 1.0,
            epochs: 4,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            refusal_phrases: DEFAULT_REFUSAL_PHRASES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            unk_policy: UnkPolicy::Strict,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.refusal_phrases.is_empty() {
            return Err(Error::EmptyArgument("refusal phrase pool"));
        }
        Ok(())
    }
}

/// Preference sample for targeted unlearning: refusal wins, original loses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceTriple {
    pub pair_id: String,
    pub prompt: Vec<TokenId>,
    pub y_win: Vec<TokenId>,
    pub y_lose: Vec<TokenId>,
}

impl PreferenceTriple {
    pub fn win_seq(&self) -> TokenSeq {
        TokenSeq {
            prompt: self.prompt.clone(),
            answer: self.y_win.clone(),
        }
    }

    pub fn lose_seq(&self) -> TokenSeq {
        TokenSeq {
            prompt: self.prompt.clone(),
            answer: self.y_lose.clone(),
        }
    }
}

/// One preference triple per forget pair. The refusal answer is a seeded
/// choice keyed by the pair id, so the assignment does not depend on list
/// order.
pub fn build_preference_set(
    forget: &[QAPair],
    refusal_pool: &[String],
    seed: u64,
    vocab: &Vocabulary,
    policy: UnkPolicy,
    max_seq_len: usize,
) -> Result<Vec<PreferenceTriple>> {
    if refusal_pool.is_empty() {
        return Err(Error::EmptyArgument("refusal phrase pool"));
    }
    forget
        .iter()
        .map(|pair| {
            let base = tokenize(vocab, pair, policy, max_seq_len)?;
            let mut rng = SplitMix64::keyed(seed, &format!("refusal/{}", pair.id));
            let phrase = rng.choose(refusal_pool);
            let mut y_win = vocab.encode(phrase, policy)?;
            if y_win.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "refusal phrase {phrase:?} tokenizes to nothing"
                )));
            }
            y_win.push(EOS);
            let len = base.prompt.len() + y_win.len();
            if len > max_seq_len {
                return Err(Error::SequenceTooLong {
                    len,
                    max: max_seq_len,
                });
            }
            Ok(PreferenceTriple {
                pair_id: pair.id.clone(),
                prompt: base.prompt,
                y_win,
                y_lose: base.answer,
            })
        })
        .collect()
}

/// Loss value with its forget/retain decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub forget_term: f64,
    pub retain_term: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), stable for large |x|.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sum of answer-token log-probabilities.
fn seq_logprob(model: &ModelState, seq: &TokenSeq) -> Result<f64> {
    Ok(-sequence_nll(model, seq)?)
}

/// Gradient ascent loss: the negated answer NLL of the forget sample.
pub fn ga_loss(model: &ModelState, forget_seq: &TokenSeq) -> Result<f64> {
    Ok(-sequence_nll(model, forget_seq)?)
}

pub fn ga_loss_and_grad(model: &ModelState, forget_seq: &TokenSeq) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let nll = accumulate_nll_grad(model, forget_seq, -1.0, &mut grad)?;
    Ok((-nll, grad))
}

/// Gradient difference: `-nll(forget) + lambda * nll(retain)`.
pub fn gd_loss(
    model: &ModelState,
    forget_seq: &TokenSeq,
    retain_seq: &TokenSeq,
    lambda: f64,
) -> Result<LossBreakdown> {
    let forget_term = -sequence_nll(model, forget_seq)?;
    let retain_term = sequence_nll(model, retain_seq)?;
    Ok(LossBreakdown {
        total: forget_term + lambda * retain_term,
        forget_term,
        retain_term,
    })
}

pub fn gd_loss_and_grad(
    model: &ModelState,
    forget_seq: &TokenSeq,
    retain_seq: &TokenSeq,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let forget_term = -accumulate_nll_grad(model, forget_seq, -1.0, &mut grad)?;
    let retain_term = accumulate_nll_grad(model, retain_seq, lambda, &mut grad)?;
    Ok((
        LossBreakdown {
            total: forget_term + lambda * retain_term,
            forget_term,
            retain_term,
        },
        grad,
    ))
}

/// Reference-model log-probabilities, computed once per sequence so a run
/// can reuse them across epochs.
#[derive(Debug, Clone, Copy)]
struct RefLogps {
    win: f64,
    lose: f64,
}

fn check_finite(value: f64, what: &str, id: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} for sequence {id}")))
    }
}

fn dpo_inner(
    model: &ModelState,
    refs: RefLogps,
    triple: &PreferenceTriple,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let win = triple.win_seq();
    let lose = triple.lose_seq();
    // The forget gradient is a scalar weight times the difference of the
    // two log-prob gradients; collect those into scratch buffers first
    // because the weight depends on the log-probs themselves.
    let (lp_win, lp_lose) = if let Some(grad) = grad.as_deref_mut() {
        let mut g_win = vec![0.0; model.param_count()];
        let lp_win = -accumulate_nll_grad(model, &win, -1.0, &mut g_win)?;
        let mut g_lose = vec![0.0; model.param_count()];
        let lp_lose = -accumulate_nll_grad(model, &lose, -1.0, &mut g_lose)?;
        let z = cfg.beta * ((lp_win - refs.win) - (lp_lose - refs.lose));
        let weight = cfg.alpha * cfg.beta * (sigmoid(z) - 1.0);
        for ((slot, gw), gl) in grad.iter_mut().zip(&g_win).zip(&g_lose) {
            *slot += weight * (gw - gl);
        }
        (lp_win, lp_lose)
    } else {
        (seq_logprob(model, &win)?, seq_logprob(model, &lose)?)
    };
    check_finite(lp_win, "log-probability", &triple.pair_id)?;
    check_finite(lp_lose, "log-probability", &triple.pair_id)?;

    let z = cfg.beta * ((lp_win - refs.win) - (lp_lose - refs.lose));
    let forget_term = softplus(-z); // = -ln(sigmoid(z))
    let retain_term = match retain_seq {
        Some(seq) => {
            let nll = if let Some(grad) = grad {
                accumulate_nll_grad(model, seq, cfg.gamma, grad)?
            } else {
                sequence_nll(model, seq)?
            };
            check_finite(nll, "retain NLL", &triple.pair_id)?
        }
        None => 0.0,
    };
    Ok(LossBreakdown {
        total: cfg.alpha * forget_term + cfg.gamma * retain_term,
        forget_term,
        retain_term,
    })
}

fn dpo_refs(reference: &ModelState, triple: &PreferenceTriple) -> Result<RefLogps> {
    Ok(RefLogps {
        win: check_finite(
            seq_logprob(reference, &triple.win_seq())?,
            "reference log-probability",
            &triple.pair_id,
        )?,
        lose: check_finite(
            seq_logprob(reference, &triple.lose_seq())?,
            "reference log-probability",
            &triple.pair_id,
        )?,
    })
}

/// DPO with an optional retain term:
/// `alpha * -ln sigmoid(beta * (delta_win - delta_lose)) + gamma * nll(retain)`
/// where `delta_y = logp(y; model) - logp(y; reference)`.
pub fn dpo_loss(
    model: &ModelState,
    reference: &ModelState,
    triple: &PreferenceTriple,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
) -> Result<LossBreakdown> {
    dpo_inner(
        model,
        dpo_refs(reference, triple)?,
        triple,
        retain_seq,
        cfg,
        None,
    )
}

pub fn dpo_loss_and_grad(
    model: &ModelState,
    reference: &ModelState,
    triple: &PreferenceTriple,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let breakdown = dpo_inner(
        model,
        dpo_refs(reference, triple)?,
        triple,
        retain_seq,
        cfg,
        Some(&mut grad),
    )?;
    Ok((breakdown, grad))
}

fn npo_inner(
    model: &ModelState,
    ref_lose: f64,
    forget_seq: &TokenSeq,
    seq_id: &str,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let lp_lose = if let Some(grad) = grad.as_deref_mut() {
        let mut g_lose = vec![0.0; model.param_count()];
        let lp = -accumulate_nll_grad(model, forget_seq, -1.0, &mut g_lose)?;
        // forget = (2/beta) softplus(beta * delta); d/d lp_lose = 2 sigmoid(beta delta)
        let weight = cfg.alpha * 2.0 * sigmoid(cfg.beta * (lp - ref_lose));
        for (slot, gl) in grad.iter_mut().zip(&g_lose) {
            *slot += weight * gl;
        }
        lp
    } else {
        seq_logprob(model, forget_seq)?
    };
    check_finite(lp_lose, "log-probability", seq_id)?;

    let delta = lp_lose - ref_lose;
    let forget_term = (2.0 / cfg.beta) * softplus(cfg.beta * delta); // = -(2/beta) ln(sigmoid(-beta delta))
    let retain_term = match retain_seq {
        Some(seq) => {
            let nll = if let Some(grad) = grad {
                accumulate_nll_grad(model, seq, cfg.gamma, grad)?
            } else {
                sequence_nll(model, seq)?
            };
            check_finite(nll, "retain NLL", seq_id)?
        }
        None => 0.0,
    };
    Ok(LossBreakdown {
        total: cfg.alpha * forget_term + cfg.gamma * retain_term,
        forget_term,
        retain_term,
    })
}

/// NPO with an optional retain term:
/// `alpha * (2/beta) * -ln sigmoid(-beta * delta_lose) + gamma * nll(retain)`.
pub fn npo_loss(
    model: &ModelState,
    reference: &ModelState,
    forget_seq: &TokenSeq,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
) -> Result<LossBreakdown> {
    let ref_lose = check_finite(
        seq_logprob(reference, forget_seq)?,
        "reference log-probability",
        "forget sequence",
    )?;
    npo_inner(
        model,
        ref_lose,
        forget_seq,
        "forget sequence",
        retain_seq,
        cfg,
        None,
    )
}

pub fn npo_loss_and_grad(
    model: &ModelState,
    reference: &ModelState,
    forget_seq: &TokenSeq,
    retain_seq: Option<&TokenSeq>,
    cfg: &UnlearnConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let ref_lose = seq_logprob(reference, forget_seq)?;
    let mut grad = vec![0.0; model.param_count()];
    let breakdown = npo_inner(
        model,
        ref_lose,
        forget_seq,
        "forget sequence",
        retain_seq,
        cfg,
        Some(&mut grad),
    )?;
    Ok((breakdown, grad))
}

/// One optimizer step's telemetry (batch means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub epoch: usize,
    pub batch: usize,
    pub method: String,
    pub total: f64,
    pub forget_term: f64,
    pub retain_term: f64,
}

/// Result of an unlearning run.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: ModelState,
    pub telemetry: Vec<StepTelemetry>,
}

struct ResolvedPair<'a> {
    forget_id: &'a str,
    forget_seq: &'a TokenSeq,
    retain_seq: &'a TokenSeq,
}

/// Run the configured unlearning method over a pairing schedule.
///
/// The reference snapshot for the preference methods is taken from the
/// input model before the first step. Per-pair losses are averaged within
/// each batch (gradient accumulation) and one Adam step is applied per
/// batch. The input model is left untouched; the updated parameters come
/// back together with per-step telemetry.
pub fn unlearn_run(
    model: &ModelState,
    schedule: &PairSchedule,
    corpus: &CorpusBundle,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;

    let forget_by_id: BTreeMap<&str, &QAPair> =
        corpus.forget().iter().map(|p| (p.id.as_str(), p)).collect();
    let retain_by_id: BTreeMap<&str, &QAPair> =
        corpus.retain().iter().map(|p| (p.id.as_str(), p)).collect();
    let max_len = model.config.max_seq_len;

    // Tokenize every referenced sample once.
    let mut forget_seqs: BTreeMap<&str, TokenSeq> = BTreeMap::new();
    let mut retain_seqs: BTreeMap<&str, TokenSeq> = BTreeMap::new();
    for pair in schedule.epochs.iter().flatten() {
        let f = *forget_by_id
            .get(pair.forget_id.as_str())
            .ok_or_else(|| Error::UnresolvedRef(pair.forget_id.clone()))?;
        let r = *retain_by_id
            .get(pair.retain_id.as_str())
            .ok_or_else(|| Error::UnresolvedRef(pair.retain_id.clone()))?;
        if !forget_seqs.contains_key(f.id.as_str()) {
            forget_seqs.insert(&f.id, tokenize(&model.vocab, f, cfg.unk_policy, max_len)?);
        }
        if !retain_seqs.contains_key(r.id.as_str()) {
            retain_seqs.insert(&r.id, tokenize(&model.vocab, r, cfg.unk_policy, max_len)?);
        }
    }

    // Frozen reference and preference data for the preference methods.
    let reference = match cfg.method {
        UnlearnMethod::Dpo | UnlearnMethod::Npo => Some(model.snapshot_reference()),
        _ => None,
    };
    let triples: BTreeMap<String, PreferenceTriple> = if cfg.method == UnlearnMethod::Dpo {
        let scheduled: Vec<QAPair> = corpus
            .forget()
            .iter()
            .filter(|p| forget_seqs.contains_key(p.id.as_str()))
            .cloned()
            .collect();
        build_preference_set(
            &scheduled,
            &cfg.refusal_phrases,
            cfg.seed,
            &model.vocab,
            cfg.unk_policy,
            max_len,
        )?
        .into_iter()
        .map(|t| (t.pair_id.clone(), t))
        .collect()
    } else {
        BTreeMap::new()
    };

    // Reference log-probabilities are constant across the run.
    let mut ref_logps: BTreeMap<&str, RefLogps> = BTreeMap::new();
    if let Some(reference) = &reference {
        for (&id, seq) in &forget_seqs {
            let lose = check_finite(
                seq_logprob(reference, seq)?,
                "reference log-probability",
                id,
            )?;
            let win = match triples.get(id) {
                Some(t) => check_finite(
                    seq_logprob(reference, &t.win_seq())?,
                    "reference log-probability",
                    id,
                )?,
                None => 0.0,
            };
            ref_logps.insert(id, RefLogps { win, lose });
        }
    }

    let plan = batch_schedule(schedule, cfg.batch_size)?;
    let mut trained = model.clone();
    let mut opt = Adam::new(trained.param_count(), cfg.learning_rate);
    let mut telemetry = Vec::with_capacity(plan.batches.len());
    let mut batch_in_epoch = 0usize;
    let mut current_epoch = 0usize;

    for batch in &plan.batches {
        if batch.epoch != current_epoch {
            current_epoch = batch.epoch;
            batch_in_epoch = 0;
        }
        let resolved: Vec<ResolvedPair> = batch
            .pairs
            .iter()
            .map(|p| ResolvedPair {
                forget_id: p.forget_id.as_str(),
                forget_seq: &forget_seqs[p.forget_id.as_str()],
                retain_seq: &retain_seqs[p.retain_id.as_str()],
            })
            .collect();

        let per_pair: Vec<Result<(LossBreakdown, Vec<f64>)>> = resolved
            .par_iter()
            .map(|pair| pair_loss_and_grad(&trained, pair, cfg, &ref_logps, &triples))
            .collect();

        let mut grad = vec![0.0; trained.param_count()];
        let mut sums = LossBreakdown {
            total: 0.0,
            forget_term: 0.0,
            retain_term: 0.0,
        };
        for item in per_pair {
            let (breakdown, g) = item?;
            sums.total += breakdown.total;
            sums.forget_term += breakdown.forget_term;
            sums.retain_term += breakdown.retain_term;
            for (slot, gi) in grad.iter_mut().zip(&g) {
                *slot += gi;
            }
        }
        let inv = 1.0 / batch.pairs.len() as f64;
        for g in &mut grad {
            *g *= inv;
        }
        let step = StepTelemetry {
            epoch: batch.epoch,
            batch: batch_in_epoch,
            method: cfg.method.as_str().to_string(),
            total: sums.total * inv,
            forget_term: sums.forget_term * inv,
            retain_term: sums.retain_term * inv,
        };
        if !step.total.is_finite() {
            return Err(Error::TrainingDiverged {
                method: cfg.method.as_str().to_string(),
                epoch: batch.epoch,
                batch: batch_in_epoch,
            });
        }
        opt.step(trained.params_mut(), &grad);
        telemetry.push(step);
        batch_in_epoch += 1;
    }

    Ok(UnlearnOutcome {
        model: trained,
        telemetry,
    })
}

fn pair_loss_and_grad(
    model: &ModelState,
    pair: &ResolvedPair,
    cfg: &UnlearnConfig,
    ref_logps: &BTreeMap<&str, RefLogps>,
    triples: &BTreeMap<String, PreferenceTriple>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    match cfg.method {
        UnlearnMethod::Ga => {
            let (loss, grad) = ga_loss_and_grad(model, pair.forget_seq)?;
            Ok((
                LossBreakdown {
                    total: loss,
                    forget_term: loss,
                    retain_term: 0.0,
                },
                grad,
            ))
        }
        UnlearnMethod::Gd => {
            gd_loss_and_grad(model, pair.forget_seq, pair.retain_seq, cfg.retain_strength)
        }
        UnlearnMethod::Dpo => {
            let triple = &triples[pair.forget_id];
            let refs = ref_logps[pair.forget_id];
            let mut grad = vec![0.0; model.param_count()];
            let breakdown = dpo_inner(
                model,
                refs,
                triple,
                Some(pair.retain_seq),
                cfg,
                Some(&mut grad),
            )?;
            Ok((breakdown, grad))
        }
        UnlearnMethod::Npo => {
            let refs = ref_logps[pair.forget_id];
            let mut grad = vec![0.0; model.param_count()];
            let breakdown = npo_inner(
                model,
                refs.lose,
                pair.forget_seq,
                pair.forget_id,
                Some(pair.retain_seq),
                cfg,
                Some(&mut grad),
            )?;
            Ok((breakdown, grad))
        }
    }
}
