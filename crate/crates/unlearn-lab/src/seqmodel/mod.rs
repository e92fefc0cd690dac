//! Small trainable decoder-only sequence model.
//!
//! The model is deliberately tiny: double precision, hand-written backward
//! pass, word-level vocabulary. That keeps every loss in the laboratory
//! amenable to finite-difference verification while still being able to
//! memorize a synthetic corpus well enough to unlearn something from it.

mod adam;
pub mod transformer;
pub mod vocab;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
pub use adam::Adam;
use transformer::{head_logits, log_softmax, Layout};
pub use vocab::{tokenize, TokenId, TokenSeq, UnkPolicy, Vocabulary, BOS, EOS, PAD, SEP, UNK};

/// Architecture hyperparameters. The MLP width is fixed at `4 * d_model`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

/// Model parameters plus the vocabulary they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    params: Vec<f64>,
}

impl ModelState {
    /// Random initialization: gaussian 0.02 weights, unit layer-norm gains.
    pub fn init(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match the vocabulary ({} tokens)",
                config.vocab_size,
                vocab.len()
            )));
        }
        let layout = Layout::new(&config);
        let mut rng = SplitMix64::keyed(config.seed, "model-init");
        let mut params: Vec<f64> = (0..layout.total)
            .map(|_| rng.next_gaussian() * 0.02)
            .collect();
        for l in 0..config.n_layers {
            params[layout.ln1_g(l)].fill(1.0);
            params[layout.ln1_b(l)].fill(0.0);
            params[layout.ln2_g(l)].fill(1.0);
            params[layout.ln2_b(l)].fill(0.0);
        }
        params[layout.ln_f_g()].fill(1.0);
        params[layout.ln_f_b()].fill(0.0);
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Deep immutable copy; the frozen reference model for preference losses.
    pub fn snapshot_reference(&self) -> ModelState {
        self.clone()
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        for &id in ids {
            if id >= self.config.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocab of {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn check_seq(&self, seq: &TokenSeq) -> Result<()> {
        if seq.prompt.is_empty() {
            return Err(Error::EmptyArgument("prompt tokens"));
        }
        if seq.answer.is_empty() {
            return Err(Error::EmptyArgument("answer tokens"));
        }
        let ids = seq.full();
        self.check_ids(&ids)
    }
}

/// Per-token teacher-forced view of a sequence under a model.
struct AnswerPass {
    logprobs: Vec<f64>,
    argmax: Vec<TokenId>,
}

fn answer_pass(model: &ModelState, seq: &TokenSeq) -> Result<AnswerPass> {
    model.check_seq(seq)?;
    let layout = model.layout();
    let ids = seq.full();
    let tape = transformer::forward(&layout, &model.params, &ids);
    let d = layout.d;
    let mut logprobs = Vec::with_capacity(seq.answer.len());
    let mut argmax = Vec::with_capacity(seq.answer.len());
    for (offset, &target) in seq.answer.iter().enumerate() {
        let row = seq.prompt.len() + offset - 1; // predict from the previous position
        let mut logits = head_logits(&layout, &model.params, &tape.hidden[row * d..(row + 1) * d]);
        let best = logits
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            })
            .0;
        log_softmax(&mut logits);
        logprobs.push(logits[target]);
        argmax.push(best);
    }
    Ok(AnswerPass { logprobs, argmax })
}

/// Negative log-likelihood of the answer tokens given the prompt, summed
/// over the answer (prompt positions are masked out of the loss).
pub fn sequence_nll(model: &ModelState, seq: &TokenSeq) -> Result<f64> {
    Ok(-answer_pass(model, seq)?.logprobs.iter().sum::<f64>())
}

/// Per-answer-token log probabilities (answer order).
pub fn answer_logprobs(model: &ModelState, seq: &TokenSeq) -> Result<Vec<f64>> {
    Ok(answer_pass(model, seq)?.logprobs)
}

/// Teacher-forced argmax prediction for each answer position.
pub fn answer_argmax(model: &ModelState, seq: &TokenSeq) -> Result<Vec<TokenId>> {
    Ok(answer_pass(model, seq)?.argmax)
}

/// Arithmetic mean of the ground-truth token probabilities.
pub fn conditional_probability(model: &ModelState, seq: &TokenSeq) -> Result<f64> {
    let logprobs = answer_logprobs(model, seq)?;
    Ok(logprobs.iter().map(|lp| lp.exp()).sum::<f64>() / logprobs.len() as f64)
}

/// Sequence NLL and its gradient, accumulated into `grad` with a scalar
/// weight: `grad += scale * d(nll)/d(theta)`. Returns the unscaled NLL.
pub fn accumulate_nll_grad(
    model: &ModelState,
    seq: &TokenSeq,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    model.check_seq(seq)?;
    let layout = model.layout();
    debug_assert_eq!(grad.len(), layout.total);
    let ids = seq.full();
    let tape = transformer::forward(&layout, &model.params, &ids);
    let (n, d, v) = (ids.len(), layout.d, layout.v);

    let mut nll = 0.0;
    let mut d_hidden = vec![0.0; n * d];
    let head = &model.params[layout.head()];
    for (offset, &target) in seq.answer.iter().enumerate() {
        let row = seq.prompt.len() + offset - 1;
        let hidden_row = &tape.hidden[row * d..(row + 1) * d];
        let mut logits = head_logits(&layout, &model.params, hidden_row);
        log_softmax(&mut logits);
        nll -= logits[target];
        // d(nll)/d(logits) = softmax - onehot, then through the head.
        let mut d_logits: Vec<f64> = logits.iter().map(|&lp| lp.exp() * scale).collect();
        d_logits[target] -= scale;
        let d_head = &mut grad[layout.head()];
        let d_hidden_row = &mut d_hidden[row * d..(row + 1) * d];
        for k in 0..d {
            let a = hidden_row[k];
            let head_row = &head[k * v..(k + 1) * v];
            let d_head_row = &mut d_head[k * v..(k + 1) * v];
            let mut acc = 0.0;
            for j in 0..v {
                d_head_row[j] += a * d_logits[j];
                acc += head_row[j] * d_logits[j];
            }
            d_hidden_row[k] += acc;
        }
    }
    transformer::backward(&layout, &model.params, &ids, &tape, &d_hidden, grad);
    Ok(nll)
}

/// NLL and a freshly allocated gradient.
pub fn nll_and_grad(model: &ModelState, seq: &TokenSeq) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.param_count()];
    let nll = accumulate_nll_grad(model, seq, 1.0, &mut grad)?;
    Ok((nll, grad))
}

/// Next-token logits after a (non-empty) prefix.
pub fn next_token_logits(model: &ModelState, ids: &[TokenId]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::EmptyArgument("token prefix"));
    }
    model.check_ids(ids)?;
    let layout = model.layout();
    let tape = transformer::forward(&layout, &model.params, ids);
    let d = layout.d;
    let last = (ids.len() - 1) * d;
    Ok(head_logits(
        &layout,
        &model.params,
        &tape.hidden[last..last + d],
    ))
}

/// Next-token distribution (softmax of the logits).
pub fn next_token_probs(model: &ModelState, ids: &[TokenId]) -> Result<Vec<f64>> {
    let mut logits = next_token_logits(model, ids)?;
    log_softmax(&mut logits);
    Ok(logits.into_iter().map(f64::exp).collect())
}

/// Greedy decode loop over an arbitrary next-logits function. Decoding stops
/// at `eos`, after `max_new` tokens, or when `max_total` is reached; ties
/// break toward the lowest token id. The emitted ids exclude `eos`.
pub fn greedy_decode<F>(
    mut next_logits: F,
    prompt: &[TokenId],
    max_new: usize,
    eos: TokenId,
    max_total: usize,
) -> Vec<TokenId>
where
    F: FnMut(&[TokenId]) -> Vec<f64>,
{
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && ids.len() < max_total {
        let logits = next_logits(&ids);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in logits.iter().enumerate() {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        if best == eos {
            break;
        }
        ids.push(best);
        out.push(best);
    }
    out
}

/// Greedy generation from a prompt; see [`greedy_decode`] for the rules.
pub fn greedy_generate(
    model: &ModelState,
    prompt: &[TokenId],
    max_new: usize,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::EmptyArgument("prompt tokens"));
    }
    if prompt.len() >= model.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: prompt.len(),
            max: model.config.max_seq_len,
        });
    }
    model.check_ids(prompt)?;
    let layout = model.layout();
    let d = layout.d;
    Ok(greedy_decode(
        |ids| {
            let tape = transformer::forward(&layout, &model.params, ids);
            let last = (ids.len() - 1) * d;
            head_logits(&layout, &model.params, &tape.hidden[last..last + d])
        },
        prompt,
        max_new,
        EOS,
        model.config.max_seq_len,
    ))
}

/// Mean over positions of the final-layer hidden states.
pub fn embed_sequence(model: &ModelState, ids: &[TokenId]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::EmptyArgument("token list"));
    }
    model.check_ids(ids)?;
    let layout = model.layout();
    let tape = transformer::forward(&layout, &model.params, ids);
    let d = layout.d;
    let mut mean = vec![0.0; d];
    for row in tape.hidden.chunks(d) {
        for (m, &h) in mean.iter_mut().zip(row) {
            *m += h;
        }
    }
    for m in &mut mean {
        *m /= ids.len() as f64;
    }
    Ok(mean)
}

/// Mean NLL over a batch and the matching mean gradient. Per-sequence
/// passes run in parallel; the reduction order is fixed by index.
pub fn batch_nll_grad(model: &ModelState, seqs: &[&TokenSeq]) -> Result<(f64, Vec<f64>)> {
    if seqs.is_empty() {
        return Err(Error::EmptyArgument("batch"));
    }
    let per_seq: Vec<Result<(f64, Vec<f64>)>> = seqs
        .par_iter()
        .map(|seq| nll_and_grad(model, seq))
        .collect();
    let mut grad = vec![0.0; model.param_count()];
    let mut total = 0.0;
    for item in per_seq {
        let (nll, g) = item?;
        total += nll;
        for (slot, gi) in grad.iter_mut().zip(&g) {
            *slot += gi;
        }
    }
    let inv = 1.0 / seqs.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((total * inv, grad))
}

/// Supervised fine-tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Minimize mean answer NLL over the data with Adam. Returns the updated
/// model; the input model is untouched. Deterministic given the seed.
pub fn finetune(model: &ModelState, data: &[TokenSeq], cfg: &FinetuneConfig) -> Result<ModelState> {
    if data.is_empty() {
        return Err(Error::EmptyArgument("training data"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    for seq in data {
        model.check_seq(seq)?;
    }
    let mut trained = model.clone();
    let mut opt = Adam::new(trained.param_count(), cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        if cfg.shuffle {
            SplitMix64::keyed(cfg.seed, &format!("finetune-epoch/{epoch}")).shuffle(&mut order);
        }
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TokenSeq> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grad) = batch_nll_grad(&trained, &batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    method: "finetune".into(),
                    epoch,
                    batch: batch_idx,
                });
            }
            opt.step(trained.params_mut(), &grad);
        }
    }
    Ok(trained)
}

const CHECKPOINT_FORMAT: &str = "unlearn-lab/model-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    tokens: Vec<String>,
    params: Vec<f64>,
}

/// Serialize a model to the self-describing JSON checkpoint format.
pub fn model_to_json(model: &ModelState) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        config: model.config.clone(),
        tokens: model.vocab.tokens().to_vec(),
        params: model.params.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<ModelState> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {:?}",
            file.format
        )));
    }
    file.config.validate()?;
    let vocab = Vocabulary::from_token_list(file.tokens)?;
    if vocab.len() != file.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            file.config.vocab_size
        )));
    }
    let expected = file.config.param_count();
    if file.params.len() != expected {
        return Err(Error::Checkpoint(format!(
            "parameter vector has {} entries, config needs {expected}",
            file.params.len()
        )));
    }
    if file.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    Ok(ModelState {
        config: file.config,
        vocab,
        params: file.params,
    })
}

/// Save a checkpoint. The byte representation is deterministic, so saving
/// an unchanged model reproduces the file exactly.
pub fn save_model<P: AsRef<Path>>(model: &ModelState, path: P) -> Result<()> {
    std::fs::write(path.as_ref(), model_to_json(model)?)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<ModelState> {
    model_from_json(&std::fs::read_to_string(path.as_ref())?)
}
