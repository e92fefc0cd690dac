//! Whitespace word vocabulary and question-answer tokenization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusBundle, QAPair};
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;

const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// What to do with words outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnkPolicy {
    /// Fail on unknown words; the right choice for closed synthetic corpora.
    Strict,
    /// Map unknown words to the UNK token.
    Replace,
}

/// Frozen word-level vocabulary. Ids 0..5 are the special tokens; regular
/// words follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Build from an iterator of raw texts; words are normalized, deduplicated
    /// and sorted so the result is independent of input order.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            for word in normalize_words(text) {
                words.insert(word);
            }
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Vocabulary covering every question and answer in a corpus plus any
    /// extra phrases (for example the refusal-answer pool).
    pub fn from_corpus(bundle: &CorpusBundle, extra_phrases: &[&str]) -> Self {
        Self::from_texts(
            bundle
                .all_pairs()
                .flat_map(|p| [p.question.as_str(), p.answer.as_str()])
                .chain(extra_phrases.iter().copied()),
        )
    }

    /// Rebuild from a stored token list (checkpoint loading).
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Checkpoint(
                "vocabulary shorter than the special tokens".into(),
            ));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::Checkpoint(format!(
                    "special token {i} is {:?}, expected {expected:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Encode raw text (no specials added).
    pub fn encode(&self, text: &str, policy: UnkPolicy) -> Result<Vec<TokenId>> {
        normalize_words(text)
            .into_iter()
            .map(|w| match self.index.get(&w) {
                Some(&id) => Ok(id),
                None => match policy {
                    UnkPolicy::Strict => Err(Error::UnknownWord(w)),
                    UnkPolicy::Replace => Ok(UNK),
                },
            })
            .collect()
    }

    /// Decode ids to words, skipping special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter()
            .filter(|&&id| id >= SPECIAL_TOKENS.len())
            .filter_map(|&id| self.token(id))
            .collect()
    }
}

/// Lowercase, split on whitespace, strip non-alphanumeric edges.
fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|piece| {
            let trimmed: &str = piece.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// A tokenized question-answer sample: the prompt carries BOS + question +
/// SEP, the answer carries the answer words + EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

impl TokenSeq {
    pub fn total_len(&self) -> usize {
        self.prompt.len() + self.answer.len()
    }

    /// Prompt and answer concatenated.
    pub fn full(&self) -> Vec<TokenId> {
        let mut ids = self.prompt.clone();
        ids.extend_from_slice(&self.answer);
        ids
    }
}

/// Tokenize a question-answer pair. The combined sequence must fit in
/// `max_seq_len` and the answer must be non-empty after normalization.
pub fn tokenize(
    vocab: &Vocabulary,
    qa: &QAPair,
    policy: UnkPolicy,
    max_seq_len: usize,
) -> Result<TokenSeq> {
    let mut prompt = vec![BOS];
    prompt.extend(vocab.encode(&qa.question, policy)?);
    prompt.push(SEP);
    let mut answer = vocab.encode(&qa.answer, policy)?;
    if answer.is_empty() {
        return Err(Error::InvalidPair {
            id: qa.id.clone(),
            message: "answer tokenizes to nothing".into(),
        });
    }
    answer.push(EOS);
    let len = prompt.len() + answer.len();
    if len > max_seq_len {
        return Err(Error::SequenceTooLong {
            len,
            max: max_seq_len,
        });
    }
    Ok(TokenSeq { prompt, answer })
}
