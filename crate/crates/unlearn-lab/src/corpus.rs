//! Entity-structured unlearning corpora.
//!
//! A corpus is split into a forget set, a disjoint retain set built from
//! neighbor samples plus general knowledge, and a held-out test set. Samples
//! are question-answer pairs tagged with the entity they belong to and the
//! kind of neighborhood they occupy. This module covers ingestion and
//! validation of the JSONL wire format, the retain-set composition operators,
//! and the edit-distance similarity diagnostic between forget and retain
//! questions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Sentinel entity id carried by general-knowledge pairs.
pub const GENERAL_ENTITY: &str = "general";

/// Which of the three corpus partitions a pair lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Forget,
    Retain,
    Test,
}

/// Neighborhood kind of a question-answer pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborKind {
    Forget,
    Direct,
    Indirect,
    General,
    TestDirect,
    TestIndirect,
    TestGeneral,
}

impl NeighborKind {
    /// The partition this kind must appear in.
    pub fn split(self) -> Split {
        match self {
            NeighborKind::Forget => Split::Forget,
            NeighborKind::Direct | NeighborKind::Indirect | NeighborKind::General => Split::Retain,
            NeighborKind::TestDirect | NeighborKind::TestIndirect | NeighborKind::TestGeneral => {
                Split::Test
            }
        }
    }

    pub fn is_general(self) -> bool {
        matches!(self, NeighborKind::General | NeighborKind::TestGeneral)
    }
}

/// One question-answer sample tagged with its entity and neighbor kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub entity_id: String,
    pub question: String,
    pub answer: String,
    pub neighbor_kind: NeighborKind,
}

impl QAPair {
    /// Entity key used for grouping; general pairs map to the sentinel.
    pub fn entity_key(&self) -> &str {
        if self.neighbor_kind.is_general() || self.entity_id.is_empty() {
            GENERAL_ENTITY
        } else {
            &self.entity_id
        }
    }

    fn check(&self) -> Result<()> {
        if self.question.is_empty() {
            return Err(Error::InvalidPair {
                id: self.id.clone(),
                message: "question is empty".into(),
            });
        }
        if self.answer.is_empty() {
            return Err(Error::InvalidPair {
                id: self.id.clone(),
                message: "answer is empty".into(),
            });
        }
        let needs_entity = matches!(
            self.neighbor_kind,
            NeighborKind::Forget | NeighborKind::Direct | NeighborKind::Indirect
        );
        if needs_entity && self.entity_id.is_empty() {
            return Err(Error::InvalidPair {
                id: self.id.clone(),
                message: format!("{:?} pair has empty entity_id", self.neighbor_kind),
            });
        }
        Ok(())
    }
}

/// Wire representation of one JSONL line. The `split` field is redundant
/// with `neighbor_kind` and is cross-checked on load.
#[derive(Debug, Serialize, Deserialize)]
struct WireQA {
    id: String,
    entity_id: String,
    split: Split,
    neighbor_kind: NeighborKind,
    question: String,
    answer: String,
}

/// Validated forget/retain/test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    forget: Vec<QAPair>,
    retain: Vec<QAPair>,
    test: Vec<QAPair>,
    entities: Vec<String>,
}

impl CorpusBundle {
    /// Build a bundle from partition lists, checking every invariant:
    /// ids unique across partitions, kinds consistent with their partition,
    /// non-empty text, entity tags present where required.
    pub fn new(forget: Vec<QAPair>, retain: Vec<QAPair>, test: Vec<QAPair>) -> Result<Self> {
        if forget.is_empty() && retain.is_empty() && test.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = BTreeSet::new();
        for (pair, expected) in forget
            .iter()
            .map(|p| (p, Split::Forget))
            .chain(retain.iter().map(|p| (p, Split::Retain)))
            .chain(test.iter().map(|p| (p, Split::Test)))
        {
            pair.check()?;
            if pair.neighbor_kind.split() != expected {
                return Err(Error::InvalidPair {
                    id: pair.id.clone(),
                    message: format!(
                        "{:?} pair cannot live in the {:?} split",
                        pair.neighbor_kind, expected
                    ),
                });
            }
            if !seen.insert(pair.id.clone()) {
                return Err(Error::DuplicateId(pair.id.clone()));
            }
        }
        let mut entities = Vec::new();
        for pair in &forget {
            if !entities.iter().any(|e| e == &pair.entity_id) {
                entities.push(pair.entity_id.clone());
            }
        }
        Ok(Self {
            forget,
            retain,
            test,
            entities,
        })
    }

    pub fn forget(&self) -> &[QAPair] {
        &self.forget
    }

    pub fn retain(&self) -> &[QAPair] {
        &self.retain
    }

    pub fn test(&self) -> &[QAPair] {
        &self.test
    }

    /// Forget entities in first-appearance order.
    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = &QAPair> {
        self.forget
            .iter()
            .chain(self.retain.iter())
            .chain(self.test.iter())
    }

    pub fn len(&self) -> usize {
        self.forget.len() + self.retain.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Retain-set composition setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    /// Direct neighbors plus general knowledge.
    #[serde(rename = "direct")]
    DirectOnly,
    /// Indirect neighbors plus general knowledge.
    #[serde(rename = "indirect")]
    IndirectOnly,
    /// All direct neighbors, a per-entity indirect subset of equal size,
    /// plus general knowledge.
    Balanced,
    /// The entire retain pool.
    Full,
}

impl CompositionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositionMode::DirectOnly => "direct",
            CompositionMode::IndirectOnly => "indirect",
            CompositionMode::Balanced => "balanced",
            CompositionMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetainComposition {
    pub mode: CompositionMode,
    pub seed: u64,
}

/// Read a corpus from a JSONL reader. Line numbers are 1-based in errors.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<CorpusBundle> {
    let mut forget = Vec::new();
    let mut retain = Vec::new();
    let mut test = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireQA = serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if wire.neighbor_kind.split() != wire.split {
            return Err(Error::CorpusParse {
                line: idx + 1,
                message: format!(
                    "split {:?} does not match neighbor_kind {:?}",
                    wire.split, wire.neighbor_kind
                ),
            });
        }
        let pair = QAPair {
            id: wire.id,
            entity_id: wire.entity_id,
            question: wire.question,
            answer: wire.answer,
            neighbor_kind: wire.neighbor_kind,
        };
        match wire.split {
            Split::Forget => forget.push(pair),
            Split::Retain => retain.push(pair),
            Split::Test => test.push(pair),
        }
    }
    CorpusBundle::new(forget, retain, test)
}

/// Load a corpus from a JSONL file.
pub fn load_corpus<P: AsRef<Path>>(path: P) -> Result<CorpusBundle> {
    let file = std::fs::File::open(path.as_ref())?;
    read_corpus(std::io::BufReader::new(file))
}

/// Write a corpus as JSONL, forget then retain then test, preserving order.
pub fn write_corpus<W: Write>(bundle: &CorpusBundle, mut writer: W) -> Result<()> {
    for pair in bundle.all_pairs() {
        let wire = WireQA {
            id: pair.id.clone(),
            entity_id: pair.entity_id.clone(),
            split: pair.neighbor_kind.split(),
            neighbor_kind: pair.neighbor_kind,
            question: pair.question.clone(),
            answer: pair.answer.clone(),
        };
        serde_json::to_writer(&mut writer, &wire)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Save a corpus to a JSONL file.
pub fn save_corpus<P: AsRef<Path>>(bundle: &CorpusBundle, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_corpus(bundle, std::io::BufWriter::new(file))
}

/// Serialize a corpus to an in-memory JSONL string.
pub fn corpus_to_jsonl(bundle: &CorpusBundle) -> Result<String> {
    let mut buf = Vec::new();
    write_corpus(bundle, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Select the retain subset for a composition setting.
///
/// Output preserves the retain pool's input order. Balanced selection is
/// seeded per entity, so the chosen indirect subset does not depend on the
/// order entities appear in.
pub fn compose_retain(bundle: &CorpusBundle, comp: RetainComposition) -> Result<Vec<QAPair>> {
    let retain = bundle.retain();
    match comp.mode {
        CompositionMode::Full => Ok(retain.to_vec()),
        CompositionMode::DirectOnly => Ok(retain
            .iter()
            .filter(|p| {
                matches!(
                    p.neighbor_kind,
                    NeighborKind::Direct | NeighborKind::General
                )
            })
            .cloned()
            .collect()),
        CompositionMode::IndirectOnly => Ok(retain
            .iter()
            .filter(|p| {
                matches!(
                    p.neighbor_kind,
                    NeighborKind::Indirect | NeighborKind::General
                )
            })
            .cloned()
            .collect()),
        CompositionMode::Balanced => {
            let mut direct_count: BTreeMap<&str, usize> = BTreeMap::new();
            let mut indirect_pos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, pair) in retain.iter().enumerate() {
                match pair.neighbor_kind {
                    NeighborKind::Direct => {
                        *direct_count.entry(pair.entity_id.as_str()).or_default() += 1;
                    }
                    NeighborKind::Indirect => {
                        indirect_pos
                            .entry(pair.entity_id.as_str())
                            .or_default()
                            .push(i);
                    }
                    _ => {}
                }
            }
            let mut keep = vec![false; retain.len()];
            for (entity, &needed) in &direct_count {
                let available = indirect_pos.get(entity).map_or(0, Vec::len);
                if available < needed {
                    return Err(Error::Composition {
                        entity: (*entity).to_string(),
                        needed,
                        available,
                    });
                }
                let mut rng = SplitMix64::keyed(comp.seed, entity);
                let positions = &indirect_pos[entity];
                for pick in rng.sample_indices(positions.len(), needed) {
                    keep[positions[pick]] = true;
                }
            }
            Ok(retain
                .iter()
                .enumerate()
                .filter(|(i, p)| match p.neighbor_kind {
                    NeighborKind::Direct | NeighborKind::General => true,
                    NeighborKind::Indirect => keep[*i],
                    _ => false,
                })
                .map(|(_, p)| p.clone())
                .collect())
        }
    }
}

/// Character-level Levenshtein distance, two-row dynamic program.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized similarity `1 - lev(a, b) / max(|a|, |b|)` over characters.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

/// Mean, over forget questions, of the similarity to the nearest retain
/// question (maximum normalized similarity over the retain pool).
pub fn syntactic_similarity_mean(forget: &[QAPair], retain: &[QAPair]) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::EmptyArgument("forget list"));
    }
    if retain.is_empty() {
        return Err(Error::EmptyArgument("retain list"));
    }
    let best: Vec<f64> = forget
        .par_iter()
        .map(|f| {
            retain
                .iter()
                .map(|r| normalized_similarity(&f.question, &r.question))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(best.iter().sum::<f64>() / best.len() as f64)
}
