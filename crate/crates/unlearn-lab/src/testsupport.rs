//! Shared fixtures for the unit-test suites.

use crate::corpus::{CorpusBundle, NeighborKind, QAPair};
use crate::objectives::DEFAULT_REFUSAL_PHRASES;
use crate::seqmodel::{
    finetune, tokenize, FinetuneConfig, ModelConfig, ModelState, TokenSeq, UnkPolicy, Vocabulary,
};

pub(crate) fn qa(id: &str, entity: &str, kind: NeighborKind, q: &str, a: &str) -> QAPair {
    QAPair {
        id: id.into(),
        entity_id: entity.into(),
        question: q.into(),
        answer: a.into(),
        neighbor_kind: kind,
    }
}

/// Two-entity corpus over a tiny closed vocabulary.
pub(crate) fn mini_corpus() -> CorpusBundle {
    CorpusBundle::new(
        vec![
            qa(
                "f1",
                "e1",
                NeighborKind::Forget,
                "alder birch ?",
                "cedar dew",
            ),
            qa("f2", "e2", NeighborKind::Forget, "birch cedar ?", "dew elm"),
        ],
        vec![
            qa(
                "r1",
                "e1",
                NeighborKind::Direct,
                "cedar elm ?",
                "fern grove",
            ),
            qa(
                "r2",
                "e1",
                NeighborKind::Indirect,
                "dew fern ?",
                "grove hazel",
            ),
            qa(
                "r3",
                "e2",
                NeighborKind::Direct,
                "elm grove ?",
                "hazel alder",
            ),
            qa(
                "r4",
                "general",
                NeighborKind::General,
                "fern hazel ?",
                "alder birch",
            ),
        ],
        vec![
            qa(
                "t1",
                "e1",
                NeighborKind::TestDirect,
                "grove alder ?",
                "fern grove",
            ),
            qa(
                "t2",
                "e2",
                NeighborKind::TestDirect,
                "hazel birch ?",
                "hazel alder",
            ),
        ],
    )
    .unwrap()
}

/// Fresh model over the mini corpus vocabulary (refusal phrases included).
pub(crate) fn mini_vocab_model(seed: u64) -> ModelState {
    let corpus = mini_corpus();
    let refusals: Vec<&str> = DEFAULT_REFUSAL_PHRASES.to_vec();
    let vocab = Vocabulary::from_corpus(&corpus, &refusals);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 16,
        seed,
    };
    ModelState::init(config, vocab).unwrap()
}

pub(crate) fn corpus_seqs(model: &ModelState, corpus: &CorpusBundle) -> Vec<TokenSeq> {
    corpus
        .all_pairs()
        .map(|p| tokenize(&model.vocab, p, UnkPolicy::Strict, model.config.max_seq_len).unwrap())
        .collect()
}

/// Fine-tune until the mini corpus is reliably memorized.
pub(crate) fn memorize(model: &ModelState, corpus: &CorpusBundle) -> ModelState {
    finetune(
        model,
        &corpus_seqs(model, corpus),
        &FinetuneConfig {
            epochs: 150,
            batch_size: 4,
            learning_rate: 3e-3,
            seed: 5,
            shuffle: true,
        },
    )
    .unwrap()
}
