//! Forget-retain pairing schedules.
//!
//! A schedule fixes, for every epoch, the ordered list of
//! (forget sample, retain sample) pairs the unlearning loop will consume.
//! Four strategies are provided:
//!
//! * `OneToOneSeq` pairs each forget sample with the retain pool's head,
//!   identically every epoch.
//! * `OneToOneRandom` redraws one distinct retain sample per forget sample
//!   each epoch.
//! * `Cyclic` walks the whole retain pool once per epoch, cycling the
//!   forget set over it.
//! * `Melu` also covers the whole retain pool, but pairs each retain sample
//!   only with a forget sample of the same entity; general-knowledge
//!   samples get a seeded random forget partner.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{NeighborKind, QAPair};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[serde(rename = "one2one-seq")]
    OneToOneSeq,
    #[serde(rename = "one2one-rand")]
    OneToOneRandom,
    Cyclic,
    Melu,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::OneToOneSeq => "one2one-seq",
            StrategyKind::OneToOneRandom => "one2one-rand",
            StrategyKind::Cyclic => "cyclic",
            StrategyKind::Melu => "melu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingStrategy {
    pub kind: StrategyKind,
    /// Consumed by `OneToOneRandom` resampling and `Melu`'s assignment of
    /// forget partners to general-knowledge samples.
    pub seed: u64,
}

/// One scheduled pair, by sample id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub forget_id: String,
    pub retain_id: String,
}

/// Ordered pairs per epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSchedule {
    pub epochs: Vec<Vec<PairRef>>,
}

impl PairSchedule {
    pub fn n_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn pairs_per_epoch(&self) -> usize {
        self.epochs.first().map_or(0, Vec::len)
    }

    /// Dump as JSONL, one row per pair.
    pub fn dump<W: Write>(&self, mut writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            epoch: usize,
            index: usize,
            forget_id: &'a str,
            retain_id: &'a str,
        }
        for (epoch, pairs) in self.epochs.iter().enumerate() {
            for (index, pair) in pairs.iter().enumerate() {
                serde_json::to_writer(
                    &mut writer,
                    &Row {
                        epoch,
                        index,
                        forget_id: &pair.forget_id,
                        retain_id: &pair.retain_id,
                    },
                )?;
                writer.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// A contiguous slice of one epoch's pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub epoch: usize,
    pub pairs: Vec<PairRef>,
}

/// Gradient-accumulation batching of a schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Batch>,
}

/// Build the per-epoch pairing for a strategy.
pub fn build_schedule(
    strategy: SamplingStrategy,
    forget: &[QAPair],
    retain: &[QAPair],
    n_epochs: usize,
) -> Result<PairSchedule> {
    if forget.is_empty() {
        return Err(Error::EmptyArgument("forget list"));
    }
    if retain.is_empty() {
        return Err(Error::EmptyArgument("retain list"));
    }
    if n_epochs == 0 {
        return Err(Error::InvalidArgument("n_epochs must be at least 1".into()));
    }
    let epochs: Vec<Vec<PairRef>> = match strategy.kind {
        StrategyKind::OneToOneSeq => {
            let epoch = one_to_one_head(forget, retain)?;
            vec![epoch; n_epochs]
        }
        StrategyKind::OneToOneRandom => (0..n_epochs)
            .map(|epoch| one_to_one_random(forget, retain, strategy.seed, epoch))
            .collect::<Result<_>>()?,
        StrategyKind::Cyclic => {
            let epoch = cyclic_epoch(forget, retain);
            vec![epoch; n_epochs]
        }
        StrategyKind::Melu => {
            let epoch = melu_epoch(forget, retain, strategy.seed)?;
            vec![epoch; n_epochs]
        }
    };
    Ok(PairSchedule { epochs })
}

fn one_to_one_head(forget: &[QAPair], retain: &[QAPair]) -> Result<Vec<PairRef>> {
    if retain.len() < forget.len() {
        return Err(Error::InsufficientRetain {
            needed: forget.len(),
            available: retain.len(),
        });
    }
    Ok(forget
        .iter()
        .zip(retain.iter())
        .map(|(f, r)| PairRef {
            forget_id: f.id.clone(),
            retain_id: r.id.clone(),
        })
        .collect())
}

fn one_to_one_random(
    forget: &[QAPair],
    retain: &[QAPair],
    seed: u64,
    epoch: usize,
) -> Result<Vec<PairRef>> {
    if retain.len() < forget.len() {
        return Err(Error::InsufficientRetain {
            needed: forget.len(),
            available: retain.len(),
        });
    }
    let mut rng = SplitMix64::keyed(seed, &format!("one2one-rand/epoch/{epoch}"));
    let picks = rng.sample_indices(retain.len(), forget.len());
    Ok(forget
        .iter()
        .zip(picks)
        .map(|(f, r)| PairRef {
            forget_id: f.id.clone(),
            retain_id: retain[r].id.clone(),
        })
        .collect())
}

fn cyclic_epoch(forget: &[QAPair], retain: &[QAPair]) -> Vec<PairRef> {
    retain
        .iter()
        .enumerate()
        .map(|(k, r)| PairRef {
            forget_id: forget[k % forget.len()].id.clone(),
            retain_id: r.id.clone(),
        })
        .collect()
}

fn melu_epoch(forget: &[QAPair], retain: &[QAPair], seed: u64) -> Result<Vec<PairRef>> {
    let mut forget_by_entity: BTreeMap<&str, Vec<&QAPair>> = BTreeMap::new();
    for f in forget {
        forget_by_entity
            .entry(f.entity_id.as_str())
            .or_default()
            .push(f);
    }

    // Entity blocks in first-appearance order of entity_id in the retain
    // pool; general samples trail behind.
    let mut block_order: Vec<&str> = Vec::new();
    let mut blocks: BTreeMap<&str, Vec<&QAPair>> = BTreeMap::new();
    let mut general: Vec<&QAPair> = Vec::new();
    for r in retain {
        if r.neighbor_kind == NeighborKind::General {
            general.push(r);
            continue;
        }
        let entity = r.entity_id.as_str();
        if !blocks.contains_key(entity) {
            let owners = forget_by_entity.get(entity);
            if owners.is_none() {
                return Err(Error::OrphanEntity(entity.to_string()));
            }
            block_order.push(entity);
        }
        blocks.entry(entity).or_default().push(r);
    }

    let mut pairs = Vec::with_capacity(retain.len());
    for entity in block_order {
        let owners = &forget_by_entity[entity];
        let block = &blocks[entity];
        if owners.len() > block.len() {
            log::warn!(
                "entity {entity}: {} forget samples but only {} retain samples; surplus forget samples are dropped this epoch",
                owners.len(),
                block.len()
            );
        }
        for (j, r) in block.iter().enumerate() {
            pairs.push(PairRef {
                forget_id: owners[j % owners.len()].id.clone(),
                retain_id: r.id.clone(),
            });
        }
    }
    // General-knowledge samples: seeded forget partner, keyed by the retain
    // id so the assignment is independent of list order.
    for r in general {
        let mut rng = SplitMix64::keyed(seed, &format!("melu-general/{}", r.id));
        pairs.push(PairRef {
            forget_id: rng.choose(forget).id.clone(),
            retain_id: r.id.clone(),
        });
    }
    Ok(pairs)
}

/// Slice a schedule into contiguous gradient-accumulation batches. Batches
/// never span epochs; the last batch of an epoch may be short.
pub fn batch_schedule(schedule: &PairSchedule, batch_size: usize) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let mut batches = Vec::new();
    for (epoch, pairs) in schedule.epochs.iter().enumerate() {
        for chunk in pairs.chunks(batch_size) {
            batches.push(Batch {
                epoch,
                pairs: chunk.to_vec(),
            });
        }
    }
    Ok(BatchPlan {
        batch_size,
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NeighborKind;

    fn qa(id: &str, entity: &str, kind: NeighborKind) -> QAPair {
        QAPair {
            id: id.to_string(),
            entity_id: entity.to_string(),
            question: format!("question {id} ?"),
            answer: format!("answer {id}"),
            neighbor_kind: kind,
        }
    }

    fn forget_pool(n: usize) -> Vec<QAPair> {
        (0..n)
            .map(|i| {
                qa(
                    &format!("f{i}"),
                    &format!("e{}", i % 7),
                    NeighborKind::Forget,
                )
            })
            .collect()
    }

    fn retain_pool(n: usize) -> Vec<QAPair> {
        (0..n)
            .map(|i| {
                qa(
                    &format!("r{i}"),
                    &format!("e{}", i % 7),
                    NeighborKind::Direct,
                )
            })
            .collect()
    }

    #[test]
    fn cyclic_uses_index_arithmetic() {
        let forget = forget_pool(98);
        let retain = retain_pool(1801);
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Cyclic,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        assert_eq!(s.epochs[0].len(), 1801);
        // pair 100 = (forget[100 mod 98], retain[100])
        assert_eq!(s.epochs[0][100].forget_id, "f2");
        assert_eq!(s.epochs[0][100].retain_id, "r100");
    }

    #[test]
    fn melu_cycles_forget_within_entity() {
        let forget = vec![
            qa("f1", "a", NeighborKind::Forget),
            qa("f2", "a", NeighborKind::Forget),
        ];
        let retain = vec![
            qa("r1", "a", NeighborKind::Direct),
            qa("r2", "a", NeighborKind::Indirect),
            qa("r3", "a", NeighborKind::Direct),
        ];
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Melu,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        let got: Vec<(&str, &str)> = s.epochs[0]
            .iter()
            .map(|p| (p.forget_id.as_str(), p.retain_id.as_str()))
            .collect();
        assert_eq!(got, vec![("f1", "r1"), ("f2", "r2"), ("f1", "r3")]);
    }

    #[test]
    fn melu_blocks_follow_retain_first_appearance_order() {
        let forget = vec![
            qa("f1", "a", NeighborKind::Forget),
            qa("f2", "b", NeighborKind::Forget),
        ];
        let retain = vec![
            qa("rb", "b", NeighborKind::Direct),
            qa("g1", "general", NeighborKind::General),
            qa("ra", "a", NeighborKind::Direct),
            qa("rb2", "b", NeighborKind::Indirect),
        ];
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Melu,
                seed: 5,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        let retain_order: Vec<&str> = s.epochs[0].iter().map(|p| p.retain_id.as_str()).collect();
        assert_eq!(retain_order, vec!["rb", "rb2", "ra", "g1"]);
    }

    #[test]
    fn melu_general_assignment_is_keyed_by_retain_id() {
        let forget = forget_pool(14);
        let mut retain: Vec<QAPair> = (0..6)
            .map(|i| qa(&format!("g{i}"), "general", NeighborKind::General))
            .collect();
        let strategy = SamplingStrategy {
            kind: StrategyKind::Melu,
            seed: 77,
        };
        let a = build_schedule(strategy, &forget, &retain, 1).unwrap();
        retain.reverse();
        let b = build_schedule(strategy, &forget, &retain, 1).unwrap();
        let map = |s: &PairSchedule| -> BTreeMap<String, String> {
            s.epochs[0]
                .iter()
                .map(|p| (p.retain_id.clone(), p.forget_id.clone()))
                .collect()
        };
        assert_eq!(map(&a), map(&b));
    }

    #[test]
    fn melu_rejects_orphan_retain_entities() {
        let forget = vec![qa("f1", "a", NeighborKind::Forget)];
        let retain = vec![qa("r1", "zz", NeighborKind::Direct)];
        let err = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Melu,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::OrphanEntity(e) if e == "zz"));
    }

    #[test]
    fn melu_drops_surplus_forget_samples() {
        let forget = vec![
            qa("f1", "a", NeighborKind::Forget),
            qa("f2", "a", NeighborKind::Forget),
            qa("f3", "a", NeighborKind::Forget),
        ];
        let retain = vec![qa("r1", "a", NeighborKind::Direct)];
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Melu,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        assert_eq!(s.epochs[0].len(), 1);
        assert_eq!(s.epochs[0][0].forget_id, "f1");
    }

    #[test]
    fn one_to_one_seq_takes_the_retain_head() {
        let forget = forget_pool(98);
        let retain = retain_pool(200);
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::OneToOneSeq,
                seed: 0,
            },
            &forget,
            &retain,
            3,
        )
        .unwrap();
        for epoch in &s.epochs {
            assert_eq!(epoch.len(), 98);
            for (i, p) in epoch.iter().enumerate() {
                assert_eq!(p.forget_id, format!("f{i}"));
                assert_eq!(p.retain_id, format!("r{i}"));
            }
        }
    }

    #[test]
    fn one_to_one_requires_enough_retain() {
        let forget = forget_pool(10);
        let retain = retain_pool(9);
        for kind in [StrategyKind::OneToOneSeq, StrategyKind::OneToOneRandom] {
            let err = build_schedule(SamplingStrategy { kind, seed: 1 }, &forget, &retain, 1)
                .unwrap_err();
            assert!(matches!(
                err,
                Error::InsufficientRetain {
                    needed: 10,
                    available: 9
                }
            ));
        }
    }

    #[test]
    fn one_to_one_random_resamples_each_epoch() {
        let forget = forget_pool(10);
        let retain = retain_pool(40);
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::OneToOneRandom,
                seed: 3,
            },
            &forget,
            &retain,
            4,
        )
        .unwrap();
        for epoch in &s.epochs {
            let mut ids: Vec<&str> = epoch.iter().map(|p| p.retain_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 10, "retain picks must be distinct in an epoch");
        }
        assert!(
            s.epochs.windows(2).any(|w| w[0] != w[1]),
            "epochs should differ under resampling"
        );
    }

    #[test]
    fn schedules_are_deterministic() {
        let forget = forget_pool(12);
        let retain = retain_pool(50);
        for kind in [
            StrategyKind::OneToOneSeq,
            StrategyKind::OneToOneRandom,
            StrategyKind::Cyclic,
            StrategyKind::Melu,
        ] {
            let strategy = SamplingStrategy { kind, seed: 9 };
            let a = build_schedule(strategy, &forget, &retain, 3).unwrap();
            let b = build_schedule(strategy, &forget, &retain, 3).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn batching_keeps_order_and_sizes() {
        let forget = forget_pool(98);
        let retain = retain_pool(1801);
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Cyclic,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        let plan = batch_schedule(&s, 8).unwrap();
        assert_eq!(plan.batches.len(), 226); // ceil(1801 / 8)
        assert_eq!(plan.batches.last().unwrap().pairs.len(), 1); // 1801 mod 8
        assert!(plan.batches[..225].iter().all(|b| b.pairs.len() == 8));
        let rebuilt: Vec<PairRef> = plan
            .batches
            .iter()
            .flat_map(|b| b.pairs.iter().cloned())
            .collect();
        assert_eq!(rebuilt, s.epochs[0]);
    }

    #[test]
    fn batch_size_one_is_identity_slicing() {
        let forget = forget_pool(3);
        let retain = retain_pool(8);
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Cyclic,
                seed: 0,
            },
            &forget,
            &retain,
            2,
        )
        .unwrap();
        let plan = batch_schedule(&s, 1).unwrap();
        assert_eq!(plan.batches.len(), 16);
        assert!(plan.batches.iter().all(|b| b.pairs.len() == 1));
        assert!(matches!(
            batch_schedule(&s, 0),
            Err(Error::InvalidArgument(_))
        ));
        let whole = batch_schedule(&s, 8).unwrap();
        assert_eq!(whole.batches.len(), 2); // one batch per epoch
    }

    #[test]
    fn schedule_dump_format() {
        let forget = vec![qa("f1", "a", NeighborKind::Forget)];
        let retain = vec![qa("r1", "a", NeighborKind::Direct)];
        let s = build_schedule(
            SamplingStrategy {
                kind: StrategyKind::Cyclic,
                seed: 0,
            },
            &forget,
            &retain,
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        s.dump(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"epoch\":0,\"index\":0,\"forget_id\":\"f1\",\"retain_id\":\"r1\"}\n"
        );
    }
}
