//! Triple store: vocabularies with reciprocal relations, neighbor and filter
//! indices, hop distances and dataset statistics.

mod index;
mod stats;
mod triples;
mod vocab;

use std::path::Path;

pub use index::{FilterIndex, NeighborIndex};
pub use stats::DatasetStats;
pub use triples::{encode_triples, load_triples, read_raw_triples, Triple, TripleSet, VocabMode};
pub use vocab::{EntityId, RelationId, Vocab, VocabBuilder, RECIPROCAL_SUFFIX};

use crate::error::{CoreError, Result};

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";

/// One dataset: shared vocabulary, three splits and the derived indices.
/// Immutable once built.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Vocab,
    train: TripleSet,
    valid: TripleSet,
    test: TripleSet,
    neighbors: NeighborIndex,
    filter: FilterIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(CoreError::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl KnowledgeGraph {
    pub fn new(vocab: Vocab, train: TripleSet, valid: TripleSet, test: TripleSet) -> Result<Self> {
        for t in train.iter().chain(valid.iter()).chain(test.iter()) {
            if t.subject >= vocab.num_entities() || t.object >= vocab.num_entities() {
                return Err(CoreError::Index {
                    kind: "entity",
                    id: t.subject.max(t.object),
                    size: vocab.num_entities(),
                });
            }
            if t.predicate >= vocab.num_base_relations() {
                return Err(CoreError::Index {
                    kind: "relation",
                    id: t.predicate,
                    size: vocab.num_base_relations(),
                });
            }
        }
        let neighbors = NeighborIndex::build(train.as_slice(), &vocab);
        let filter = FilterIndex::build(
            [train.as_slice(), valid.as_slice(), test.as_slice()],
            &vocab,
        );
        Ok(Self {
            vocab,
            train,
            valid,
            test,
            neighbors,
            filter,
        })
    }

    /// Build from named triples; entity and relation ids follow first
    /// appearance across train, then valid, then test.
    pub fn from_named(
        train: &[(String, String, String)],
        valid: &[(String, String, String)],
        test: &[(String, String, String)],
    ) -> Result<Self> {
        let mut b = VocabBuilder::new();
        let tr = encode_triples(train, VocabMode::Build(&mut b))?;
        let va = encode_triples(valid, VocabMode::Build(&mut b))?;
        let te = encode_triples(test, VocabMode::Build(&mut b))?;
        Self::new(b.finish(), tr, va, te)
    }

    /// Load `train.txt`, `valid.txt` and (if present) `test.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let train = read_raw_triples(&dir.join(TRAIN_FILE))?;
        let valid = read_raw_triples(&dir.join(VALID_FILE))?;
        let test_path = dir.join(TEST_FILE);
        let test = if test_path.exists() {
            read_raw_triples(&test_path)?
        } else {
            Vec::new()
        };
        Self::from_named(&train, &valid, &test)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn train(&self) -> &TripleSet {
        &self.train
    }

    pub fn valid(&self) -> &TripleSet {
        &self.valid
    }

    pub fn test(&self) -> &TripleSet {
        &self.test
    }

    pub fn split(&self, split: Split) -> &TripleSet {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn neighbors(&self) -> &NeighborIndex {
        &self.neighbors
    }

    pub fn neighbors_of(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.neighbors.neighbors_of(e)
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    pub fn filtered_candidates(&self, src: EntityId, rel: RelationId, gold: EntityId) -> Vec<bool> {
        self.filter.filtered_candidates(src, rel, gold)
    }

    pub fn hop_distance(&self, a: EntityId, b: EntityId) -> Result<Option<usize>> {
        self.neighbors.hop_distance(a, b)
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::of(self)
    }
}
