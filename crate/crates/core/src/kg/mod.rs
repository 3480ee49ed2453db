//! Triple corpora: vocabularies, splits, the filtered truth index and
//! 1-N training batches.

mod batch;
mod io;
mod toy;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use batch::{make_batches, Batch1N, PairIndex};
pub use io::{load_triples, parse_triples, write_dataset, write_triples, VocabMode};
pub use toy::{generate_toy_kg, toy_triples, TOY_RELATIONS};
pub use vocab::{add_inverse_relations, Interner, Vocab, INVERSE_SUFFIX};

use crate::{Error, Result};

/// A fact `(subject, relation, object)` over dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::param(format!("unknown split '{other}'"))),
        }
    }
}

/// One object-prediction query with its gold answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Query {
    pub subject: usize,
    pub relation: usize,
    pub gold: usize,
}

/// Maps `(subject, relation)` to the sorted set of every known object.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruthIndex {
    map: HashMap<(usize, usize), Vec<usize>>,
}

impl TruthIndex {
    pub fn build<'a>(splits: impl IntoIterator<Item = &'a [Triple]>) -> Self {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for split in splits {
            for t in split {
                map.entry((t.subject, t.relation)).or_default().push(t.object);
            }
        }
        for objects in map.values_mut() {
            objects.sort_unstable();
            objects.dedup();
        }
        TruthIndex { map }
    }

    pub fn objects(&self, subject: usize, relation: usize) -> &[usize] {
        self.map.get(&(subject, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.objects(t.subject, t.relation).binary_search(&t.object).is_ok()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.map.keys()
    }
}

/// Filter index over the union of the given (already augmented) splits.
pub fn build_truth_index(splits: &[&[Triple]]) -> TruthIndex {
    TruthIndex::build(splits.iter().copied())
}

/// Immutable dataset: inverse-augmented vocabulary, raw splits, the
/// augmented training triples and the filter index.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    train_augmented: Vec<Triple>,
    truth: TruthIndex,
}

impl KnowledgeGraph {
    /// Builds the graph from raw splits over a not-yet-augmented vocabulary.
    pub fn from_splits(
        vocab: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (train_augmented, vocab) = add_inverse_relations(&train, &vocab)?;
        let raw = vocab.raw_relation_count();
        let valid_aug = vocab::augment(&valid, raw);
        let test_aug = vocab::augment(&test, raw);
        let truth = TruthIndex::build([&train_augmented[..], &valid_aug[..], &test_aug[..]]);
        Ok(KnowledgeGraph {
            vocab,
            train,
            valid,
            test,
            train_augmented,
            truth,
        })
    }

    /// Builds from named triples; ids are assigned first-seen, train first.
    pub fn from_named(
        train: &[[String; 3]],
        valid: &[[String; 3]],
        test: &[[String; 3]],
    ) -> Result<Self> {
        let mut vocab = Vocab::new();
        let intern = |rows: &[[String; 3]], vocab: &mut Vocab| -> Vec<Triple> {
            rows.iter()
                .map(|[s, r, o]| {
                    Triple::new(
                        vocab.entities.intern(s),
                        vocab.relations.intern(r),
                        vocab.entities.intern(o),
                    )
                })
                .collect()
        };
        let train = intern(train, &mut vocab);
        let valid = intern(valid, &mut vocab);
        let test = intern(test, &mut vocab);
        Self::from_splits(vocab, train, valid, test)
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
    /// Valid/test entities must already appear in train when `strict`.
    pub fn load_dir(dir: &Path, strict: bool) -> Result<Self> {
        let mut vocab = Vocab::new();
        let train = load_triples(&dir.join(Split::Train.file_name()), &mut vocab, VocabMode::Extend)?;
        let mode = if strict { VocabMode::Strict } else { VocabMode::Extend };
        let valid = load_triples(&dir.join(Split::Valid.file_name()), &mut vocab, mode)?;
        let test = load_triples(&dir.join(Split::Test.file_name()), &mut vocab, mode)?;
        Self::from_splits(vocab, train, valid, test)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_entities(&self) -> usize {
        self.vocab.entity_count()
    }

    /// Relation count including inverses.
    pub fn n_relations(&self) -> usize {
        self.vocab.relation_count()
    }

    /// Raw (un-augmented) triples of a split.
    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Training triples in both directions.
    pub fn train_augmented(&self) -> &[Triple] {
        &self.train_augmented
    }

    /// Both directions of a split, raw triples first.
    pub fn augmented(&self, split: Split) -> Vec<Triple> {
        match split {
            Split::Train => self.train_augmented.clone(),
            other => vocab::augment(self.split(other), self.vocab.raw_relation_count()),
        }
    }

    pub fn truth(&self) -> &TruthIndex {
        &self.truth
    }

    /// Object-side queries `(s, r) -> o` and `(o, r_inv) -> s` per triple.
    pub fn queries(&self, split: Split) -> Vec<Query> {
        self.augmented(split)
            .into_iter()
            .map(|t| Query {
                subject: t.subject,
                relation: t.relation,
                gold: t.object,
            })
            .collect()
    }
}
