use std::collections::HashMap;

use super::Triple;
use crate::{Error, Result};

/// Suffix naming the inverse of a relation.
pub const INVERSE_SUFFIX: &str = "_inv";

/// Bijection between names and contiguous ids, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    pub entities: Interner,
    pub relations: Interner,
    /// Relation count before inverse augmentation, once augmented.
    raw_relations: Option<usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_augmented(&self) -> bool {
        self.raw_relations.is_some()
    }

    /// Relations excluding inverses.
    pub fn raw_relation_count(&self) -> usize {
        self.raw_relations.unwrap_or(self.relations.len())
    }

    /// Id of the inverse of `relation` (in either direction).
    pub fn inverse_of(&self, relation: usize) -> Option<usize> {
        let raw = self.raw_relations?;
        match relation {
            r if r < raw => Some(r + raw),
            r if r < 2 * raw => Some(r - raw),
            _ => None,
        }
    }

    pub fn entity_name(&self, id: usize) -> &str {
        self.entities.name(id).unwrap_or("?")
    }

    pub fn relation_name(&self, id: usize) -> &str {
        self.relations.name(id).unwrap_or("?")
    }
}

pub(crate) fn augment(triples: &[Triple], raw_relations: usize) -> Vec<Triple> {
    let mut out = Vec::with_capacity(triples.len() * 2);
    out.extend_from_slice(triples);
    out.extend(
        triples
            .iter()
            .map(|t| Triple::new(t.object, t.relation + raw_relations, t.subject)),
    );
    out
}

/// Adds `(o, r_inv, s)` for every `(s, r, o)`. Inverse of relation `i` gets
/// id `i + |R_raw|` and the name `<name>_inv`.
pub fn add_inverse_relations(triples: &[Triple], vocab: &Vocab) -> Result<(Vec<Triple>, Vocab)> {
    if vocab.is_augmented() {
        return Err(Error::State("vocabulary already has inverse relations".into()));
    }
    let raw = vocab.relations.len();
    let mut out = vocab.clone();
    for name in vocab.relations.names() {
        let inverse = format!("{name}{INVERSE_SUFFIX}");
        if out.relations.id(&inverse).is_some() {
            return Err(Error::State(format!(
                "relation '{inverse}' already exists; cannot add inverses"
            )));
        }
        out.relations.intern(&inverse);
    }
    out.raw_relations = Some(raw);
    Ok((augment(triples, raw), out))
}
