use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::KnowledgeGraph;
use crate::{Error, Result};

/// Relations of the synthetic graph, in id order.
pub const TOY_RELATIONS: [&str; 3] = ["plus1", "plus2", "mirror"];

fn toy_object(relation: usize, s: usize, n: usize) -> usize {
    match relation {
        0 => (s + 1) % n,
        1 => (s + 2) % n,
        _ => n - 1 - s,
    }
}

/// Named train/valid/test triples of the modular-arithmetic graph.
///
/// Entities are `0..n`; `plus1`, `plus2` and `mirror` map `s` to `s+1`,
/// `s+2` (mod n) and `n-1-s`. The `3n` facts are shuffled with `seed` and
/// split 80/10/10.
pub fn toy_triples(n_entities: usize, seed: u64) -> Result<[Vec<[String; 3]>; 3]> {
    if n_entities < 20 {
        return Err(Error::param(format!("toy graph needs at least 20 entities, got {n_entities}")));
    }
    let n = n_entities;
    let mut facts: Vec<[String; 3]> = (0..TOY_RELATIONS.len())
        .flat_map(|r| {
            (0..n).map(move |s| [s.to_string(), TOY_RELATIONS[r].to_string(), toy_object(r, s, n).to_string()])
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    facts.shuffle(&mut rng);
    let n_train = facts.len() * 8 / 10;
    let n_valid = facts.len() / 10;
    let test = facts.split_off(n_train + n_valid);
    let valid = facts.split_off(n_train);
    Ok([facts, valid, test])
}

/// Deterministic synthetic graph; see [`toy_triples`].
pub fn generate_toy_kg(n_entities: usize, seed: u64) -> Result<KnowledgeGraph> {
    let [train, valid, test] = toy_triples(n_entities, seed)?;
    KnowledgeGraph::from_named(&train, &valid, &test)
}
