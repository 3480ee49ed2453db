use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Triple;
use crate::Real;

/// A 1-N batch: query pairs and their multi-hot label rows over all entities.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch1N {
    pub pairs: Vec<(usize, usize)>,
    /// Row-major `pairs.len() × n_entities`, 1 where the object is known.
    pub labels: Vec<u8>,
    pub n_entities: usize,
}

impl Batch1N {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subjects(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn relations(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn label_row(&self, i: usize) -> &[u8] {
        &self.labels[i * self.n_entities..(i + 1) * self.n_entities]
    }

    pub fn labels_real(&self) -> Vec<Real> {
        self.labels.iter().map(|&y| y as Real).collect()
    }
}

/// Distinct `(subject, relation)` pairs of a triple list with their objects.
#[derive(Clone, Debug)]
pub struct PairIndex {
    pairs: Vec<(usize, usize)>,
    objects: Vec<Vec<usize>>,
}

impl PairIndex {
    pub fn new(triples: &[Triple]) -> Self {
        let mut grouped: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for t in triples {
            grouped.entry((t.subject, t.relation)).or_default().push(t.object);
        }
        let (pairs, objects) = grouped
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_unstable();
                v.dedup();
                (k, v)
            })
            .unzip();
        PairIndex { pairs, objects }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs in ascending `(subject, relation)` order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn objects(&self, i: usize) -> &[usize] {
        &self.objects[i]
    }

    /// Shuffles pair positions and cuts them into batches of `batch_size`.
    /// A trailing batch of a single pair is merged into its predecessor.
    pub fn epoch_order<R: rand::Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
        batches
    }

    pub fn batch(&self, positions: &[usize], n_entities: usize) -> Batch1N {
        let mut labels = vec![0u8; positions.len() * n_entities];
        for (row, &p) in positions.iter().enumerate() {
            for &o in &self.objects[p] {
                labels[row * n_entities + o] = 1;
            }
        }
        Batch1N {
            pairs: positions.iter().map(|&p| self.pairs[p]).collect(),
            labels,
            n_entities,
        }
    }
}

/// One epoch of shuffled 1-N batches from a seeded generator.
pub fn make_batches(
    triples: &[Triple],
    n_entities: usize,
    batch_size: usize,
    seed: u64,
) -> impl Iterator<Item = Batch1N> {
    let index = PairIndex::new(triples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = index.epoch_order(batch_size, &mut rng);
    order.into_iter().map(move |pos| index.batch(&pos, n_entities))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_pair_gets_both_positives() {
        let t = [Triple::new(0, 0, 1), Triple::new(0, 0, 2)];
        let batches: Vec<_> = make_batches(&t, 3, 4, 0).collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].pairs, vec![(0, 0)]);
        assert_eq!(batches[0].label_row(0), &[0, 1, 1]);
    }

    #[test]
    fn same_seed_same_order() {
        let t: Vec<Triple> = (0..50).map(|i| Triple::new(i, i % 3, (i + 1) % 50)).collect();
        let a: Vec<_> = make_batches(&t, 50, 8, 42).collect();
        let b: Vec<_> = make_batches(&t, 50, 8, 42).collect();
        assert_eq!(a, b);
        let c: Vec<_> = make_batches(&t, 50, 8, 43).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn single_row_tail_is_merged() {
        let t: Vec<Triple> = (0..9).map(|i| Triple::new(i, 0, 0)).collect();
        let sizes: Vec<usize> = make_batches(&t, 9, 4, 1).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 5]);
        let t: Vec<Triple> = (0..10).map(|i| Triple::new(i, 0, 0)).collect();
        let sizes: Vec<usize> = make_batches(&t, 10, 4, 1).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }
}
