use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DiffArray, ParamId, ParamStore, Tape, Var};
use crate::{Error, Real, Result};

/// Affine map `y = x (W ⊙ M)ᵀ + b` with a mask `M` fixed at construction.
///
/// A dense layer is the same struct without a mask. Biases are never masked.
#[derive(Clone, Debug)]
pub struct SparseLinear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub sparsity: Real,
}

/// I.i.d. keep-mask: each entry is `false` (pruned) with probability `alpha`.
pub fn sample_mask<R: Rng + ?Sized>(len: usize, alpha: Real, rng: &mut R) -> Vec<bool> {
    (0..len).map(|_| (rng.random::<f64>() as Real) >= alpha).collect()
}

fn glorot_uniform<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Vec<Real> {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    (0..out * inp)
        .map(|_| rng.random_range(-bound..bound) as Real)
        .collect()
}

/// Builds an `out × in` sparse layer in `store`, seeded by `seed`.
pub fn init_sparse_linear(
    store: &mut ParamStore,
    name: &str,
    out_dim: usize,
    in_dim: usize,
    alpha: Real,
    seed: u64,
) -> Result<SparseLinear> {
    SparseLinear::new(store, name, out_dim, in_dim, alpha, &mut ChaCha8Rng::seed_from_u64(seed))
}

impl SparseLinear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        alpha: Real,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::param(format!("sparsity {alpha} outside [0, 1)")));
        }
        let mask = sample_mask(out_dim * in_dim, alpha, rng);
        // Glorot bound from the full fan-in, not the surviving one.
        let values = glorot_uniform(out_dim, in_dim, rng);
        let weight = store.add_masked(
            format!("{name}.weight"),
            DiffArray::new(vec![out_dim, in_dim], values)?,
            mask,
        )?;
        let bias = store.add(format!("{name}.bias"), DiffArray::zeros(vec![out_dim]));
        Ok(SparseLinear {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
            sparsity: alpha,
        })
    }

    /// A dense layer (no mask).
    pub fn dense<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        out_dim: usize,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let values = glorot_uniform(out_dim, in_dim, rng);
        let weight = store.add(format!("{name}.weight"), DiffArray::new(vec![out_dim, in_dim], values)?);
        let bias = store.add(format!("{name}.bias"), DiffArray::zeros(vec![out_dim]));
        Ok(SparseLinear {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
            sparsity: 0.0,
        })
    }

    pub fn mask<'a>(&self, store: &'a ParamStore) -> Option<&'a [bool]> {
        store.get(self.weight).mask.as_deref()
    }

    /// Applies the layer to a `B × in` batch.
    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut w = tape.param(store, self.weight);
        if let Some(mask) = self.mask(store) {
            let m = mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            w = tape.mask_mul(w, m)?;
        }
        let y = tape.matmul_nt(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_fraction(mask: &[bool]) -> f64 {
        mask.iter().filter(|&&k| !k).count() as f64 / mask.len() as f64
    }

    #[test]
    fn alpha_zero_keeps_everything() {
        let mut store = ParamStore::new();
        let l = init_sparse_linear(&mut store, "l", 20, 30, 0.0, 1).unwrap();
        assert!(l.mask(&store).unwrap().iter().all(|&k| k));
    }

    #[test]
    fn half_sparsity_within_four_sigma() {
        let mut store = ParamStore::new();
        let l = init_sparse_linear(&mut store, "l", 1000, 1000, 0.5, 7).unwrap();
        let z = zero_fraction(l.mask(&store).unwrap());
        assert!((0.498..=0.502).contains(&z), "zero fraction {z}");
    }

    #[test]
    fn same_seed_same_mask() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let la = init_sparse_linear(&mut a, "l", 40, 40, 0.3, 99).unwrap();
        let lb = init_sparse_linear(&mut b, "l", 40, 40, 0.3, 99).unwrap();
        assert_eq!(la.mask(&a), lb.mask(&b));
        assert_eq!(a.value(la.weight), b.value(lb.weight));
    }

    #[test]
    fn masked_entries_start_at_zero() {
        let mut store = ParamStore::new();
        let l = init_sparse_linear(&mut store, "l", 30, 30, 0.6, 5).unwrap();
        let mask = l.mask(&store).unwrap();
        for (w, &k) in store.value(l.weight).values().iter().zip(mask) {
            if !k {
                assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_alpha() {
        let mut store = ParamStore::new();
        assert!(init_sparse_linear(&mut store, "l", 2, 2, 1.0, 0).is_err());
        assert!(init_sparse_linear(&mut store, "l", 2, 2, -0.5, 0).is_err());
    }

    #[test]
    fn masked_positions_get_no_gradient() {
        let mut store = ParamStore::new();
        let l = init_sparse_linear(&mut store, "l", 4, 6, 0.5, 3).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(vec![3, 6], (0..18).map(|i| i as Real * 0.1 - 0.7).collect()).unwrap();
        let y = l.forward(&store, &mut tape, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        tape.accumulate_into(&mut store);
        let mask = l.mask(&store).unwrap().to_vec();
        let grad = store.value(l.weight).grad().unwrap();
        for (g, k) in grad.iter().zip(mask) {
            if !k {
                assert_eq!(*g, 0.0);
            }
        }
    }
}
