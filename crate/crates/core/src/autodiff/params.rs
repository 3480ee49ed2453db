use super::DiffArray;
use crate::{Error, Real, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array. Sparse weights carry a fixed 0/1 mask.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: DiffArray,
    pub mask: Option<Vec<bool>>,
}

impl Param {
    /// Zeroes every masked-out position of `buf`.
    pub fn apply_mask(&self, buf: &mut [Real]) {
        if let Some(mask) = &self.mask {
            for (x, &keep) in buf.iter_mut().zip(mask) {
                if !keep {
                    *x = 0.0;
                }
            }
        }
    }
}

/// Owns every trainable array of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DiffArray) -> ParamId {
        self.push(name.into(), value, None)
    }

    /// Registers a masked weight. Masked positions are zeroed immediately.
    pub fn add_masked(
        &mut self,
        name: impl Into<String>,
        value: DiffArray,
        mask: Vec<bool>,
    ) -> Result<ParamId> {
        if mask.len() != value.numel() {
            return Err(Error::shape("add_masked", value.shape(), &[mask.len()]));
        }
        Ok(self.push(name.into(), value, Some(mask)))
    }

    fn push(&mut self, name: String, mut value: DiffArray, mask: Option<Vec<bool>>) -> ParamId {
        value.set_requires_grad(true);
        let mut param = Param { name, value, mask };
        if let Some(mask) = &param.mask {
            for (x, &keep) in param.value.values_mut().iter_mut().zip(mask) {
                if !keep {
                    *x = 0.0;
                }
            }
        }
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DiffArray {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of allocated scalars, masked positions included.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of scalars not fixed to zero by a mask.
    pub fn active_scalar_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match &p.mask {
                Some(m) => m.iter().filter(|&&k| k).count(),
                None => p.value.numel(),
            })
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }
}
