use crate::{Error, Real, Result};

/// Dense row-major array with an optional accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Vec<Real>,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
}

impl DiffArray {
    pub fn new(shape: Vec<usize>, values: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape("DiffArray::new", &shape, &[values.len()]));
        }
        Ok(DiffArray {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        DiffArray {
            shape,
            values: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: Real) -> Self {
        DiffArray {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Builds a 2-D array from equally long rows.
    pub fn from_rows(rows: &[&[Real]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("DiffArray::from_rows", &[cols], &[row.len()]));
            }
            values.extend_from_slice(row);
        }
        DiffArray::new(vec![rows.len(), cols], values)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Real> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[Real]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [Real]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[Real]) {
        debug_assert_eq!(delta.len(), self.values.len());
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<Real>> {
        self.grad.take()
    }

    /// Rows of a 2-D array (1 for lower ranks).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a 2-D array, or the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(op, &self.shape, &[0, 0]));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(matches!(
            DiffArray::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape { .. })
        ));
        assert_eq!(DiffArray::scalar(3.0).numel(), 1);
    }

    #[test]
    fn grad_accumulates() {
        let mut a = DiffArray::zeros(vec![2]);
        a.accumulate_grad(&[1.0, 2.0]);
        a.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(a.grad(), Some(&[2.0, 4.0][..]));
        a.zero_grad();
        assert!(a.grad().is_none());
    }
}
