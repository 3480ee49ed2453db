use crate::autodiff::ParamStore;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl AdamConfig {
    pub fn with_lr(lr: Real) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub step: u64,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Masked-out positions are forced back
/// to zero afterwards, whatever the gradient said.
pub fn adam_step(
    param: &mut [Real],
    grad: &[Real],
    moments: &mut Moments,
    cfg: &AdamConfig,
    mask: Option<&[bool]>,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(Error::shape("adam_step", &[n], &[grad.len(), moments.m.len()]));
    }
    if let Some(mask) = mask {
        if mask.len() != n {
            return Err(Error::shape("adam_step mask", &[n], &[mask.len()]));
        }
    }
    moments.step += 1;
    let t = moments.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grad[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        param[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
    if let Some(mask) = mask {
        for (p, &keep) in param.iter_mut().zip(mask) {
            if !keep {
                *p = 0.0;
            }
        }
    }
    Ok(())
}

/// Adam over every parameter of a store. Parameters without a gradient in
/// a step are skipped and keep their step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub moments: Vec<Moments>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            moments: store.iter().map(|(_, p)| Moments::zeros(p.value.numel())).collect(),
        }
    }

    /// Applies the stored gradients and clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(Error::State("optimizer does not match parameter store".into()));
        }
        for (id, param) in store.iter_mut() {
            let Some(mut grad) = param.value.grad().map(<[Real]>::to_vec) else {
                continue;
            };
            param.apply_mask(&mut grad);
            let mask = param.mask.as_deref();
            adam_step(param.value.values_mut(), &grad, &mut self.moments[id.index()], &self.config, mask)?;
            param.value.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DiffArray;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.5, -2.0];
        let mut m = Moments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &AdamConfig::with_lr(0.1), None).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut m = Moments::zeros(1);
        adam_step(&mut p, &[1.0], &mut m, &AdamConfig::with_lr(0.1), None).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn masked_position_stays_zero() {
        let mut p = vec![0.0, 0.3];
        let mut m = Moments::zeros(2);
        for _ in 0..5 {
            adam_step(&mut p, &[5.0, 5.0], &mut m, &AdamConfig::with_lr(0.1), Some(&[false, true])).unwrap();
        }
        assert_eq!(p[0], 0.0);
        assert!(p[1] < 0.3);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut m = Moments::zeros(2);
        assert!(adam_step(&mut p, &[1.0], &mut m, &AdamConfig::with_lr(0.1), None).is_err());
    }

    #[test]
    fn store_step_skips_parameters_without_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", DiffArray::new(vec![1], vec![1.0]).unwrap());
        let b = store.add("b", DiffArray::new(vec![1], vec![1.0]).unwrap());
        let mut adam = Adam::new(&store, AdamConfig::with_lr(0.1));
        store.get_mut(a).value.accumulate_grad(&[1.0]);
        adam.step(&mut store).unwrap();
        assert!(store.value(a).values()[0] < 1.0);
        assert_eq!(store.value(b).values()[0], 1.0);
        assert_eq!(adam.moments[b.index()].step, 0);
        assert!(store.value(a).grad().is_none());
    }
}
