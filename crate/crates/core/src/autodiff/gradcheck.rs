use super::{ParamId, ParamStore, Tape, Var};
use crate::{Real, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: Real,
    /// Parameter and flat index where the maximum was reached.
    pub worst: Option<(ParamId, usize)>,
    pub checked: usize,
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` must be deterministic: it builds a fresh forward pass on the given
/// tape and returns the scalar loss. An empty `params` checks every
/// parameter in the store.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], mut f: F, eps: Real) -> Result<GradCheck>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    let ids: Vec<ParamId> = if params.is_empty() {
        store.iter().map(|(id, _)| id).collect()
    } else {
        params.to_vec()
    };

    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Vec<Real>> = ids
        .iter()
        .map(|&id| vec![0.0; store.value(id).numel()])
        .collect();
    for (id, g) in tape.param_grads() {
        if let Some(slot) = ids.iter().position(|&p| p == id) {
            analytic[slot].iter_mut().zip(g).for_each(|(a, g)| *a += g);
        }
    }
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<Real> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        Ok(tape.value(loss)[0])
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (slot, &id) in ids.iter().enumerate() {
        for i in 0..store.value(id).numel() {
            let original = store.value(id).values()[i];
            store.get_mut(id).value.values_mut()[i] = original + eps;
            let plus = eval(store)?;
            store.get_mut(id).value.values_mut()[i] = original - eps;
            let minus = eval(store)?;
            store.get_mut(id).value.values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[slot][i] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, i));
            }
        }
    }
    Ok(report)
}
