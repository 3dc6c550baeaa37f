//! Central finite-difference check of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Compares backward-pass gradients against `(f(w+h) − f(w−h)) / 2h` for every
/// scalar in `store` and returns the largest `|analytic − numeric| / max(1, |numeric|)`.
///
/// `build` must record a deterministic scalar loss on the tape it is handed.
/// Gradient slots are overwritten with the analytic gradient; parameter values
/// are restored exactly.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Parameter(format!("step h must lie in (0, 1e-2], got {h}")));
    }
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = build(store, &mut tape)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        tape.backward(loss, store)?;
    }

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(store, &mut tape)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {value}")));
        }
        Ok(value)
    };

    let ids: Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        for k in 0..store.value(id).len() {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + h;
            let plus = eval(store);
            store.value_mut(id).data_mut()[k] = original - h;
            let minus = eval(store);
            store.value_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let analytic = store.grad(id).data()[k];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
