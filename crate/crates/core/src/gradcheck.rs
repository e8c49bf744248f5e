//! Central finite-difference checking of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape and the store's tensors bound as leaves (in store
/// order) and returns the scalar output variable. The result is
/// `max |analytic − numeric| / max(1, |numeric|)` over every coordinate of
/// every tensor in `params`.
pub fn finite_difference_check<F>(f: F, params: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::contract(format!("finite-difference step {step} outside (0, 1e-3]")));
    }

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = f(&mut tape, &vars)?;
    let analytic = tape.backward(out)?.collect(&vars)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = store.bind_constant(&mut tape);
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::numeric("non-finite function value in gradient check"));
        }
        Ok(v)
    };

    let mut work = params.clone();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = params.tensor(ti).data()[j];
            work.tensor_mut(ti).data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.tensor_mut(ti).data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.tensor_mut(ti).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
