//! Central finite-difference comparison for tape gradients.

use super::{ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Fraction of coordinates with relative error below `1e-4`.
    pub fraction_tight: f64,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error < 1e-2 && self.fraction_tight >= 0.99
    }
}

/// Relative error with an absolute floor so that near-zero gradients are
/// compared on the scale of the overall gradient.
fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `loss_fn` against central differences with
/// step `h` on every coordinate of every parameter in `store`.
///
/// `loss_fn` must be a pure function of the parameter values.
pub fn check_gradients<F>(store: &mut ParamStore, h: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).into_vec()).collect();
    store.zero_grad();

    let scale = analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (scale * 1e-3).max(1e-12);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, store)?;
        Ok(t.value(l).get(0, 0))
    };

    let mut errors = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for (i, &grad) in analytic[pi].iter().enumerate() {
            let orig = store.value(id).as_slice()[i];
            store.value_mut(id).as_mut_slice()[i] = orig + h;
            let up = eval(store)?;
            store.value_mut(id).as_mut_slice()[i] = orig - h;
            let down = eval(store)?;
            store.value_mut(id).as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            errors.push(rel_error(grad, numeric, floor));
        }
    }
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    let tight = errors.iter().filter(|&&e| e < 1e-4).count();
    Ok(GradCheckReport {
        coordinates: errors.len(),
        max_rel_error,
        fraction_tight: if errors.is_empty() {
            1.0
        } else {
            tight as f64 / errors.len() as f64
        },
    })
}
