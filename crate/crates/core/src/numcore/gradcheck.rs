use super::graph::{Graph, Tracking, Var};
use super::store::ParamStore;
use crate::error::{Error, Result};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares tape gradients of `loss_fn` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every element of the named parameters and
/// returns the largest relative error.
///
/// `loss_fn` must build a scalar loss on the graph it is given and be
/// deterministic.
pub fn finite_diff_check<F>(loss_fn: F, store: &ParamStore, h: f64, names: &[&str]) -> Result<f64>
where
    F: for<'s> Fn(&mut Graph<'s>) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    if names.is_empty() {
        return Ok(0.0);
    }
    let analytic = {
        let mut g = Graph::with_tracking(store, Tracking::All);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference(s);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &name in names {
        let n = store.require(name)?.numel();
        let zeros = vec![0.0; n];
        let grad = analytic.param(name).unwrap_or(&zeros).to_vec();
        for i in 0..n {
            let orig = store.require(name)?.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}
