//! Central finite-difference gradient checking.
//!
//! Independent of the backward pass: only forward evaluations are used to
//! form the numerical derivative.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Denominator floor of [`relative_error`]; gradients below it are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-7;

/// `|a - b| / max(|a|, |b|, ABS_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

/// Default relative step of [`check`].
pub const DEFAULT_STEP: f64 = 1e-4;

/// Step used for the element value `theta`: `rel * max(1, |theta|)`.
pub fn step_for(theta: f64, rel: f64) -> f64 {
    rel * theta.abs().max(1.0)
}

#[derive(Clone, Debug)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Central difference at half the step.
    pub numeric_half: f64,
    pub rel_error: f64,
    /// Rounding bound of `numeric`: machine epsilon times the loss over the step.
    pub roundoff: f64,
}

impl GradSample {
    /// Whether the two difference quotients agree to `tol`. They disagree
    /// when a kink of a piecewise-linear activation lies within the step, or
    /// when rounding swamps the difference; either way the numerical value
    /// is not a usable reference.
    pub fn is_smooth(&self, tol: f64) -> bool {
        relative_error(self.numeric, self.numeric_half) <= tol
    }

    /// Whether rounding in the loss leaves `numeric` accurate to `tol`
    /// relative. Gradients far below the loss scale fail this at any step;
    /// a loss left unchanged by both steps is resolved exactly.
    pub fn is_resolved(&self, tol: f64) -> bool {
        (self.numeric == 0.0 && self.numeric_half == 0.0)
            || self.roundoff <= tol * self.numeric.abs()
    }
}

/// Compares analytic and numerical gradients for the chosen `(param, element)` pairs.
///
/// `loss` records a forward pass on the supplied graph and returns the scalar loss.
pub fn check<T, F>(
    store: &mut ParamStore<T>,
    samples: &[(ParamId, usize)],
    loss: F,
) -> Result<Vec<GradSample>>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    check_with_step(store, samples, DEFAULT_STEP, loss)
}

/// As [`check`] with relative step `rel`. Deep piecewise-linear networks
/// need a small step so that few activations cross a kink.
pub fn check_with_step<T, F>(
    store: &mut ParamStore<T>,
    samples: &[(ParamId, usize)],
    rel: f64,
    loss: F,
) -> Result<Vec<GradSample>>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    check_refined(store, samples, rel, 0, 0.0, loss)
}

/// As [`check_with_step`], but while the quotients at `h` and `h / 2`
/// differ by more than `smooth_tol`, the step is halved again, at most
/// `refinements` times. A kink near the sample then drops out of the
/// window; the reported `numeric` is the coarser of the last pair.
pub fn check_refined<T, F>(
    store: &mut ParamStore<T>,
    samples: &[(ParamId, usize)],
    rel: f64,
    refinements: usize,
    smooth_tol: f64,
    mut loss: F,
) -> Result<Vec<GradSample>>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    let level = g.value(l).data()[0].to_f64_lossy().abs();
    let grads: Gradients<T> = g.gradients(l)?;
    let eps = T::epsilon().to_f64_lossy();

    let mut eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).data()[0].to_f64_lossy())
    };

    let mut out = Vec::with_capacity(samples.len());
    for &(id, index) in samples {
        let theta = store.get(id).value.data()[index];
        let mut h = step_for(theta.to_f64_lossy(), rel);
        let mut numeric =
            central_difference(store, id, index, theta, T::from_f64_lossy(h), &mut eval)?;
        let mut numeric_half = central_difference(
            store,
            id,
            index,
            theta,
            T::from_f64_lossy(h / 2.0),
            &mut eval,
        )?;
        for _ in 0..refinements {
            if relative_error(numeric, numeric_half) <= smooth_tol {
                break;
            }
            h /= 2.0;
            numeric = numeric_half;
            numeric_half = central_difference(
                store,
                id,
                index,
                theta,
                T::from_f64_lossy(h / 2.0),
                &mut eval,
            )?;
        }
        let analytic = grads
            .get(id)
            .map(|t| t.data()[index].to_f64_lossy())
            .unwrap_or(0.0);
        out.push(GradSample {
            param: store.get(id).name.clone(),
            index,
            analytic,
            numeric,
            numeric_half,
            rel_error: relative_error(analytic, numeric),
            roundoff: eps * level / h,
        });
    }
    Ok(out)
}

fn central_difference<T: Scalar>(
    store: &mut ParamStore<T>,
    id: ParamId,
    index: usize,
    theta: T,
    h: T,
    eval: &mut impl FnMut(&ParamStore<T>) -> Result<f64>,
) -> Result<f64> {
    store.get_mut(id).value.data_mut()[index] = theta + h;
    let plus = eval(store);
    store.get_mut(id).value.data_mut()[index] = theta - h;
    let minus = eval(store);
    store.get_mut(id).value.data_mut()[index] = theta;
    // the realized step, so rounding of theta +- h does not bias the quotient
    let step = (theta + h).to_f64_lossy() - (theta - h).to_f64_lossy();
    Ok((plus? - minus?) / step)
}

/// Every element of every parameter.
pub fn all_elements<T: Scalar>(store: &ParamStore<T>) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .flat_map(|id| (0..store.get(id).value.len()).map(move |i| (id, i)))
        .collect()
}
