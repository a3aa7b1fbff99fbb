//! Bias-corrected Adam over the named arrays of a [`ParamSet`].

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments for every parameter array, in
/// [`ParamSet::arrays`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: ParamSet<T>>(params: &P) -> Self {
        let arrays = params.arrays();
        AdamState {
            names: arrays.iter().map(|(n, _)| n.clone()).collect(),
            m: arrays.iter().map(|(_, a)| vec![T::zero(); a.len()]).collect(),
            v: arrays.iter().map(|(_, a)| vec![T::zero(); a.len()]).collect(),
            step: 0,
        }
    }
}

/// Global L2 norm over all arrays of a gradient container.
pub fn grad_norm<T: Scalar, P: ParamSet<T>>(grads: &P) -> f64 {
    grads
        .arrays()
        .iter()
        .flat_map(|(_, a)| a.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar, P: ParamSet<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for (_, a) in grads.arrays_mut() {
            a.iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// One Adam update. Arrays for which `frozen(name)` holds are left untouched
/// (parameters and moments). A non-finite gradient aborts before anything
/// changes.
pub fn adam_step<T: Scalar, P: ParamSet<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    hp: &AdamHyper,
    frozen: impl Fn(&str) -> bool,
) -> Result<()> {
    let garrays = grads.arrays();
    if garrays.len() != state.names.len() {
        return Err(Error::Training {
            component: "optimizer".into(),
            message: format!("{} gradient arrays for {} optimizer slots", garrays.len(), state.names.len()),
        });
    }
    for ((name, g), expected) in garrays.iter().zip(&state.names) {
        if name != expected {
            return Err(Error::Training {
                component: "optimizer".into(),
                message: format!("gradient array {name} where {expected} was expected"),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training {
                component: name.clone(),
                message: format!("non-finite gradient at index {i}"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, (name, p)) in params.arrays_mut().into_iter().enumerate() {
        if frozen(&name) {
            continue;
        }
        let g = garrays[i].1;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j].as_f64();
            let mj = hp.beta1 * m[j].as_f64() + (1.0 - hp.beta1) * gj;
            let vj = hp.beta2 * v[j].as_f64() + (1.0 - hp.beta2) * gj * gj;
            m[j] = T::from_f64_lossy(mj);
            v[j] = T::from_f64_lossy(vj);
            let update = hp.lr * (mj / bc1) / ((vj / bc2).sqrt() + hp.eps);
            p[j] = T::from_f64_lossy(p[j].as_f64() - update);
        }
    }
    Ok(())
}
