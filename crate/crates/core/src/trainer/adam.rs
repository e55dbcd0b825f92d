//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter first and second moments, in the tree's visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub names: Vec<String>,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<M: ParamTree<Tensor<T>>>(params: &M) -> Self {
        let mut names = Vec::new();
        let mut first = Vec::new();
        params.visit("", &mut |n, t| {
            names.push(n.to_string());
            first.push(Tensor::zeros(t.shape()));
        });
        Self {
            names,
            second: first.clone(),
            first,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable leaf of `params`.
///
/// `grads` follows the visiting order of `params`. Nothing is modified if
/// any gradient is non-finite or mis-shaped.
pub fn adam_step<T: Scalar, M: ParamTree<Tensor<T>>>(
    params: &mut M,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if grads.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.first.len()
        )));
    }
    for ((name, g), m) in state.names.iter().zip(grads).zip(&state.first) {
        if g.shape() != m.shape() {
            return Err(Error::Dimension(format!(
                "gradient of {name} has shape {:?}, parameter {:?}",
                g.shape(),
                m.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!("non-finite gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let lr = T::of(lr);
    let eps = T::of(EPSILON);
    let mut i = 0;
    params.visit_mut("", &mut |_, p| {
        let g = grads[i].data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
        i += 1;
    });
    Ok(())
}

impl<T: Scalar> ParamTree<Tensor<T>> for Tensor<T> {
    type Mapped<Q> = Q;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &Tensor<T>) -> Q) -> Q {
        f(true, self)
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(prefix, self);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(prefix, self);
    }
}
