//! Parameter containers that can hold either concrete tensors or graph
//! handles, so one struct definition serves storage, binding and
//! gradient collection.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// A tree of named parameters over leaf type `P`.
///
/// Visiting order is fixed by the implementation and is the order used by
/// the optimizer state and the checkpoint format.
pub trait ParamTree<P> {
    type Mapped<Q>;

    /// Maps every leaf; the flag says whether the leaf is trainable.
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Self::Mapped<Q>;

    /// Visits trainable leaves with their dotted names.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Puts every leaf of a tensor tree on `g`; trainable leaves become
/// differentiable parameters, the rest constants.
pub fn bind<T, M>(g: &mut Graph<T>, tree: &M) -> M::Mapped<Var>
where
    T: Scalar,
    M: ParamTree<Tensor<T>>,
{
    tree.map_params(&mut |trainable, t| g.leaf(t.clone(), trainable))
}

/// Names of trainable leaves in visiting order.
pub fn param_names<P, M: ParamTree<P>>(tree: &M) -> Vec<String> {
    let mut names = Vec::new();
    tree.visit("", &mut |n, _| names.push(n.to_string()));
    names
}

pub fn param_count<T: Scalar, M: ParamTree<Tensor<T>>>(tree: &M) -> usize {
    let mut n = 0;
    tree.visit("", &mut |_, t| n += t.len());
    n
}

/// Affine map `x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

impl<T: Scalar> Linear<Tensor<T>> {
    /// Glorot-uniform weights, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-a..a)))
            .collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Tensor::identity(n),
            bias: Tensor::zeros(&[n]),
        }
    }

    pub fn zero(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

impl Linear<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> crate::Result<Var> {
        let xw = g.matmul(x, self.weight)?;
        g.add_bias(xw, self.bias)
    }
}

impl<P> ParamTree<P> for Linear<P> {
    type Mapped<Q> = Linear<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(true, &self.weight),
            bias: f(true, &self.bias),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Layer-norm gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

impl<T: Scalar> Norm<Tensor<T>> {
    pub fn init(d: usize) -> Self {
        Self {
            gain: Tensor::full(&[d], T::one()),
            bias: Tensor::zeros(&[d]),
        }
    }
}

impl Norm<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> crate::Result<Var> {
        g.layer_norm(x, self.gain, self.bias)
    }
}

impl<P> ParamTree<P> for Norm<P> {
    type Mapped<Q> = Norm<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Norm<Q> {
        Norm {
            gain: f(true, &self.gain),
            bias: f(true, &self.bias),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "gain"), &self.gain);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "gain"), &mut self.gain);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<P, M: ParamTree<P>> ParamTree<P> for Vec<M> {
    type Mapped<Q> = Vec<M::Mapped<Q>>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Self::Mapped<Q> {
        self.iter().map(|m| m.map_params(f)).collect()
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
