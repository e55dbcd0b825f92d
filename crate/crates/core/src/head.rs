//! Weight-score regression head: parallel MLP branches produce a
//! softmax-normalized importance weight and a raw quality score per clip,
//! and the final score is their weighted sum.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{join, Linear, ParamTree};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Graph, Tensor, Var};

/// A stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<P> {
    pub layers: Vec<Linear<P>>,
}

impl<T: Scalar> Mlp<Tensor<T>> {
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        }
    }
}

impl Mlp<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

impl<P> ParamTree<P> for Mlp<P> {
    type Mapped<Q> = Mlp<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Mlp<Q> {
        Mlp {
            layers: self.layers.map_params(f),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.layers.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.layers.visit_mut(prefix, f);
    }
}

/// Branch widths `d → d/2 → d/4 → 1`.
pub fn branch_widths(d: usize) -> [usize; 4] {
    [d, (d / 2).max(1), (d / 4).max(1), 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<P> {
    pub weight_branch: Mlp<P>,
    pub score_branch: Mlp<P>,
}

impl<T: Scalar> HeadParams<Tensor<T>> {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = branch_widths(d);
        Self {
            weight_branch: Mlp::init(&widths, rng),
            score_branch: Mlp::init(&widths, rng),
        }
    }
}

impl<P> ParamTree<P> for HeadParams<P> {
    type Mapped<Q> = HeadParams<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> HeadParams<Q> {
        HeadParams {
            weight_branch: self.weight_branch.map_params(f),
            score_branch: self.score_branch.map_params(f),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.weight_branch.visit(&join(prefix, "weight_branch"), f);
        self.score_branch.visit(&join(prefix, "score_branch"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.weight_branch
            .visit_mut(&join(prefix, "weight_branch"), f);
        self.score_branch
            .visit_mut(&join(prefix, "score_branch"), f);
    }
}

/// Output squashing for the score branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreActivation {
    #[default]
    Identity,
    Sigmoid,
}

/// Graph nodes produced by [`head_forward`].
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Length-K weights on the simplex.
    pub weights: Var,
    /// Length-K per-clip scores.
    pub scores: Var,
    /// Scalar `Σ weight_k · score_k`.
    pub final_score: Var,
}

pub fn head_forward<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    params: &HeadParams<Var>,
    activation: ScoreActivation,
) -> Result<HeadOutput> {
    let (k, _) = g.value(features).dims2()?;
    if k == 0 {
        return Err(Error::Data(
            "regression head needs at least one clip".into(),
        ));
    }
    let logits = params.weight_branch.apply(g, features)?;
    let logits = g.reshape(logits, &[k])?;
    let weights = g.softmax(logits, Axis::Row)?;
    let raw = params.score_branch.apply(g, features)?;
    let raw = g.reshape(raw, &[k])?;
    let scores = match activation {
        ScoreActivation::Identity => raw,
        ScoreActivation::Sigmoid => g.sigmoid(raw),
    };
    let contrib = g.mul(weights, scores)?;
    let final_score = g.sum(contrib);
    Ok(HeadOutput {
        weights,
        scores,
        final_score,
    })
}

/// Per-clip weights and scores with the aggregated final score.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipAssessment<T> {
    pub weights: Vec<T>,
    pub scores: Vec<T>,
    pub final_score: T,
}

impl<T: Scalar> ClipAssessment<T> {
    pub fn from_output(g: &Graph<T>, out: &HeadOutput) -> Result<Self> {
        Ok(Self {
            weights: g.value(out.weights).data().to_vec(),
            scores: g.value(out.scores).data().to_vec(),
            final_score: g.value(out.final_score).item()?,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Tolerance on `Σ weights = 1` and on each weight lying in `[0, 1]`.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// `Σ weight_k · score_k`, with the weights checked to lie on the simplex.
pub fn aggregate<T: Scalar>(weights: &[T], scores: &[T]) -> Result<T> {
    if weights.len() != scores.len() || weights.is_empty() {
        return Err(Error::Contract(format!(
            "aggregate needs equal non-empty lengths, got {} and {}",
            weights.len(),
            scores.len()
        )));
    }
    let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let in_range = weights
        .iter()
        .all(|w| w.as_f64() >= -SIMPLEX_TOL && w.as_f64() <= 1.0 + SIMPLEX_TOL);
    if !in_range || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Contract(format!(
            "weights are off the simplex (sum {total})"
        )));
    }
    Ok(weights.iter().zip(scores).map(|(&w, &s)| w * s).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[0.25; 4], &[3.0; 4]).unwrap(), 3.0);
        assert_eq!(aggregate(&[0.0, 1.0, 0.0], &[5.0, 7.0, 9.0]).unwrap(), 7.0);
        let v: f64 = aggregate(&[0.2, 0.3, 0.5], &[1.0, 2.0, 3.0]).unwrap();
        assert!((v - 2.3).abs() < 1e-15);
    }

    #[test]
    fn aggregate_rejects_off_simplex() {
        assert!(matches!(
            aggregate(&[0.5, 0.6], &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            aggregate(&[1.5, -0.5], &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn branch_widths_taper() {
        assert_eq!(branch_widths(64), [64, 32, 16, 1]);
        assert_eq!(branch_widths(2), [2, 1, 1, 1]);
    }
}
