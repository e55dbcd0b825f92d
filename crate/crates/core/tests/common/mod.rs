#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tqd::tensor::{Axis, Graph, Tensor, Var};
use tqd::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-2, 2]`.
pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    Tensor::vector((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
}

/// Dense softmax of one slice, written independently of the graph.
pub fn softmax_ref(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn matmul_ref(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(p, v)| v * b[p][j]).sum())
                .collect()
        })
        .collect()
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub type Op = fn(&mut Graph<f64>, Var) -> Result<Var>;

/// Contracts an op's output against fixed random weights so every output
/// element contributes to the checked scalar.
pub fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).len();
    let mut r = rng(seed ^ 0xabcdef);
    let w = uniform_vec(&mut r, n).reshaped(&shape)?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub fn primitive_ops() -> Vec<(&'static str, Op, (usize, usize))> {
    vec![
        ("add", |g, x| g.add(x, x), (3, 4)),
        (
            "sub",
            |g, x| {
                let s = g.scale(x, 0.5);
                let y = g.mul(x, x)?;
                g.sub(s, y)
            },
            (3, 4),
        ),
        (
            "add_bias",
            |g, x| {
                // Bias taken from the first row so it shares the checked input.
                let t = g.transpose(x)?;
                let first = g.slice_cols(t, 0, 1)?;
                let bias = g.reshape(first, &[4])?;
                g.add_bias(x, bias)
            },
            (3, 4),
        ),
        ("scale", |g, x| Ok(g.scale(x, -1.7)), (3, 4)),
        (
            "matmul",
            |g, x| {
                let t = g.transpose(x)?;
                g.matmul(x, t)
            },
            (3, 4),
        ),
        ("transpose", |g, x| g.transpose(x), (3, 4)),
        ("relu", |g, x| Ok(g.relu(x)), (3, 4)),
        ("sigmoid", |g, x| Ok(g.sigmoid(x)), (3, 4)),
        ("softmax_row", |g, x| g.softmax(x, Axis::Row), (3, 4)),
        ("softmax_col", |g, x| g.softmax(x, Axis::Col), (3, 4)),
        (
            "layer_norm",
            |g, x| {
                let gain = g.slice_cols(x, 0, 4)?;
                let gain = g.transpose(gain)?;
                let gain = g.slice_cols(gain, 0, 1)?;
                let gain = g.reshape(gain, &[4])?;
                let bias = g.scale(gain, 0.3);
                g.layer_norm(x, gain, bias)
            },
            (4, 4),
        ),
        (
            "ln_clamped",
            |g, x| {
                let sq = g.mul(x, x)?;
                let c = g.constant(Tensor::full(&[3, 4], 0.1));
                let pos = g.add(sq, c)?;
                Ok(g.ln_clamped(pos, 1e-12))
            },
            (3, 4),
        ),
        ("reshape", |g, x| g.reshape(x, &[2, 6]), (3, 4)),
        (
            "concat_rows",
            |g, x| {
                let y = g.scale(x, 2.0);
                g.concat_rows(&[x, y])
            },
            (3, 4),
        ),
        (
            "concat_cols",
            |g, x| {
                let y = g.relu(x);
                g.concat_cols(&[y, x])
            },
            (3, 4),
        ),
        ("slice_cols", |g, x| g.slice_cols(x, 1, 3), (3, 4)),
        (
            "sum",
            |g, x| {
                let s = g.sum(x);
                let t = g.mul(s, s)?;
                Ok(t)
            },
            (3, 4),
        ),
        (
            "mean",
            |g, x| {
                let s = g.mean(x);
                g.mul(s, s)
            },
            (3, 4),
        ),
    ]
}
