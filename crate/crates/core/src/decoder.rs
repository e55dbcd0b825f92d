//! Temporal decoder: learnable queries with variance-controlled Gaussian
//! initialization and sinusoidal positional encoding, attending to
//! themselves and then to a memory of clip features.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::params::{join, Linear, Norm, ParamTree};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Graph, Tensor, Var};

/// Learnable query embeddings plus their positional encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryBank<P> {
    /// `K × d`, one row per query.
    pub embeddings: P,
    /// `K × d`; fixed unless `learned_pe` is set.
    pub pos_encoding: P,
    pub learned_pe: bool,
    pub init_variance: f64,
}

impl<T: Scalar> QueryBank<Tensor<T>> {
    pub fn num_queries(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

impl<P> ParamTree<P> for QueryBank<P> {
    type Mapped<Q> = QueryBank<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> QueryBank<Q> {
        QueryBank {
            embeddings: f(true, &self.embeddings),
            pos_encoding: f(self.learned_pe, &self.pos_encoding),
            learned_pe: self.learned_pe,
            init_variance: self.init_variance,
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        f(&join(prefix, "embeddings"), &self.embeddings);
        if self.learned_pe {
            f(&join(prefix, "pos_encoding"), &self.pos_encoding);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "embeddings"), &mut self.embeddings);
        if self.learned_pe {
            f(&join(prefix, "pos_encoding"), &mut self.pos_encoding);
        }
    }
}

/// Draws `K × d` query embeddings i.i.d. from `N(0, variance)`.
pub fn init_queries<T: Scalar>(
    num_queries: usize,
    dim: usize,
    variance: f64,
    seed: u64,
) -> Result<QueryBank<Tensor<T>>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Config(format!(
            "query variance must be positive, got {variance}"
        )));
    }
    if num_queries == 0 || dim < 2 {
        return Err(Error::Config(format!(
            "need at least 1 query and dimension >= 2, got {num_queries} x {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt()).expect("valid std");
    let data = (0..num_queries * dim)
        .map(|_| T::of(normal.sample(&mut rng)))
        .collect();
    Ok(QueryBank {
        embeddings: Tensor::matrix(num_queries, dim, data)?,
        pos_encoding: sinusoidal_pe(num_queries, dim)?,
        learned_pe: false,
        init_variance: variance,
    })
}

/// Sinusoidal encoding: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_pe<T: Scalar>(positions: usize, dim: usize) -> Result<Tensor<T>> {
    if !dim.is_multiple_of(2) || dim == 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    Ok(Tensor::from_fn(positions, dim, |p, j| {
        let i2 = (j - j % 2) as f64;
        let angle = p as f64 / 10000f64.powf(i2 / dim as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}

/// Query, key, value and output projections of one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<P> {
    pub query: Linear<P>,
    pub key: Linear<P>,
    pub value: Linear<P>,
    pub output: Linear<P>,
}

impl<T: Scalar> AttentionParams<Tensor<T>> {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::init(d, d, rng),
            key: Linear::init(d, d, rng),
            value: Linear::init(d, d, rng),
            output: Linear::init(d, d, rng),
        }
    }

    /// All four projections set to the identity.
    pub fn identity(d: usize) -> Self {
        Self {
            query: Linear::identity(d),
            key: Linear::identity(d),
            value: Linear::identity(d),
            output: Linear::identity(d),
        }
    }
}

impl<P> ParamTree<P> for AttentionParams<P> {
    type Mapped<Q> = AttentionParams<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            query: self.query.map_params(f),
            key: self.key.map_params(f),
            value: self.value.map_params(f),
            output: self.output.map_params(f),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Weights of one decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams<P> {
    pub self_attn: AttentionParams<P>,
    pub cross_attn: AttentionParams<P>,
    pub ff_in: Linear<P>,
    pub ff_out: Linear<P>,
    pub norm_self: Norm<P>,
    pub norm_cross: Norm<P>,
    pub norm_ff: Norm<P>,
}

/// Feed-forward inner width as a multiple of the model dimension.
pub const FF_MULTIPLIER: usize = 2;

impl<T: Scalar> DecoderLayerParams<Tensor<T>> {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            self_attn: AttentionParams::init(d, rng),
            cross_attn: AttentionParams::init(d, rng),
            ff_in: Linear::init(d, FF_MULTIPLIER * d, rng),
            ff_out: Linear::init(FF_MULTIPLIER * d, d, rng),
            norm_self: Norm::init(d),
            norm_cross: Norm::init(d),
            norm_ff: Norm::init(d),
        }
    }
}

impl<P> ParamTree<P> for DecoderLayerParams<P> {
    type Mapped<Q> = DecoderLayerParams<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> DecoderLayerParams<Q> {
        DecoderLayerParams {
            self_attn: self.self_attn.map_params(f),
            cross_attn: self.cross_attn.map_params(f),
            ff_in: self.ff_in.map_params(f),
            ff_out: self.ff_out.map_params(f),
            norm_self: self.norm_self.map_params(f),
            norm_cross: self.norm_cross.map_params(f),
            norm_ff: self.norm_ff.map_params(f),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.self_attn.visit(&join(prefix, "self_attn"), f);
        self.cross_attn.visit(&join(prefix, "cross_attn"), f);
        self.ff_in.visit(&join(prefix, "ff_in"), f);
        self.ff_out.visit(&join(prefix, "ff_out"), f);
        self.norm_self.visit(&join(prefix, "norm_self"), f);
        self.norm_cross.visit(&join(prefix, "norm_cross"), f);
        self.norm_ff.visit(&join(prefix, "norm_ff"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.ff_in.visit_mut(&join(prefix, "ff_in"), f);
        self.ff_out.visit_mut(&join(prefix, "ff_out"), f);
        self.norm_self.visit_mut(&join(prefix, "norm_self"), f);
        self.norm_cross.visit_mut(&join(prefix, "norm_cross"), f);
        self.norm_ff.visit_mut(&join(prefix, "norm_ff"), f);
    }
}

/// Which tensor a layer records as its attention output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TracePoint {
    /// Sublayer output before the residual sum and normalization.
    Sublayer,
    /// Output after the residual sum and layer norm.
    Normed,
}

/// Hyperparameters of the decoder stack that are not weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub heads: usize,
    pub dropout: f64,
    pub query_pe: bool,
    pub memory_pe: bool,
    pub trace_point: TracePoint,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            dropout: 0.7,
            query_pe: true,
            memory_pe: false,
            trace_point: TracePoint::Sublayer,
        }
    }
}

/// Per-layer attention outputs kept for the attention loss and
/// diagnostics.
#[derive(Clone, Debug)]
pub struct DecoderTrace<T> {
    /// Self-attention outputs, one `K × d` node per layer.
    pub self_outputs: Vec<Var>,
    /// Cross-attention outputs, one `K × d` node per layer.
    pub cross_outputs: Vec<Var>,
    /// Head-averaged `K × K` self-attention weights per layer.
    pub self_weights: Vec<Tensor<T>>,
    /// Head-averaged `K × L` cross-attention weights per layer.
    pub cross_weights: Vec<Tensor<T>>,
}

impl<T> DecoderTrace<T> {
    pub fn num_layers(&self) -> usize {
        self.self_outputs.len()
    }
}

/// Scaled dot-product attention with `heads` heads.
///
/// Queries come from `query_in`, keys from `key_in`, values from
/// `value_in`. Returns the output-projected result and the attention
/// weights averaged over heads.
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    query_in: Var,
    key_in: Var,
    value_in: Var,
    p: &AttentionParams<Var>,
    heads: usize,
) -> Result<(Var, Tensor<T>)> {
    let (kq, d) = g.value(query_in).dims2()?;
    let (kv, dk) = g.value(key_in).dims2()?;
    if dk != d || g.value(value_in).dims2()? != (kv, d) {
        return dim_err(format!(
            "attention inputs {:?}, {:?}, {:?}",
            g.value(query_in).shape(),
            g.value(key_in).shape(),
            g.value(value_in).shape()
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "model dimension {d} not divisible by {heads} heads"
        )));
    }
    let q = p.query.apply(g, query_in)?;
    let k = p.key.apply(g, key_in)?;
    let v = p.value.apply(g, value_in)?;
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    let mut mean_weights = Tensor::zeros(&[kq, kv]);
    let inv_heads = T::one() / T::of_usize(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let w = g.softmax(scores, Axis::Row)?;
        for (m, &x) in mean_weights.data_mut().iter_mut().zip(g.value(w).data()) {
            *m += x * inv_heads;
        }
        head_outs.push(g.matmul(w, vh)?);
    }
    let cat = if heads == 1 {
        head_outs[0]
    } else {
        g.concat_cols(&head_outs)?
    };
    let out = p.output.apply(g, cat)?;
    Ok((out, mean_weights))
}

/// Attention where keys and values come from the same source.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    queries: Var,
    keys_values: Var,
    p: &AttentionParams<Var>,
    heads: usize,
) -> Result<(Var, Tensor<T>)> {
    attention(g, queries, keys_values, keys_values, p, heads)
}

fn dropout<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).len();
    let mask = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// Runs the decoder stack over one sample's memory.
///
/// Per layer: `x ← LN(x + Drop(SelfAttn(x + pe, x + pe, x)))`, then
/// `y ← LN(x + Drop(CrossAttn(y + pe, memory, memory)))` with the residual
/// carrying the self-attention output past the cross-attention, then a
/// ReLU feed-forward block with its own residual and norm. Dropout is
/// applied only when `rng` is given.
pub fn decoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    bank: &QueryBank<Var>,
    memory: Var,
    layers: &[DecoderLayerParams<Var>],
    cfg: &DecoderConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, DecoderTrace<T>)> {
    let (mem_len, mem_dim) = g.value(memory).dims2()?;
    if mem_len == 0 {
        return Err(Error::Data("empty memory".into()));
    }
    if layers.is_empty() {
        return Err(Error::Config("decoder needs at least one layer".into()));
    }
    let d = g.value(bank.embeddings).cols();
    if mem_dim != d {
        return dim_err(format!("memory width {mem_dim} vs model dimension {d}"));
    }
    let keys = if cfg.memory_pe {
        let pe = g.constant(sinusoidal_pe(mem_len, d)?);
        g.add(memory, pe)?
    } else {
        memory
    };

    let mut trace = DecoderTrace {
        self_outputs: Vec::with_capacity(layers.len()),
        cross_outputs: Vec::with_capacity(layers.len()),
        self_weights: Vec::with_capacity(layers.len()),
        cross_weights: Vec::with_capacity(layers.len()),
    };
    let mut x = bank.embeddings;
    for layer in layers {
        let q = with_pe(g, x, bank, cfg)?;
        let (sa, sw) = attention(g, q, q, x, &layer.self_attn, cfg.heads)?;
        let sa_drop = dropout(g, sa, cfg.dropout, rng.as_deref_mut())?;
        let res = g.add(x, sa_drop)?;
        x = layer.norm_self.apply(g, res)?;

        let q = with_pe(g, x, bank, cfg)?;
        let (ca, cw) = attention(g, q, keys, memory, &layer.cross_attn, cfg.heads)?;
        let ca_drop = dropout(g, ca, cfg.dropout, rng.as_deref_mut())?;
        let res = g.add(x, ca_drop)?;
        let y = layer.norm_cross.apply(g, res)?;

        match cfg.trace_point {
            TracePoint::Sublayer => {
                trace.self_outputs.push(sa);
                trace.cross_outputs.push(ca);
            }
            TracePoint::Normed => {
                trace.self_outputs.push(x);
                trace.cross_outputs.push(y);
            }
        }
        trace.self_weights.push(sw);
        trace.cross_weights.push(cw);

        let h = layer.ff_in.apply(g, y)?;
        let h = g.relu(h);
        let h = layer.ff_out.apply(g, h)?;
        let h = dropout(g, h, cfg.dropout, rng.as_deref_mut())?;
        let res = g.add(y, h)?;
        x = layer.norm_ff.apply(g, res)?;
    }
    Ok((x, trace))
}

fn with_pe<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    bank: &QueryBank<Var>,
    cfg: &DecoderConfig,
) -> Result<Var> {
    if cfg.query_pe {
        g.add(x, bank.pos_encoding)
    } else {
        Ok(x)
    }
}
