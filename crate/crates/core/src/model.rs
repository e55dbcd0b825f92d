//! The full network: query bank, decoder stack and weight-score head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{
    decoder_forward, init_queries, DecoderConfig, DecoderLayerParams, DecoderTrace, QueryBank,
    TracePoint,
};
use crate::error::{Error, Result};
use crate::head::{head_forward, ClipAssessment, HeadOutput, HeadParams, ScoreActivation};
use crate::params::{bind, join, ParamTree};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Model width `d`; must equal the clip-feature width.
    pub dim: usize,
    /// Number of queries `K`.
    pub queries: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Variance of the Gaussian the query embeddings are drawn from.
    pub query_variance: f64,
    pub query_pe: bool,
    pub memory_pe: bool,
    pub learned_pe: bool,
    pub trace_point: TracePoint,
    pub score_activation: ScoreActivation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            queries: 8,
            heads: 4,
            layers: 2,
            dropout: 0.7,
            query_variance: 5.0,
            query_pe: true,
            memory_pe: false,
            learned_pe: false,
            trace_point: TracePoint::Sublayer,
            score_activation: ScoreActivation::Identity,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return fail(format!("dim must be even and >= 2, got {}", self.dim));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.queries == 0 || self.layers == 0 {
            return fail("queries and layers must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.query_variance > 0.0 && self.query_variance.is_finite()) {
            return fail(format!(
                "query variance must be > 0, got {}",
                self.query_variance
            ));
        }
        Ok(())
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            heads: self.heads,
            dropout: self.dropout,
            query_pe: self.query_pe,
            memory_pe: self.memory_pe,
            trace_point: self.trace_point,
        }
    }
}

/// All weights of the network over leaf type `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<P> {
    pub queries: QueryBank<P>,
    pub layers: Vec<DecoderLayerParams<P>>,
    pub head: HeadParams<P>,
}

impl<P> ParamTree<P> for Model<P> {
    type Mapped<Q> = Model<Q>;
    fn map_params<Q>(&self, f: &mut dyn FnMut(bool, &P) -> Q) -> Model<Q> {
        Model {
            queries: self.queries.map_params(f),
            layers: self.layers.map_params(f),
            head: self.head.map_params(f),
        }
    }
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a P)) {
        self.queries.visit(&join(prefix, "queries"), f);
        self.layers.visit(&join(prefix, "layers"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.queries.visit_mut(&join(prefix, "queries"), f);
        self.layers.visit_mut(&join(prefix, "layers"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Scalar> Model<Tensor<T>> {
    /// Fresh weights. The query bank and the remaining weights draw from
    /// independent streams derived from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut queries = init_queries(cfg.queries, cfg.dim, cfg.query_variance, seed)?;
        queries.learned_pe = cfg.learned_pe;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_ae11);
        let layers = (0..cfg.layers)
            .map(|_| DecoderLayerParams::init(cfg.dim, &mut rng))
            .collect();
        let head = HeadParams::init(cfg.dim, &mut rng);
        Ok(Self {
            queries,
            layers,
            head,
        })
    }

    pub fn bind(&self, g: &mut Graph<T>) -> Model<Var> {
        bind(g, self)
    }

    /// Runs one sample without dropout and reads back the results.
    pub fn assess(&self, cfg: &ModelConfig, memory: &Tensor<T>) -> Result<Assessment<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mem = g.constant(memory.clone());
        let fwd = forward_sample(&mut g, &bound, mem, cfg, None)?;
        let maps = crate::losses::attention_loss(
            &mut g,
            &fwd.trace,
            &crate::losses::AttentionLossConfig::default(),
        )?;
        Ok(Assessment {
            clips: ClipAssessment::from_output(&g, &fwd.head)?,
            self_maps: maps.self_maps.iter().map(|&v| g.value(v).clone()).collect(),
            cross_maps: maps
                .cross_maps
                .iter()
                .map(|&v| g.value(v).clone())
                .collect(),
            per_layer_kl: maps
                .per_layer
                .iter()
                .map(|&v| g.value(v).item().map(Scalar::as_f64))
                .collect::<Result<_>>()?,
            self_weights: fwd.trace.self_weights.clone(),
            cross_weights: fwd.trace.cross_weights.clone(),
        })
    }
}

/// Everything the network computes for one sample in evaluation mode.
#[derive(Clone, Debug)]
pub struct Assessment<T> {
    pub clips: ClipAssessment<T>,
    /// Gram-softmax maps of the self-attention outputs, per layer.
    pub self_maps: Vec<Tensor<T>>,
    /// Gram-softmax maps of the cross-attention outputs, per layer.
    pub cross_maps: Vec<Tensor<T>>,
    pub per_layer_kl: Vec<f64>,
    pub self_weights: Vec<Tensor<T>>,
    pub cross_weights: Vec<Tensor<T>>,
}

impl<T: Scalar> Assessment<T> {
    /// Query weights carried over to clips by the last cross-attention:
    /// clip `l` gets `Σ_k w_k·A[k, l]`. Queries are not tied to clip
    /// positions, so this is how a query-level weight lands on the clips
    /// it reads. The result sums to 1.
    pub fn clip_weights(&self) -> Vec<f64> {
        let Some(cross) = self.cross_weights.last() else {
            return self.clips.weights.iter().map(|w| w.as_f64()).collect();
        };
        (0..cross.cols())
            .map(|l| {
                self.clips
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w.as_f64() * cross.at(k, l).as_f64())
                    .sum()
            })
            .collect()
    }
}

/// Graph nodes of one sample's forward pass.
pub struct SampleForward<T> {
    pub features: Var,
    pub trace: DecoderTrace<T>,
    pub head: HeadOutput,
}

pub fn forward_sample<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<Var>,
    memory: Var,
    cfg: &ModelConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<SampleForward<T>> {
    let (features, trace) = decoder_forward(
        g,
        &model.queries,
        memory,
        &model.layers,
        &cfg.decoder(),
        rng,
    )?;
    let head = head_forward(g, features, &model.head, cfg.score_activation)?;
    Ok(SampleForward {
        features,
        trace,
        head,
    })
}
