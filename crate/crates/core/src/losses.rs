//! Attention loss between self- and cross-attention similarity maps,
//! regression MSE, and their weighted combination.

use crate::decoder::DecoderTrace;
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Graph, Var};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Row-wise softmax of `A·Aᵀ`: a `K × K` query-similarity distribution.
pub fn gram_softmax<T: Scalar>(g: &mut Graph<T>, a: Var) -> Result<Var> {
    if !g.value(a).is_finite() {
        return Err(Error::Numeric("gram_softmax of non-finite input".into()));
    }
    let at = g.transpose(a)?;
    let gram = g.matmul(a, at)?;
    g.softmax(gram, Axis::Row)
}

/// How per-row divergences are reduced to one number per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlReduction {
    RowMean,
    RowSum,
}

/// `D(P‖Q)` as written, or the average of both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlDirection {
    Forward,
    Symmetric,
}

/// Which side of the divergence is treated as a constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopGradient {
    None,
    SelfMap,
    CrossMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionLossConfig {
    pub reduction: KlReduction,
    pub direction: KlDirection,
    pub stop_gradient: StopGradient,
}

impl Default for AttentionLossConfig {
    fn default() -> Self {
        Self {
            reduction: KlReduction::RowMean,
            direction: KlDirection::Forward,
            stop_gradient: StopGradient::None,
        }
    }
}

/// KL divergence between two row-stochastic maps, computed per row and
/// reduced over rows.
pub fn kl_rows<T: Scalar>(g: &mut Graph<T>, p: Var, q: Var, reduction: KlReduction) -> Result<Var> {
    let (rows, _) = g.value(p).dims2()?;
    if g.value(p).shape() != g.value(q).shape() {
        return dim_err(format!(
            "KL between maps {:?} and {:?}",
            g.value(p).shape(),
            g.value(q).shape()
        ));
    }
    let floor = T::of(LOG_FLOOR);
    let lp = g.ln_clamped(p, floor);
    let lq = g.ln_clamped(q, floor);
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    let total = g.sum(terms);
    Ok(match reduction {
        KlReduction::RowSum => total,
        KlReduction::RowMean => g.scale(total, T::one() / T::of_usize(rows)),
    })
}

/// Attention loss of a trace: the per-layer divergence between the
/// Gram-softmax maps of the self- and cross-attention outputs, summed
/// over layers.
pub struct AttentionLoss {
    pub total: Var,
    pub per_layer: Vec<Var>,
    /// Gram-softmax maps of the self-attention outputs, per layer.
    pub self_maps: Vec<Var>,
    /// Gram-softmax maps of the cross-attention outputs, per layer.
    pub cross_maps: Vec<Var>,
}

pub fn attention_loss<T: Scalar>(
    g: &mut Graph<T>,
    trace: &DecoderTrace<T>,
    cfg: &AttentionLossConfig,
) -> Result<AttentionLoss> {
    attention_loss_from_outputs(g, &trace.self_outputs, &trace.cross_outputs, cfg)
}

/// [`attention_loss`] on explicit per-layer output lists.
pub fn attention_loss_from_outputs<T: Scalar>(
    g: &mut Graph<T>,
    self_outputs: &[Var],
    cross_outputs: &[Var],
    cfg: &AttentionLossConfig,
) -> Result<AttentionLoss> {
    if self_outputs.is_empty() || self_outputs.len() != cross_outputs.len() {
        return Err(Error::Contract(format!(
            "attention loss needs matching non-empty layer lists, got {} and {}",
            self_outputs.len(),
            cross_outputs.len()
        )));
    }
    let k = g.value(self_outputs[0]).rows();
    let mut per_layer = Vec::with_capacity(self_outputs.len());
    let mut self_maps = Vec::with_capacity(self_outputs.len());
    let mut cross_maps = Vec::with_capacity(self_outputs.len());
    for (&a_s, &a_c) in self_outputs.iter().zip(cross_outputs) {
        if g.value(a_s).rows() != k || g.value(a_c).rows() != k {
            return Err(Error::Contract(format!(
                "query count differs between layers: {} / {} vs {k}",
                g.value(a_s).rows(),
                g.value(a_c).rows()
            )));
        }
        let ls = gram_softmax(g, a_s)?;
        let lc = gram_softmax(g, a_c)?;
        self_maps.push(ls);
        cross_maps.push(lc);
        let (ls, lc) = match cfg.stop_gradient {
            StopGradient::None => (ls, lc),
            StopGradient::SelfMap => (g.detach(ls), lc),
            StopGradient::CrossMap => (ls, g.detach(lc)),
        };
        let kl = match cfg.direction {
            KlDirection::Forward => kl_rows(g, ls, lc, cfg.reduction)?,
            KlDirection::Symmetric => {
                let fwd = kl_rows(g, ls, lc, cfg.reduction)?;
                let bwd = kl_rows(g, lc, ls, cfg.reduction)?;
                let both = g.add(fwd, bwd)?;
                g.scale(both, T::of(0.5))
            }
        };
        per_layer.push(kl);
    }
    let total = if per_layer.len() == 1 {
        per_layer[0]
    } else {
        g.concat_rows(&per_layer).map(|v| g.sum(v))?
    };
    Ok(AttentionLoss {
        total,
        per_layer,
        self_maps,
        cross_maps,
    })
}

/// Mean squared error between equal-length prediction and target vectors.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let (np, nt) = (g.value(pred).len(), g.value(target).len());
    if np != nt || np == 0 {
        return Err(Error::Contract(format!(
            "mse needs equal non-empty lengths, got {np} and {nt}"
        )));
    }
    let pred = g.reshape(pred, &[np])?;
    let target = g.reshape(target, &[nt])?;
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// Weights of the regression and attention terms in the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub lambda_att: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_reg: 1.0,
            lambda_att: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_reg: f64, lambda_att: f64) -> Result<Self> {
        let w = Self {
            lambda_reg,
            lambda_att,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.lambda_reg) || !ok(self.lambda_att) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )));
        }
        if self.lambda_reg == 0.0 && self.lambda_att == 0.0 {
            return Err(Error::Config("loss weights are both zero".into()));
        }
        Ok(())
    }

    /// `λ_reg·reg + λ_att·att` on plain numbers.
    pub fn combine(&self, reg: f64, att: f64) -> f64 {
        self.lambda_reg * reg + self.lambda_att * att
    }
}

/// `λ_reg·reg + λ_att·att` on the graph. A term whose weight is zero is
/// dropped, so a missing attention term costs nothing.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    reg: Var,
    att: Option<Var>,
    w: &LossWeights,
) -> Result<Var> {
    let reg_term = g.scale(reg, T::of(w.lambda_reg));
    match att {
        Some(att) if w.lambda_att != 0.0 => {
            let att_term = g.scale(att, T::of(w.lambda_att));
            g.add(reg_term, att_term)
        }
        _ => Ok(reg_term),
    }
}

/// Scalar values of one objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub loss_reg: f64,
    pub loss_att: f64,
    pub loss_all: f64,
    pub per_layer_kl: Vec<f64>,
}
