//! Adam training on the weighted sum of the regression and attention
//! losses, epoch logging, checkpoints and the ablation harness.

mod ablation;
mod adam;
mod checkpoint;

pub use ablation::{
    ablation_csv, preset_grid, run_ablation, AblationCell, AblationGrid, AblationRow,
};
pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::{Dataset, FeatureSequence, Split};
use crate::error::{Error, Result};
use crate::losses::{attention_loss, mse_loss, total_loss, LossBreakdown};
use crate::metrics::{diagonality, relative_l2, srcc, EvalReport};
use crate::model::{forward_sample, Assessment, Model};
use crate::params::ParamTree;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training regression loss over the epoch.
    pub loss_reg: f64,
    /// Mean training attention loss over the epoch (logged even when the
    /// term is switched off).
    pub loss_att: f64,
    pub kl_per_layer: Vec<f64>,
    pub srcc: f64,
    pub rl2_x100: f64,
    pub diagonality: Vec<f64>,
}

impl EpochRecord {
    pub fn csv_header(layers: usize) -> String {
        let mut h = String::from("epoch,loss_reg,loss_att,srcc,rl2_x100");
        for i in 1..=layers {
            write!(h, ",diag_layer{i}").unwrap();
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{}",
            self.epoch, self.loss_reg, self.loss_att, self.srcc, self.rl2_x100
        );
        for d in &self.diagonality {
            write!(r, ",{d}").unwrap();
        }
        r
    }
}

/// The whole log as CSV text.
pub fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let layers = log.first().map_or(0, |r| r.diagonality.len());
    let mut s = EpochRecord::csv_header(layers);
    s.push('\n');
    for r in log {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// The objective became non-finite; `best` and `last` hold the last
    /// good state.
    Diverged {
        epoch: usize,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// State with the highest test SRCC seen.
    pub best: Checkpoint<T>,
    pub best_report: EvalReport,
    /// State after the last completed epoch.
    pub last: Checkpoint<T>,
    pub final_report: EvalReport,
    pub log: Vec<EpochRecord>,
    pub status: TrainStatus,
}

/// Runs the model over samples in evaluation mode.
pub fn assess_all<T: Scalar>(
    model: &Model<Tensor<T>>,
    cfg: &TrainConfig,
    samples: &[&FeatureSequence],
) -> Result<Vec<Assessment<T>>> {
    samples
        .iter()
        .map(|s| model.assess(&cfg.model, &s.features.cast()))
        .collect()
}

/// SRCC, R-ℓ2 (×100, with the given label range) and mean per-layer
/// self-map diagonality. SRCC is NaN when predictions are constant.
pub fn evaluate<T: Scalar>(
    model: &Model<Tensor<T>>,
    cfg: &TrainConfig,
    samples: &[&FeatureSequence],
    y_min: f64,
    y_max: f64,
) -> Result<EvalReport> {
    let assessed = assess_all(model, cfg, samples)?;
    report_from(&assessed, samples, y_min, y_max)
}

pub(crate) fn report_from<T: Scalar>(
    assessed: &[Assessment<T>],
    samples: &[&FeatureSequence],
    y_min: f64,
    y_max: f64,
) -> Result<EvalReport> {
    let pred: Vec<f64> = assessed
        .iter()
        .map(|a| a.clips.final_score.as_f64())
        .collect();
    let target: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let rho = match srcc(&pred, &target) {
        Ok(r) => r,
        Err(Error::Numeric(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let rl2 = relative_l2(&pred, &target, y_min, y_max)?;
    let layers = assessed.first().map_or(0, |a| a.self_maps.len());
    let mut diag = vec![0.0; layers];
    for a in assessed {
        for (acc, m) in diag.iter_mut().zip(&a.self_maps) {
            *acc += diagonality(m)?.as_f64();
        }
    }
    diag.iter_mut().for_each(|d| *d /= assessed.len() as f64);
    Ok(EvalReport {
        srcc: rho,
        rl2_x100: 100.0 * rl2,
        diagonality_per_layer: diag,
        n_samples: assessed.len(),
    })
}

/// Mean over samples of the rank correlation between predicted clip
/// weights ([`Assessment::clip_weights`]) and the planted weights. A
/// sample whose predicted weights are all equal contributes 0.
pub fn weight_recovery<T: Scalar>(
    model: &Model<Tensor<T>>,
    cfg: &TrainConfig,
    samples: &[&FeatureSequence],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("weight recovery needs samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let truth = s.truth.as_ref().ok_or_else(|| {
            Error::Data(format!("sample {:?} has no planted weights", s.sample_id))
        })?;
        let a = model.assess(&cfg.model, &s.features.cast())?;
        total += match srcc(&a.clip_weights(), &truth.weights) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => 0.0,
            Err(e) => return Err(e),
        };
    }
    Ok(total / samples.len() as f64)
}

/// The training objective of one batch on a graph.
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// `λ_reg·MSE + λ_att·(mean attention loss)` over `(memory, label)` pairs.
///
/// Dropout is applied only when `rng` is given. The attention loss is
/// always computed for logging but enters the total only when enabled.
pub fn objective<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<Var>,
    cfg: &TrainConfig,
    batch: &[(&Tensor<T>, f64)],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Objective> {
    let mut preds = Vec::with_capacity(batch.len());
    let mut atts = Vec::with_capacity(batch.len());
    let mut per_layer = vec![0.0; cfg.model.layers];
    for (memory, _) in batch {
        let mem = g.constant((*memory).clone());
        let fwd = forward_sample(g, model, mem, &cfg.model, rng.as_deref_mut())?;
        preds.push(fwd.head.final_score);
        let att = attention_loss(g, &fwd.trace, &cfg.loss.kl)?;
        for (acc, &v) in per_layer.iter_mut().zip(&att.per_layer) {
            *acc += g.value(v).item()?.as_f64() / batch.len() as f64;
        }
        atts.push(att.total);
    }
    let pred = g.concat_rows(&preds)?;
    let target = g.constant(Tensor::vector(
        batch.iter().map(|(_, y)| T::of(*y)).collect(),
    ));
    let reg = mse_loss(g, pred, target)?;
    let att_stack = g.concat_rows(&atts)?;
    let att = g.mean(att_stack);
    let att_term = cfg.loss.attention_loss.then_some(att);
    let total = total_loss(g, reg, att_term, &cfg.loss.weights)?;
    let breakdown = LossBreakdown {
        loss_reg: g.value(reg).item()?.as_f64(),
        loss_att: g.value(att).item()?.as_f64(),
        loss_all: g.value(total).item()?.as_f64(),
        per_layer_kl: per_layer,
    };
    Ok(Objective { total, breakdown })
}

fn batch_step<T: Scalar>(
    model: &mut Model<Tensor<T>>,
    adam: &mut AdamState<T>,
    cfg: &TrainConfig,
    batch: &[(&Tensor<T>, f64)],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let rng = (cfg.model.dropout > 0.0).then_some(dropout_rng);
    let Objective { total, breakdown } = objective(&mut g, &bound, cfg, batch, rng)?;
    if !breakdown.loss_all.is_finite() {
        return Err(Error::Training(format!(
            "objective became {}",
            breakdown.loss_all
        )));
    }
    g.backward(total)?;
    let mut grads = Vec::with_capacity(adam.names.len());
    let mut shapes = Vec::with_capacity(adam.names.len());
    model.visit("", &mut |_, t| shapes.push(t.shape().to_vec()));
    let mut k = 0;
    bound.visit("", &mut |_, &v| {
        grads.push(
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(&shapes[k])),
        );
        k += 1;
    });
    adam_step(model, &grads, adam, cfg.learning_rate)?;
    Ok(breakdown)
}

/// Trains on the train split and evaluates on the test split after every
/// epoch.
///
/// Labels are normalized with the train split's range first. The run is
/// a deterministic function of the config and data.
pub fn train<T: Scalar>(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let data = data.normalized()?;
    if data.manifest.dim != cfg.model.dim {
        return Err(Error::Config(format!(
            "model dim {} but features have width {}",
            cfg.model.dim, data.manifest.dim
        )));
    }
    let train_set = data.split(Split::Train);
    let test_set = data.split(Split::Test);
    if train_set.is_empty() || test_set.len() < 2 {
        return Err(Error::Data(format!(
            "need train samples and >= 2 test samples, got {} and {}",
            train_set.len(),
            test_set.len()
        )));
    }
    let memories: Vec<(Tensor<T>, f64)> = train_set
        .iter()
        .map(|s| (s.features.cast(), s.label))
        .collect();

    let mut model = Model::<Tensor<T>>::init(&cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5348_5546));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x4452_4f50));

    let snapshot = |model: &Model<Tensor<T>>, adam: &AdamState<T>, epoch: usize| Checkpoint {
        config: cfg.clone(),
        model: model.clone(),
        adam: adam.clone(),
        epoch: epoch as u64,
    };
    let initial_report = evaluate(&model, cfg, &test_set, 0.0, 1.0)?;
    let mut best = snapshot(&model, &adam, 0);
    let mut best_report = initial_report.clone();
    let mut final_report = initial_report;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut status = TrainStatus::Completed;
    let mut order: Vec<usize> = (0..memories.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        let epoch_start = (model.clone(), adam.clone());
        if memories.len() > cfg.batch_size {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut reg, mut att) = (0.0, 0.0);
        let mut per_layer = vec![0.0; cfg.model.layers];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor<T>, f64)> = chunk
                .iter()
                .map(|&i| (&memories[i].0, memories[i].1))
                .collect();
            let losses = match batch_step(&mut model, &mut adam, cfg, &batch, &mut dropout_rng) {
                Ok(l) => l,
                Err(Error::Training(reason)) => {
                    (model, adam) = epoch_start;
                    status = TrainStatus::Diverged { epoch, reason };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let w = chunk.len() as f64 / memories.len() as f64;
            reg += w * losses.loss_reg;
            att += w * losses.loss_att;
            for (acc, v) in per_layer.iter_mut().zip(&losses.per_layer_kl) {
                *acc += w * v;
            }
        }
        let report = evaluate(&model, cfg, &test_set, 0.0, 1.0)?;
        log.push(EpochRecord {
            epoch,
            loss_reg: reg,
            loss_att: att,
            kl_per_layer: per_layer,
            srcc: report.srcc,
            rl2_x100: report.rl2_x100,
            diagonality: report.diagonality_per_layer.clone(),
        });
        if report.srcc > best_report.srcc || best_report.srcc.is_nan() && !report.srcc.is_nan() {
            best = snapshot(&model, &adam, epoch);
            best_report = report.clone();
        }
        final_report = report;
    }
    let last_epoch = log.last().map_or(0, |r| r.epoch);
    Ok(TrainOutcome {
        last: snapshot(&model, &adam, last_epoch),
        best,
        best_report,
        final_report,
        log,
        status,
    })
}
