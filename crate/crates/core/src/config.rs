//! Training configuration and its `key = value` file format.
//!
//! ```text
//! [model]
//! dim = 64
//! heads = 4
//! [loss]
//! lambda_att = 1
//! [train]
//! learning_rate = 0.0001
//! ```
//!
//! Every key can also be addressed as `section.key`, which is how
//! command-line overrides and ablation grids refer to them.

use std::fmt::Write;
use std::path::Path;

use ini::Ini;

use crate::decoder::TracePoint;
use crate::error::{Error, Result};
use crate::head::ScoreActivation;
use crate::losses::{AttentionLossConfig, KlDirection, KlReduction, LossWeights, StopGradient};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub attention_loss: bool,
    pub weights: LossWeights,
    pub kl: AttentionLossConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            attention_loss: true,
            weights: LossWeights::default(),
            kl: AttentionLossConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            learning_rate: 1e-4,
            batch_size: 48,
            epochs: 200,
            seed: 0,
        }
    }
}

/// All addressable keys, in file order.
pub const KEYS: &[&str] = &[
    "model.dim",
    "model.queries",
    "model.heads",
    "model.layers",
    "model.dropout",
    "model.query_variance",
    "model.query_pe",
    "model.memory_pe",
    "model.learned_pe",
    "model.trace_point",
    "model.score_activation",
    "loss.attention_loss",
    "loss.lambda_reg",
    "loss.lambda_att",
    "loss.kl_reduction",
    "loss.kl_direction",
    "loss.stop_gradient",
    "train.learning_rate",
    "train.batch_size",
    "train.epochs",
    "train.seed",
];

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N>
where
    N::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected a boolean, got {other:?}"
        ))),
    }
}

fn bad_choice<T>(key: &str, v: &str, choices: &str) -> Result<T> {
    Err(Error::Config(format!(
        "{key}: {v:?} is not one of {choices}"
    )))
}

impl TrainConfig {
    /// Sets one dotted key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let l = &mut self.loss;
        match key {
            "model.dim" => m.dim = parse_num(key, v)?,
            "model.queries" => m.queries = parse_num(key, v)?,
            "model.heads" => m.heads = parse_num(key, v)?,
            "model.layers" => m.layers = parse_num(key, v)?,
            "model.dropout" => m.dropout = parse_num(key, v)?,
            "model.query_variance" => m.query_variance = parse_num(key, v)?,
            "model.query_pe" => m.query_pe = parse_bool(key, v)?,
            "model.memory_pe" => m.memory_pe = parse_bool(key, v)?,
            "model.learned_pe" => m.learned_pe = parse_bool(key, v)?,
            "model.trace_point" => {
                m.trace_point = match v {
                    "sublayer" => TracePoint::Sublayer,
                    "normed" => TracePoint::Normed,
                    _ => return bad_choice(key, v, "sublayer, normed"),
                }
            }
            "model.score_activation" => {
                m.score_activation = match v {
                    "identity" => ScoreActivation::Identity,
                    "sigmoid" => ScoreActivation::Sigmoid,
                    _ => return bad_choice(key, v, "identity, sigmoid"),
                }
            }
            "loss.attention_loss" => l.attention_loss = parse_bool(key, v)?,
            "loss.lambda_reg" => l.weights.lambda_reg = parse_num(key, v)?,
            "loss.lambda_att" => l.weights.lambda_att = parse_num(key, v)?,
            "loss.kl_reduction" => {
                l.kl.reduction = match v {
                    "row_mean" => KlReduction::RowMean,
                    "row_sum" => KlReduction::RowSum,
                    _ => return bad_choice(key, v, "row_mean, row_sum"),
                }
            }
            "loss.kl_direction" => {
                l.kl.direction = match v {
                    "forward" => KlDirection::Forward,
                    "symmetric" => KlDirection::Symmetric,
                    _ => return bad_choice(key, v, "forward, symmetric"),
                }
            }
            "loss.stop_gradient" => {
                l.kl.stop_gradient = match v {
                    "none" => StopGradient::None,
                    "self" => StopGradient::SelfMap,
                    "cross" => StopGradient::CrossMap,
                    _ => return bad_choice(key, v, "none, self, cross"),
                }
            }
            "train.learning_rate" => self.learning_rate = parse_num(key, v)?,
            "train.batch_size" => self.batch_size = parse_num(key, v)?,
            "train.epochs" => self.epochs = parse_num(key, v)?,
            "train.seed" => self.seed = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Current value of a dotted key, formatted as [`TrainConfig::set`]
    /// accepts it.
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let l = &self.loss;
        Ok(match key {
            "model.dim" => m.dim.to_string(),
            "model.queries" => m.queries.to_string(),
            "model.heads" => m.heads.to_string(),
            "model.layers" => m.layers.to_string(),
            "model.dropout" => m.dropout.to_string(),
            "model.query_variance" => m.query_variance.to_string(),
            "model.query_pe" => m.query_pe.to_string(),
            "model.memory_pe" => m.memory_pe.to_string(),
            "model.learned_pe" => m.learned_pe.to_string(),
            "model.trace_point" => match m.trace_point {
                TracePoint::Sublayer => "sublayer",
                TracePoint::Normed => "normed",
            }
            .into(),
            "model.score_activation" => match m.score_activation {
                ScoreActivation::Identity => "identity",
                ScoreActivation::Sigmoid => "sigmoid",
            }
            .into(),
            "loss.attention_loss" => l.attention_loss.to_string(),
            "loss.lambda_reg" => l.weights.lambda_reg.to_string(),
            "loss.lambda_att" => l.weights.lambda_att.to_string(),
            "loss.kl_reduction" => match l.kl.reduction {
                KlReduction::RowMean => "row_mean",
                KlReduction::RowSum => "row_sum",
            }
            .into(),
            "loss.kl_direction" => match l.kl.direction {
                KlDirection::Forward => "forward",
                KlDirection::Symmetric => "symmetric",
            }
            .into(),
            "loss.stop_gradient" => match l.kl.stop_gradient {
                StopGradient::None => "none",
                StopGradient::SelfMap => "self",
                StopGradient::CrossMap => "cross",
            }
            .into(),
            "train.learning_rate" => self.learning_rate.to_string(),
            "train.batch_size" => self.batch_size.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.seed" => self.seed.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        })
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Serializes every key. Floats print in shortest round-trip form, so
    /// parsing the text back gives an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for key in KEYS {
            let (sec, name) = key.split_once('.').expect("dotted");
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                writeln!(s, "[{sec}]").unwrap();
                section = sec;
            }
            writeln!(s, "{name} = {}", self.get(key).expect("known key")).unwrap();
        }
        s
    }

    /// Parses a config file; keys it omits keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key {k:?} outside any section")));
                }
                continue;
            };
            for (k, v) in props.iter() {
                cfg.set(&format!("{section}.{k}"), v)?;
            }
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&crate::error::read_text(path)?)
    }
}
