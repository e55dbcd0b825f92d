//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `TQDC`, `u32` version, `u32` length and
//! UTF-8 text of the training config, `u64` epoch, `u64` Adam step, `u32`
//! array count, then per array: `u32` name length, name, `u32` rank,
//! `u32` dims, `f64` data. Arrays are the trainable parameters
//! (`param.<name>`) followed by Adam moments (`adam.m.<name>`,
//! `adam.v.<name>`).

use std::collections::HashMap;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TQDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub model: Model<Tensor<T>>,
    pub adam: AdamState<T>,
    pub epoch: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_array<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len())?;
    for &d in t.shape() {
        put_u32(out, d)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        put_u32(&mut out, cfg.len())?;
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        let mut arrays: Vec<(String, &Tensor<T>)> = Vec::new();
        self.model
            .visit("", &mut |n, t| arrays.push((format!("param.{n}"), t)));
        for (n, m) in self.adam.names.iter().zip(&self.adam.first) {
            arrays.push((format!("adam.m.{n}"), m));
        }
        for (n, v) in self.adam.names.iter().zip(&self.adam.second) {
            arrays.push((format!("adam.v.{n}"), v));
        }
        put_u32(&mut out, arrays.len())?;
        for (n, t) in arrays {
            put_array(&mut out, &n, t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad checkpoint magic, expected TQDC".into(),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|e| r.error(format!("config is not UTF-8: {e}")))?;
        let config = TrainConfig::parse(cfg_text)?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays = HashMap::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|e| r.error(format!("array name is not UTF-8: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len.min(bytes.len() / 8));
            for _ in 0..len {
                data.push(T::of(f64::from_le_bytes(r.take(8)?.try_into().unwrap())));
            }
            arrays.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after checkpoint".into()));
        }

        let mut model = Model::init(&config.model, config.seed)?;
        let mut missing = None;
        let mut fill = |prefix: &str, n: &str, t: &mut Tensor<T>| match arrays
            .remove(&format!("{prefix}{n}"))
        {
            Some(a) if a.shape() == t.shape() => *t = a,
            _ => {
                missing.get_or_insert_with(|| format!("{prefix}{n}"));
            }
        };
        model.visit_mut("", &mut |n, t| fill("param.", n, t));
        let mut adam = AdamState::new(&model);
        adam.step = step;
        for (n, m) in adam.names.iter().zip(adam.first.iter_mut()) {
            fill("adam.m.", n, m);
        }
        for (n, v) in adam.names.iter().zip(adam.second.iter_mut()) {
            fill("adam.v.", n, v);
        }
        if let Some(name) = missing {
            return Err(Error::Data(format!(
                "checkpoint array {name} is missing or mis-shaped"
            )));
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::Data(format!("unexpected checkpoint array {extra}")));
        }
        Ok(Self {
            config,
            model,
            adam,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_bytes(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::error::read_bytes(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: String) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!("truncated checkpoint: need {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
