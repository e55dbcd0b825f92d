//! Dataset manifest: a line-oriented text file.
//!
//! ```text
//! #tqd-manifest v1
//! #dim=64
//! #clips=8
//! #label_min=0
//! #label_max=1
//! sample_0000,features/sample_0000.tqdf,0.4182,train
//! ```
//!
//! Metadata lines start with `#`; every other non-empty line is
//! `id,relative path,label,split`. Paths are relative to the manifest.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

const HEADER: &str = "#tqd-manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: f64,
    pub split: Split,
}

/// Affine label map `y ↦ (y − min)/(max − min)` fitted on the train split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelTransform {
    pub min: f64,
    pub max: f64,
}

impl LabelTransform {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || max <= min {
            return Err(Error::Range(format!("label range [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * (self.max - self.min) + self.min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub dim: usize,
    pub clips: usize,
    pub label_min: f64,
    pub label_max: f64,
    /// Set once labels have been normalized; maps back to raw labels.
    pub normalization: Option<LabelTransform>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clips == 0 {
            return Err(Error::Data(
                "manifest dim and clips must be positive".into(),
            ));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!(
                    "sample id {:?} appears more than once (splits must be disjoint)",
                    s.id
                )));
            }
            if !s.label.is_finite() || s.label < self.label_min || s.label > self.label_max {
                return Err(Error::Data(format!(
                    "label {} of {:?} outside declared range [{}, {}]",
                    s.label, s.id, self.label_min, self.label_max
                )));
            }
        }
        Ok(())
    }

    /// Maps labels to `[0, 1]` using the train split's min and max. Test
    /// labels outside that range land outside `[0, 1]` and are kept.
    pub fn normalize_labels(&self) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::Data("labels are already normalized".into()));
        }
        let (lo, hi) = self
            .split(Split::Train)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.label), hi.max(s.label))
            });
        let t = LabelTransform::new(lo, hi)
            .map_err(|_| Error::Range("train labels are constant or missing".into()))?;
        let mut out = self.clone();
        for s in &mut out.samples {
            s.label = t.apply(s.label);
        }
        out.label_min = t.apply(self.label_min);
        out.label_max = t.apply(self.label_max);
        out.normalization = Some(t);
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{HEADER}").unwrap();
        writeln!(s, "#dim={}", self.dim).unwrap();
        writeln!(s, "#clips={}", self.clips).unwrap();
        writeln!(s, "#label_min={}", self.label_min).unwrap();
        writeln!(s, "#label_max={}", self.label_max).unwrap();
        if let Some(t) = self.normalization {
            writeln!(s, "#norm_min={}", t.min).unwrap();
            writeln!(s, "#norm_max={}", t.max).unwrap();
        }
        for e in &self.samples {
            writeln!(s, "{},{},{},{}", e.id, e.path, e.label, e.split.as_str()).unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(Error::Data(format!("manifest must start with {HEADER:?}"))),
        }
        let mut dim = None;
        let mut clips = None;
        let mut label_min = None;
        let mut label_max = None;
        let mut norm_min = None;
        let mut norm_max = None;
        let mut samples = Vec::new();
        for (no, line) in lines {
            let line = line.trim();
            let bad = |m: String| Error::Data(format!("manifest line {}: {m}", no + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| bad(format!("bad metadata {meta:?}")))?;
                let f = || {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| bad(format!("{k}: {e}")))
                };
                let u = || {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| bad(format!("{k}: {e}")))
                };
                match k.trim() {
                    "dim" => dim = Some(u()?),
                    "clips" => clips = Some(u()?),
                    "label_min" => label_min = Some(f()?),
                    "label_max" => label_max = Some(f()?),
                    "norm_min" => norm_min = Some(f()?),
                    "norm_max" => norm_max = Some(f()?),
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, path, label, split] = fields[..] else {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            };
            samples.push(ManifestEntry {
                id: id.to_string(),
                path: path.to_string(),
                label: label.parse().map_err(|e| bad(format!("label: {e}")))?,
                split: split.parse()?,
            });
        }
        let missing = |k: &str| Error::Data(format!("manifest is missing #{k}"));
        let normalization = match (norm_min, norm_max) {
            (Some(lo), Some(hi)) => Some(LabelTransform::new(lo, hi)?),
            (None, None) => None,
            _ => {
                return Err(Error::Data(
                    "manifest has only one of norm_min/norm_max".into(),
                ))
            }
        };
        let m = Self {
            dim: dim.ok_or_else(|| missing("dim"))?,
            clips: clips.ok_or_else(|| missing("clips"))?,
            label_min: label_min.ok_or_else(|| missing("label_min"))?,
            label_max: label_max.ok_or_else(|| missing("label_max"))?,
            normalization,
            samples,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&crate::error::read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::error::write_bytes(path, self.to_text())?;
        Ok(())
    }
}
