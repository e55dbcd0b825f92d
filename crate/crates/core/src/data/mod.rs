//! Clip-feature ingestion and the planted-structure synthetic generator.

mod format;
mod manifest;
mod synth;

pub(crate) use format::csv_err;
pub use format::{
    decode_features, encode_features, read_features, read_features_csv, write_features,
    FeatureFile, FEATURE_MAGIC, FEATURE_VERSION, LABEL_TAG,
};
pub use manifest::{DatasetManifest, LabelTransform, ManifestEntry, Split};
pub use synth::{gen_synthetic, SynthConfig, SyntheticDataset};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planted per-clip structure of a synthetic sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Clip importance weights on the simplex.
    pub weights: Vec<f64>,
    /// Clip qualities in `[0, 1]`.
    pub qualities: Vec<f64>,
}

impl GroundTruth {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip,weight,quality\n");
        for (i, (w, q)) in self.weights.iter().zip(&self.qualities).enumerate() {
            s.push_str(&format!("{i},{w},{q}\n"));
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bytes = crate::error::read_bytes(path)?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let mut weights = Vec::new();
        let mut qualities = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Data(format!("{}: bad truth row", path.display())))
            };
            weights.push(field(1)?);
            qualities.push(field(2)?);
        }
        Ok(Self { weights, qualities })
    }
}

/// One sample: `L` clip features, its score label, and optionally the
/// planted truth it was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub sample_id: String,
    /// `L × d`.
    pub features: Tensor<f32>,
    pub label: f64,
    pub truth: Option<GroundTruth>,
}

impl FeatureSequence {
    pub fn clips(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Loads a single feature file. The id is the file stem; the label comes
/// from the file's label section, or NaN when it has none.
pub fn load_features(path: &Path) -> Result<FeatureSequence> {
    let file = read_features(path)?;
    Ok(FeatureSequence {
        sample_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        features: file.features,
        label: file.label.unwrap_or(f64::NAN),
        truth: None,
    })
}

/// Relative location of a sample's ground-truth sidecar.
pub fn truth_path(id: &str) -> PathBuf {
    Path::new("truth").join(format!("{id}.csv"))
}

/// A manifest together with all of its samples in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<FeatureSequence>,
}

impl Dataset {
    /// Reads the manifest and every feature file it lists. `.csv` feature
    /// paths go through the CSV importer. Truth sidecars are attached when
    /// present.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in &manifest.samples {
            let p = root.join(&e.path);
            let features = if p.extension().is_some_and(|x| x == "csv") {
                read_features_csv(&p)?
            } else {
                read_features(&p)?.features
            };
            if features.dims2()? != (manifest.clips, manifest.dim) {
                return Err(Error::Data(format!(
                    "{}: shape {:?} but manifest declares {} x {}",
                    p.display(),
                    features.shape(),
                    manifest.clips,
                    manifest.dim
                )));
            }
            let tp = root.join(truth_path(&e.id));
            let truth = if tp.exists() {
                Some(GroundTruth::read_csv(&tp)?)
            } else {
                None
            };
            samples.push(FeatureSequence {
                sample_id: e.id.clone(),
                features,
                label: e.label,
                truth,
            });
        }
        Ok(Self { manifest, samples })
    }

    pub fn split(&self, split: Split) -> Vec<&FeatureSequence> {
        self.manifest
            .samples
            .iter()
            .zip(&self.samples)
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s)
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSequence> {
        self.samples.iter().find(|s| s.sample_id == id)
    }

    /// Normalizes labels with the train split's range (no-op if already
    /// normalized).
    pub fn normalized(&self) -> Result<Self> {
        if self.manifest.normalization.is_some() {
            return Ok(self.clone());
        }
        let manifest = self.manifest.normalize_labels()?;
        let mut samples = self.samples.clone();
        for (s, e) in samples.iter_mut().zip(&manifest.samples) {
            s.label = e.label;
        }
        Ok(Self { manifest, samples })
    }
}
