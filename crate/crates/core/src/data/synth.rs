//! Synthetic data with planted weight-score structure.
//!
//! Each sample draws clip weights `w ~ Dirichlet(1)` and qualities
//! `q_k ~ U[0, 1]`; clip `k`'s feature is `W·[w_k, q_k, e_k] + ε` with
//! `e_k` the one-hot clip position, `W` a `d × (K + 2)` Gaussian map shared
//! by the whole dataset and `ε ~ N(0, σ²)`. The label is `Σ w_k q_k`.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::multi::Dirichlet;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    truth_path, write_features, Dataset, DatasetManifest, FeatureSequence, GroundTruth,
    ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub clips: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 50,
            clips: 8,
            dim: 64,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips < 2 || self.dim < 8 {
            return Err(Error::Config(format!(
                "synthetic data needs clips >= 2 and dim >= 8, got {} and {}",
                self.clips, self.dim
            )));
        }
        if self.n_train < 2 || self.n_test == 0 {
            return Err(Error::Config(format!(
                "need >= 2 train and >= 1 test samples, got {} and {}",
                self.n_train, self.n_test
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// The shared `d × (K + 2)` embedding map.
    pub embedding: Tensor<f64>,
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let (k, d) = (cfg.clips, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = k + 2;
    let embedding = Tensor::from_fn(d, width, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dirichlet = Dirichlet::new(&vec![1.0; k]).expect("valid alpha");
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).unwrap());

    let n = cfg.n_train + cfg.n_test;
    let mut samples = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let weights: Vec<f64> = dirichlet.sample(&mut rng);
        let qualities: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let label: f64 = weights.iter().zip(&qualities).map(|(w, q)| w * q).sum();
        let mut data = Vec::with_capacity(k * d);
        for clip in 0..k {
            for row in 0..d {
                let mut v = embedding.at(row, 0) * weights[clip]
                    + embedding.at(row, 1) * qualities[clip]
                    + embedding.at(row, 2 + clip);
                if let Some(nd) = &noise {
                    v += nd.sample(&mut rng);
                }
                data.push(v as f32);
            }
        }
        let id = format!("sample_{i:04}");
        let split = if i < cfg.n_train {
            Split::Train
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            id: id.clone(),
            path: format!("features/{id}.tqdf"),
            label,
            split,
        });
        samples.push(FeatureSequence {
            sample_id: id,
            features: Tensor::matrix(k, d, data)?,
            label,
            truth: Some(GroundTruth { weights, qualities }),
        });
    }
    let manifest = DatasetManifest {
        dim: d,
        clips: k,
        label_min: 0.0,
        label_max: 1.0,
        normalization: None,
        samples: entries,
    };
    manifest.validate()?;
    Ok(SyntheticDataset {
        dataset: Dataset { manifest, samples },
        embedding,
    })
}

impl Dataset {
    /// Writes `manifest.txt`, `features/*.tqdf` and `truth/*.csv` under
    /// `dir`, following the paths recorded in the manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("features"))?;
        std::fs::create_dir_all(dir.join("truth"))?;
        for (e, s) in self.manifest.samples.iter().zip(&self.samples) {
            write_features(&dir.join(&e.path), &s.features, Some(s.label))?;
            if let Some(t) = &s.truth {
                crate::error::write_bytes(&dir.join(truth_path(&e.id)), t.to_csv())?;
            }
        }
        self.manifest.write(&dir.join("manifest.txt"))
    }
}
