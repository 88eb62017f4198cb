//! Materialized paired-modality datasets.
//!
//! On disk a dataset is `index.json` plus one raw tensor per sample at
//! `images/<id>_<modality>_<nuisance seed>.f32` (little-endian f32,
//! row-major height x width x 3).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::{render, IdentityLatent, Modality, ModalitySpec, ModalityTransform};
use crate::error::{DiuError, Result};
use crate::image::Image;
use crate::seed::derive_seed;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub n_identities: usize,
    /// Samples per identity per modality.
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub target: ModalityTransform,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_identities: 100,
            n_samples: 20,
            height: 32,
            width: 32,
            target: ModalitySpec::default_target().transform,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 {
            return Err(DiuError::config("n_identities", "must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(DiuError::config("n_samples", "must be at least 1"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(DiuError::config("height", "images must be at least 1x1"));
        }
        if self.target.blur_sigma < 0.0 || self.target.noise_sigma < 0.0 {
            return Err(DiuError::config("target", "blur and noise sigmas must be non-negative"));
        }
        Ok(())
    }
}

/// Address of one image inside a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub identity: u32,
    pub modality: Modality,
    pub sample: u32,
}

impl SampleRef {
    pub fn new(identity: u32, modality: Modality, sample: u32) -> Self {
        Self {
            identity,
            modality,
            sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub identity: u32,
    pub modality: Modality,
    pub sample: u32,
    pub nuisance_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub source: ModalitySpec,
    pub target: ModalitySpec,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    config: DatasetConfig,
    source: ModalitySpec,
    target: ModalitySpec,
    images: Vec<Image>,
}

impl Dataset {
    pub fn generate(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let source = ModalitySpec::source();
        let target = ModalitySpec {
            name: Modality::Target,
            transform: config.target.clone(),
        };
        let mut images = Vec::with_capacity(config.n_identities * config.n_samples * 2);
        for id in 0..config.n_identities as u32 {
            let latent = IdentityLatent::generate(config.seed, id);
            for spec in [&source, &target] {
                for sample in 0..config.n_samples as u32 {
                    let seed = nuisance_seed(config.seed, id, sample);
                    images.push(render(&latent, spec, seed, (config.height, config.width)));
                }
            }
        }
        Ok(Self {
            config,
            source,
            target,
            images,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn modality(&self, modality: Modality) -> &ModalitySpec {
        match modality {
            Modality::Source => &self.source,
            Modality::Target => &self.target,
        }
    }

    pub fn n_identities(&self) -> usize {
        self.config.n_identities
    }

    pub fn n_samples(&self) -> usize {
        self.config.n_samples
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn slot(&self, r: &SampleRef) -> Option<usize> {
        let (id, sample) = (r.identity as usize, r.sample as usize);
        if id >= self.config.n_identities || sample >= self.config.n_samples {
            return None;
        }
        let m = match r.modality {
            Modality::Source => 0,
            Modality::Target => 1,
        };
        Some((id * 2 + m) * self.config.n_samples + sample)
    }

    pub fn image(&self, r: &SampleRef) -> Result<&Image> {
        self.slot(r)
            .map(|i| &self.images[i])
            .ok_or_else(|| DiuError::Data(format!("sample {r:?} is not part of the dataset")))
    }

    pub fn images(&self, refs: &[SampleRef]) -> Result<Vec<Image>> {
        refs.iter().map(|r| self.image(r).cloned()).collect()
    }

    pub fn refs(&self) -> impl Iterator<Item = SampleRef> + '_ {
        let n_samples = self.config.n_samples as u32;
        (0..self.config.n_identities as u32).flat_map(move |id| {
            [Modality::Source, Modality::Target]
                .into_iter()
                .flat_map(move |m| (0..n_samples).map(move |s| SampleRef::new(id, m, s)))
        })
    }

    pub fn nuisance_seed(&self, r: &SampleRef) -> u64 {
        nuisance_seed(self.config.seed, r.identity, r.sample)
    }

    fn relative_path(&self, r: &SampleRef) -> String {
        format!("images/{}_{}_{}.f32", r.identity, r.modality.as_str(), self.nuisance_seed(r))
    }

    pub fn index(&self) -> DatasetIndex {
        DatasetIndex {
            format_version: DATASET_FORMAT_VERSION,
            config: self.config.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
            entries: self
                .refs()
                .map(|r| IndexEntry {
                    path: self.relative_path(&r),
                    identity: r.identity,
                    modality: r.modality,
                    sample: r.sample,
                    nuisance_seed: self.nuisance_seed(&r),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let image_dir = dir.join("images");
        fs::create_dir_all(&image_dir).map_err(|e| DiuError::io(&image_dir, e))?;
        let index = self.index();
        for entry in &index.entries {
            let r = SampleRef::new(entry.identity, entry.modality, entry.sample);
            let bytes: Vec<u8> = self.image(&r)?.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(&entry.path);
            fs::write(&path, bytes).map_err(|e| DiuError::io(&path, e))?;
        }
        let path = dir.join("index.json");
        fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| DiuError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let index: DatasetIndex =
            serde_json::from_slice(&fs::read(&index_path).map_err(|e| DiuError::io(&index_path, e))?)?;
        if index.format_version != DATASET_FORMAT_VERSION {
            return Err(DiuError::Data(format!(
                "{} has format version {}, expected {DATASET_FORMAT_VERSION}",
                index_path.display(),
                index.format_version
            )));
        }
        let cfg = index.config.clone();
        cfg.validate()?;
        let expected = cfg.n_identities * cfg.n_samples * 2;
        if index.entries.len() != expected {
            return Err(DiuError::Data(format!(
                "index lists {} entries, config implies {expected}",
                index.entries.len()
            )));
        }
        let mut dataset = Self {
            config: cfg.clone(),
            source: index.source,
            target: index.target,
            images: vec![Image::zeros(0, 0, 3); expected],
        };
        for entry in &index.entries {
            let r = SampleRef::new(entry.identity, entry.modality, entry.sample);
            let slot = dataset
                .slot(&r)
                .ok_or_else(|| DiuError::Data(format!("index entry {} is out of range", entry.path)))?;
            let path: PathBuf = dir.join(&entry.path);
            let bytes = fs::read(&path).map_err(|e| DiuError::Data(format!("cannot read sample {}: {e}", path.display())))?;
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            dataset.images[slot] = Image::new(cfg.height, cfg.width, 3, data)
                .map_err(|_| DiuError::Data(format!("sample {} has the wrong size", path.display())))?;
        }
        Ok(dataset)
    }
}

pub fn nuisance_seed(dataset_seed: u64, identity: u32, sample: u32) -> u64 {
    derive_seed(dataset_seed, &format!("nuisance/{identity}/{sample}"))
}
