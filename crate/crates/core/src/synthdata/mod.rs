//! Deterministic paired-modality identity data and evaluation protocols.

mod dataset;
mod pairs;
mod protocol;
mod render;

pub use dataset::{nuisance_seed, Dataset, DatasetConfig, DatasetIndex, IndexEntry, SampleRef, DATASET_FORMAT_VERSION};
pub use pairs::{sample_pairs, PairBatch};
pub use protocol::{build_protocol, Fold, SyntheticProtocol};
pub use render::{
    gaussian_blur, render, IdentityLatent, Modality, ModalitySpec, ModalityTransform, DEFAULT_TARGET_MIX, LATENT_DIM,
};
