use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SampleRef;
use super::protocol::Fold;
use super::render::Modality;
use crate::error::{DiuError, Result};

/// Aligned cross-modal pairs: `source[i]` and `target[i]` with `labels[i] == 1`
/// for a genuine (same identity) pair and `0` for an impostor pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairBatch {
    pub source: Vec<SampleRef>,
    pub target: Vec<SampleRef>,
    pub labels: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `round(batch_size * genuine_fraction)` genuine pairs followed by
/// impostor pairs from the fold's training identities. Source and target
/// sample indices are drawn independently.
pub fn sample_pairs(
    fold: &Fold,
    n_samples: usize,
    batch_size: usize,
    genuine_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch> {
    if batch_size < 2 {
        return Err(DiuError::config("batch_size", "must be at least 2"));
    }
    if !(genuine_fraction > 0.0 && genuine_fraction < 1.0) {
        return Err(DiuError::config("genuine_fraction", format!("{genuine_fraction} is outside (0, 1)")));
    }
    if fold.train_ids.len() < 2 {
        return Err(DiuError::config("fold", "pair sampling needs at least 2 training identities"));
    }
    if n_samples == 0 {
        return Err(DiuError::config("n_samples", "must be at least 1"));
    }
    let n_genuine = (batch_size as f64 * genuine_fraction).round() as usize;
    let mut batch = PairBatch {
        source: Vec::with_capacity(batch_size),
        target: Vec::with_capacity(batch_size),
        labels: Vec::with_capacity(batch_size),
    };
    let ids = &fold.train_ids;
    for i in 0..batch_size {
        let genuine = i < n_genuine;
        let src_id = *ids.choose(rng).expect("non-empty");
        let tgt_id = if genuine {
            src_id
        } else {
            // uniform over the other identities
            let j = rng.gen_range(0..ids.len() - 1);
            let pos = ids.iter().position(|&x| x == src_id).expect("drawn from ids");
            ids[if j >= pos { j + 1 } else { j }]
        };
        batch.source.push(SampleRef::new(src_id, Modality::Source, rng.gen_range(0..n_samples as u32)));
        batch.target.push(SampleRef::new(tgt_id, Modality::Target, rng.gen_range(0..n_samples as u32)));
        batch.labels.push(genuine as u8);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::build_protocol;
    use rand::SeedableRng;

    #[test]
    fn balanced_batch_of_48() {
        let p = build_protocol(0, 40, 20, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_pairs(&p.folds[0], 20, 48, 0.5, &mut rng).unwrap();
        assert_eq!(b.len(), 48);
        assert_eq!(b.labels.iter().filter(|&&y| y == 1).count(), 24);
        for i in 0..48 {
            let same = b.source[i].identity == b.target[i].identity;
            assert_eq!(same, b.labels[i] == 1);
            assert!(p.folds[0].train_ids.contains(&b.source[i].identity));
            assert!(p.folds[0].train_ids.contains(&b.target[i].identity));
            assert_eq!(b.source[i].modality, Modality::Source);
            assert_eq!(b.target[i].modality, Modality::Target);
        }
    }

    #[test]
    fn sampler_advances_deterministically() {
        let p = build_protocol(0, 10, 5, 5).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let first = sample_pairs(&p.folds[1], 5, 8, 0.5, &mut a).unwrap();
        assert_eq!(first, sample_pairs(&p.folds[1], 5, 8, 0.5, &mut b).unwrap());
        assert_ne!(first, sample_pairs(&p.folds[1], 5, 8, 0.5, &mut a).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = build_protocol(0, 10, 5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_pairs(&p.folds[0], 5, 1, 0.5, &mut rng).is_err());
        assert!(sample_pairs(&p.folds[0], 5, 8, 1.0, &mut rng).is_err());
        let mut tiny = p.folds[0].clone();
        tiny.train_ids.truncate(1);
        assert!(matches!(sample_pairs(&tiny, 5, 8, 0.5, &mut rng), Err(DiuError::Config { .. })));
    }
}
