//! k-fold identity-disjoint protocols.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::SampleRef;
use super::render::Modality;
use crate::error::{DiuError, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_ids: Vec<u32>,
    pub eval_ids: Vec<u32>,
    /// One source-modality sample per evaluation identity (the gallery).
    pub enrollment: Vec<SampleRef>,
    /// Every target-modality sample of the evaluation identities.
    pub probes: Vec<SampleRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticProtocol {
    pub seed: u64,
    pub n_identities: usize,
    pub n_samples: usize,
    pub folds: Vec<Fold>,
}

/// Shuffles identities with `seed`, then deals them round-robin into `n_folds`.
pub fn build_protocol(seed: u64, n_identities: usize, n_samples: usize, n_folds: usize) -> Result<SyntheticProtocol> {
    if n_folds == 0 {
        return Err(DiuError::config("n_folds", "must be at least 1"));
    }
    if n_identities < 2 * n_folds {
        return Err(DiuError::config(
            "n_identities",
            format!("{n_identities} identities cannot fill {n_folds} folds with at least 2 each"),
        ));
    }
    if n_samples < 2 {
        return Err(DiuError::config("n_samples", "need at least 2 samples per identity"));
    }
    let mut rng = rng_for(seed, "protocol");
    let mut ids: Vec<u32> = (0..n_identities as u32).collect();
    ids.shuffle(&mut rng);

    let mut buckets = vec![Vec::new(); n_folds];
    for (i, id) in ids.into_iter().enumerate() {
        buckets[i % n_folds].push(id);
    }
    let folds = (0..n_folds)
        .map(|f| {
            let mut eval_ids = buckets[f].clone();
            eval_ids.sort_unstable();
            let mut train_ids: Vec<u32> = buckets
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, b)| b.iter().copied())
                .collect();
            train_ids.sort_unstable();
            let mut pick = rng_for(seed, &format!("enrollment/{f}"));
            let enrollment = eval_ids
                .iter()
                .map(|&id| {
                    let sample = *(0..n_samples as u32).collect::<Vec<_>>().choose(&mut pick).expect("n_samples >= 2");
                    SampleRef::new(id, Modality::Source, sample)
                })
                .collect();
            let probes = eval_ids
                .iter()
                .flat_map(|&id| (0..n_samples as u32).map(move |s| SampleRef::new(id, Modality::Target, s)))
                .collect();
            Fold {
                index: f,
                train_ids,
                eval_ids,
                enrollment,
                probes,
            }
        })
        .collect();
    Ok(SyntheticProtocol {
        seed,
        n_identities,
        n_samples,
        folds,
    })
}

impl SyntheticProtocol {
    pub fn fold(&self, index: usize) -> Result<&Fold> {
        self.folds
            .get(index)
            .ok_or_else(|| DiuError::config("fold", format!("fold {index} does not exist ({} folds)", self.folds.len())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| DiuError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path).map_err(|e| DiuError::io(path, e))?)?)
    }
}

impl Fold {
    /// Same gallery, but probes drawn from the source modality, for
    /// intra-modal baselines.
    pub fn with_probe_modality(&self, modality: Modality) -> Fold {
        let mut fold = self.clone();
        for p in fold.probes.iter_mut() {
            p.modality = modality;
        }
        fold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn round_robin_sizes() {
        let p = build_protocol(0, 10, 4, 5).unwrap();
        assert_eq!(p.folds.len(), 5);
        for f in &p.folds {
            assert_eq!(f.eval_ids.len(), 2);
            assert_eq!(f.train_ids.len(), 8);
            assert_eq!(f.enrollment.len(), 2);
            assert_eq!(f.probes.len(), 8);
        }
    }

    #[test]
    fn folds_are_identity_disjoint_and_cover_everything() {
        let p = build_protocol(3, 40, 20, 5).unwrap();
        let mut seen = BTreeSet::new();
        for f in &p.folds {
            let train: BTreeSet<_> = f.train_ids.iter().collect();
            let eval: BTreeSet<_> = f.eval_ids.iter().collect();
            assert!(train.is_disjoint(&eval));
            assert_eq!(train.len() + eval.len(), 40);
            let enrolled: Vec<u32> = f.enrollment.iter().map(|r| r.identity).collect();
            assert_eq!(enrolled, f.eval_ids);
            assert!(f.enrollment.iter().all(|r| r.modality == Modality::Source));
            assert!(f.probes.iter().all(|r| r.modality == Modality::Target));
            seen.extend(f.eval_ids.iter().copied());
        }
        assert_eq!(seen.len(), 40);
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(build_protocol(11, 20, 3, 5).unwrap(), build_protocol(11, 20, 3, 5).unwrap());
        assert_ne!(build_protocol(11, 20, 3, 5).unwrap(), build_protocol(12, 20, 3, 5).unwrap());
    }

    #[test]
    fn rejects_too_few_identities() {
        assert!(matches!(build_protocol(0, 9, 3, 5), Err(DiuError::Config { .. })));
        assert!(matches!(build_protocol(0, 10, 1, 5), Err(DiuError::Config { .. })));
    }
}
