use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{EvalReport, ScoreSet};
use crate::backbone::EmbeddingNetwork;
use crate::error::{DiuError, Result};
use crate::losses::cosine_similarity;
use crate::synthdata::{Dataset, Fold, SampleRef};

const SCORE_EPS: f64 = 1e-12;

/// Cosine scores of every probe against every gallery entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredProtocol {
    pub scores: ScoreSet,
    /// `(n_probe, n_gallery)`, clamped to `[-1, 1]`.
    pub similarity: Array2<f64>,
    pub probe_ids: Vec<u32>,
    pub gallery_ids: Vec<u32>,
}

impl ScoredProtocol {
    pub fn report(&self) -> Result<EvalReport> {
        EvalReport::compute(&self.scores, self.similarity.view(), &self.probe_ids, &self.gallery_ids)
    }
}

fn embed_all(net: &EmbeddingNetwork, dataset: &Dataset, refs: &[SampleRef]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((refs.len(), net.embedding_dim()));
    for (i, r) in refs.iter().enumerate() {
        let image = dataset.image(r)?;
        let e = net.embed(image)?;
        out.row_mut(i).iter_mut().zip(e).for_each(|(o, v)| *o = v as f64);
    }
    Ok(out)
}

/// Embeds the gallery and probes with `net` alone and scores all pairs.
pub fn score_protocol(
    net: &EmbeddingNetwork,
    dataset: &Dataset,
    enrollment: &[SampleRef],
    probes: &[SampleRef],
) -> Result<ScoredProtocol> {
    if enrollment.is_empty() || probes.is_empty() {
        return Err(DiuError::Protocol("enrollment and probe manifests must be non-empty".into()));
    }
    let gallery = embed_all(net, dataset, enrollment)?;
    let probe = embed_all(net, dataset, probes)?;
    let mut similarity = Array2::zeros((probes.len(), enrollment.len()));
    let mut scores = ScoreSet::default();
    for (p, pr) in probes.iter().enumerate() {
        for (g, gr) in enrollment.iter().enumerate() {
            let s = cosine_similarity(probe.row(p), gallery.row(g), SCORE_EPS)?.clamp(-1.0, 1.0);
            similarity[[p, g]] = s;
            if pr.identity == gr.identity {
                scores.genuine.push(s);
            } else {
                scores.impostor.push(s);
            }
        }
    }
    Ok(ScoredProtocol {
        scores,
        similarity,
        probe_ids: probes.iter().map(|r| r.identity).collect(),
        gallery_ids: enrollment.iter().map(|r| r.identity).collect(),
    })
}

/// Scores and evaluates one fold's enrollment/probe manifests.
pub fn evaluate_fold(net: &EmbeddingNetwork, dataset: &Dataset, fold: &Fold) -> Result<EvalReport> {
    score_protocol(net, dataset, &fold.enrollment, &fold.probes)?.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_network, NetworkConfig};
    use crate::synthdata::{build_protocol, DatasetConfig};

    #[test]
    fn one_genuine_score_per_probe() {
        let ds = Dataset::generate(DatasetConfig {
            n_identities: 6,
            n_samples: 3,
            height: 16,
            width: 16,
            ..DatasetConfig::default()
        })
        .unwrap();
        let net = build_network(NetworkConfig {
            input_height: 16,
            input_width: 16,
            num_blocks: 2,
            channels_per_block: vec![4, 4],
            embedding_dim: 8,
            ..NetworkConfig::default()
        })
        .unwrap();
        let protocol = build_protocol(0, 6, 3, 3).unwrap();
        let fold = &protocol.folds[0];
        let scored = score_protocol(&net, &ds, &fold.enrollment, &fold.probes).unwrap();
        assert_eq!(scored.similarity.dim(), (fold.probes.len(), fold.enrollment.len()));
        assert_eq!(scored.scores.genuine.len(), fold.probes.len());
        assert_eq!(
            scored.scores.impostor.len(),
            fold.probes.len() * (fold.enrollment.len() - 1)
        );
        assert!(scored.similarity.iter().all(|s| (-1.0..=1.0).contains(s)));

        let missing = [SampleRef::new(99, crate::synthdata::Modality::Target, 0)];
        let err = score_protocol(&net, &ds, &fold.enrollment, &missing).unwrap_err();
        assert!(matches!(err, DiuError::Data(_)));
    }
}
