//! Verification and identification metrics.
//!
//! Conventions shared by every metric here:
//! - a comparison is accepted when `score >= threshold`;
//! - FAR(t) = #{impostor >= t} / n_impostor, FRR(t) = #{genuine < t} / n_genuine;
//! - the VR@FAR threshold is the smallest observed score whose FAR does not
//!   exceed the target, so the realized FAR never overshoots;
//! - Rank-1 ties for the top similarity go to the lowest gallery index.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{DiuError, Result};

/// The FAR operating points reported in every [`EvalReport`].
pub const REPORTED_FARS: [f64; 4] = [1e-4, 1e-3, 1e-2, 5e-2];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        Self { genuine, impostor }
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(DiuError::Metric(format!(
                "need both classes, got {} genuine and {} impostor scores",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| !s.is_finite()) {
            return Err(DiuError::Metric("scores must be finite".into()));
        }
        Ok(())
    }

    fn sorted(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = self.genuine.clone();
        let mut i = self.impostor.clone();
        g.sort_by(f64::total_cmp);
        i.sort_by(f64::total_cmp);
        (g, i)
    }
}

fn unique_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Number of elements of ascending `v` strictly below `t`.
fn count_below(v: &[f64], t: f64) -> usize {
    v.partition_point(|&x| x < t)
}

/// Equal error rate, linearly interpolated between the two thresholds that
/// bracket the FAR/FRR crossing.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    scores.check()?;
    let (g, imp) = scores.sorted();
    let (ng, ni) = (g.len() as f64, imp.len() as f64);
    let mut prev: Option<(f64, f64)> = None;
    let thresholds = unique_sorted(&g, &imp);
    let rates = thresholds
        .iter()
        .map(|&t| ((imp.len() - count_below(&imp, t)) as f64 / ni, count_below(&g, t) as f64 / ng))
        .chain(std::iter::once((0.0, 1.0)));
    for (far, frr) in rates {
        if frr >= far {
            return Ok(match prev {
                Some((far_a, frr_a)) if frr != far => crossing(far_a, frr_a, far, frr),
                _ => far,
            });
        }
        prev = Some((far, frr));
    }
    unreachable!("FRR reaches 1 above the largest score")
}

/// Linear interpolation of the point where `far - frr` changes sign.
pub(crate) fn crossing(far_a: f64, frr_a: f64, far_b: f64, frr_b: f64) -> f64 {
    let d_a = far_a - frr_a;
    let d_b = far_b - frr_b;
    let alpha = d_a / (d_a - d_b);
    far_a + alpha * (far_b - far_a)
}

/// Probability that a random genuine score beats a random impostor score,
/// ties counting one half (Mann-Whitney U / trapezoidal ROC area).
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    scores.check()?;
    let mut all: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (scores.genuine.len() as u128, scores.impostor.len() as u128);
    // twice the genuine rank sum, using mid-ranks for tied groups
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let genuine_in_group = all[i..j].iter().filter(|x| x.1).count() as u128;
        rank_sum2 += genuine_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let u2 = rank_sum2 - ng * (ng + 1);
    Ok(u2 as f64 / (2 * ng * ni) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrAtFar {
    pub far: f64,
    pub vr: f64,
    /// `None` when no observed score meets the FAR target.
    pub threshold: Option<f64>,
    /// Fewer than `1 / far` impostor scores: the target is below the resolution of the data.
    pub underresolved: bool,
}

pub fn vr_at_far(scores: &ScoreSet, far_target: f64) -> Result<VrAtFar> {
    scores.check()?;
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(DiuError::Metric(format!("far target {far_target} is outside (0, 1)")));
    }
    let (g, imp) = scores.sorted();
    let (ng, ni) = (g.len() as f64, imp.len() as f64);
    let threshold = unique_sorted(&g, &imp)
        .into_iter()
        .find(|&t| (imp.len() - count_below(&imp, t)) as f64 / ni <= far_target);
    let vr = threshold.map_or(0.0, |t| (g.len() - count_below(&g, t)) as f64 / ng);
    Ok(VrAtFar {
        far: far_target,
        vr,
        threshold,
        underresolved: ni * far_target < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub tpr: f64,
    /// `None` for the origin, where the threshold lies above every score.
    pub threshold: Option<f64>,
}

/// ROC sweep from the strictest threshold down; both rates are nondecreasing.
pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    scores.check()?;
    let (g, imp) = scores.sorted();
    let (ng, ni) = (g.len() as f64, imp.len() as f64);
    let mut roc = vec![RocPoint {
        far: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    for t in unique_sorted(&g, &imp).into_iter().rev() {
        roc.push(RocPoint {
            far: (imp.len() - count_below(&imp, t)) as f64 / ni,
            tpr: (g.len() - count_below(&g, t)) as f64 / ng,
            threshold: Some(t),
        });
    }
    Ok(roc)
}

/// Fraction of probes whose top-scoring gallery entry has the probe's identity.
pub fn rank1(similarity: ArrayView2<f64>, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<f64> {
    let (n_probe, n_gallery) = similarity.dim();
    if probe_ids.len() != n_probe || gallery_ids.len() != n_gallery {
        return Err(DiuError::Shape(format!(
            "similarity is {n_probe}x{n_gallery} but got {} probe and {} gallery ids",
            probe_ids.len(),
            gallery_ids.len()
        )));
    }
    if n_probe == 0 || n_gallery == 0 {
        return Err(DiuError::Metric("rank-1 needs at least one probe and one gallery entry".into()));
    }
    let mut hits = 0usize;
    for (row, &pid) in similarity.rows().into_iter().zip(probe_ids) {
        if !gallery_ids.contains(&pid) {
            return Err(DiuError::Protocol(format!("probe identity {pid} is not enrolled in the gallery")));
        }
        let mut best = 0;
        for g in 1..n_gallery {
            if row[g] > row[best] {
                best = g;
            }
        }
        if gallery_ids[best] == pid {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_probe as f64)
}

/// Short metric key for a FAR operating point: `1e-3` becomes `vr_far_0p1` (0.1%).
pub fn vr_metric_name(far: f64) -> String {
    let percent = format!("{}", (far * 100.0 * 1e6).round() / 1e6);
    format!("vr_far_{}", percent.replace('.', "p"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub eer: f64,
    pub rank1: f64,
    pub vr_at_far: Vec<VrAtFar>,
    pub roc: Vec<RocPoint>,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_gallery: usize,
    pub n_probe: usize,
}

impl EvalReport {
    pub fn compute(scores: &ScoreSet, similarity: ArrayView2<f64>, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<Self> {
        Ok(Self {
            auc: auc(scores)?,
            eer: eer(scores)?,
            rank1: rank1(similarity, probe_ids, gallery_ids)?,
            vr_at_far: REPORTED_FARS
                .iter()
                .map(|&far| vr_at_far(scores, far))
                .collect::<Result<_>>()?,
            roc: roc_curve(scores)?,
            n_genuine: scores.genuine.len(),
            n_impostor: scores.impostor.len(),
            n_gallery: gallery_ids.len(),
            n_probe: probe_ids.len(),
        })
    }

    /// Scalar metrics keyed by name, in a stable order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("auc".to_string(), self.auc),
            ("eer".to_string(), self.eer),
            ("rank1".to_string(), self.rank1),
        ];
        out.extend(self.vr_at_far.iter().map(|v| (vr_metric_name(v.far), v.vr)));
        out
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

pub fn aggregate_folds(reports: &[EvalReport]) -> Result<BTreeMap<String, MeanStd>> {
    let first = reports.first().ok_or_else(|| DiuError::Metric("no fold reports to aggregate".into()))?;
    let mut out = BTreeMap::new();
    for (name, _) in first.metrics() {
        let values = reports
            .iter()
            .map(|r| r.metric(&name).ok_or_else(|| DiuError::Metric(format!("report is missing `{name}`"))))
            .collect::<Result<Vec<f64>>>()?;
        out.insert(name, MeanStd::of(&values));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::new(g.to_vec(), i.to_vec())
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 0.0);
        assert_eq!(eer(&set(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        assert_eq!(eer(&set(&[0.8, 0.4], &[0.6, 0.2])).unwrap(), 0.5);
    }

    #[test]
    fn eer_interpolates_between_thresholds() {
        // t=0.5: FAR 1/3, FRR 0; t=0.6: FAR 1/3, FRR 1/2 -> crossing at FAR 1/3
        let e = eer(&set(&[0.5, 0.9], &[0.2, 0.3, 0.6])).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
        // t=0.4: FAR 2/3, FRR 1/2; t=0.5: FAR 1/3, FRR 1/2 -> d goes 1/6 -> -1/6, alpha 1/2
        let e = eer(&set(&[0.3, 0.9], &[0.2, 0.4, 0.5])).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[0.3, 0.5, 0.5], &[0.5, 0.3, 0.5])).unwrap(), 0.5);
        assert_eq!(auc(&set(&[0.9, 0.3], &[0.5, 0.1])).unwrap(), 0.75);
    }

    #[test]
    fn vr_examples() {
        let s = set(&[0.35, 0.5], &[0.1, 0.2, 0.3, 0.4]);
        let v = vr_at_far(&s, 0.25).unwrap();
        assert_eq!(v.vr, 1.0);
        assert_eq!(v.threshold, Some(0.35));
        assert!(!v.underresolved);

        let v = vr_at_far(&set(&[0.8, 0.9], &[0.1, 0.2]), 0.01).unwrap();
        assert_eq!(v.vr, 1.0);

        let v = vr_at_far(&set(&[0.3, 0.9], &[0.1, 0.5]), 0.01).unwrap();
        assert!(v.underresolved);
        assert_eq!(v.vr, 0.5);
    }

    #[test]
    fn empty_classes_are_metric_errors() {
        let s = set(&[], &[0.1]);
        assert!(matches!(eer(&s), Err(DiuError::Metric(_))));
        assert!(matches!(auc(&s), Err(DiuError::Metric(_))));
        assert!(matches!(vr_at_far(&s, 0.1), Err(DiuError::Metric(_))));
    }

    #[test]
    fn rank1_examples() {
        let diag = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.9 } else { 0.1 });
        assert_eq!(rank1(diag.view(), &[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);

        let flat = Array2::from_elem((4, 4), 0.5);
        assert_eq!(rank1(flat.view(), &[10, 11, 12, 13], &[12, 10, 11, 13]).unwrap(), 0.25);

        let m = arr2(&[[0.1, 0.2]]);
        assert!(matches!(rank1(m.view(), &[5], &[1, 2]), Err(DiuError::Protocol(_))));
    }

    #[test]
    fn roc_is_monotone() {
        let roc = roc_curve(&set(&[0.9, 0.5, 0.5, 0.2], &[0.6, 0.5, 0.1])).unwrap();
        assert_eq!(roc.first().unwrap().threshold, None);
        let last = roc.last().unwrap();
        assert_eq!((last.far, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            assert!(w[1].far >= w[0].far && w[1].tpr >= w[0].tpr);
        }
    }

    fn report_with_rank1(r: f64) -> EvalReport {
        let s = set(&[0.9, 0.7], &[0.2, 0.3]);
        let mut rep = EvalReport::compute(&s, Array2::eye(2).view(), &[0, 1], &[0, 1]).unwrap();
        rep.rank1 = r;
        rep
    }

    #[test]
    fn aggregation() {
        let one = aggregate_folds(&[report_with_rank1(0.9)]).unwrap();
        assert_eq!(one["rank1"].std, 0.0);

        let two = aggregate_folds(&[report_with_rank1(0.9), report_with_rank1(0.7)]).unwrap();
        assert!((two["rank1"].mean - 0.8).abs() < 1e-12);
        assert!((two["rank1"].std - 0.1).abs() < 1e-12);

        let five = aggregate_folds(&vec![report_with_rank1(0.6); 5]).unwrap();
        assert_eq!(five["rank1"].mean, 0.6);
        assert_eq!(five["rank1"].std, 0.0);

        assert!(aggregate_folds(&[]).is_err());
    }

    #[test]
    fn metric_names() {
        assert_eq!(vr_metric_name(1e-3), "vr_far_0p1");
        assert_eq!(vr_metric_name(1e-2), "vr_far_1");
        assert_eq!(vr_metric_name(5e-2), "vr_far_5");
        assert_eq!(vr_metric_name(1e-4), "vr_far_0p01");
    }

    #[test]
    fn report_json_round_trip_is_byte_stable() {
        let rep = report_with_rank1(0.5);
        let json = serde_json::to_string_pretty(&rep).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
    }
}
