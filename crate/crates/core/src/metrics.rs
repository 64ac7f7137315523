//! Pair-classification metrics and the relative cross-sectional area error.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExamTime, Leg};
use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    /// 1 for a positive pair, 0 otherwise.
    pub label: u8,
}

fn class_counts(items: &[ScoredLabel]) -> Result<(usize, usize)> {
    let mut pos = 0;
    for (i, it) in items.iter().enumerate() {
        if !it.score.is_finite() {
            return Err(Error::Metric(format!("score {i} is not finite")));
        }
        match it.label {
            0 => {}
            1 => pos += 1,
            l => return Err(Error::Metric(format!("label {l} at {i} is not 0 or 1"))),
        }
    }
    Ok((pos, items.len() - pos))
}

/// Mann-Whitney AUC; tied scores contribute one half.
pub fn roc_auc(items: &[ScoredLabel]) -> Result<f64> {
    let (pos, neg) = class_counts(items)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "auc needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].score.total_cmp(&items[b].score));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && items[order[j]].score == items[order[i]].score {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| items[k].label == 1).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 for predictions `score >= threshold`.
pub fn prf1(items: &[ScoredLabel], threshold: f64) -> Result<Prf1> {
    class_counts(items)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for it in items {
        match (it.score >= threshold, it.label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize, what: &str| {
        if den == 0 {
            warn!("{what} has a zero denominator, reporting 0");
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fneg, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaSource {
    GroundTruth,
    Predicted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaMeasurement {
    pub area_cm2: f64,
    pub source: AreaSource,
    pub pixel_spacing_cm: [f64; 2],
}

/// Foreground pixel count times pixel area. The mask must hold only 0 and 1.
pub fn mask_area(mask: &Frame, spacing_cm: [f64; 2], source: AreaSource) -> Result<AreaMeasurement> {
    if !(spacing_cm[0] > 0.0 && spacing_cm[1] > 0.0) {
        return Err(Error::config(format!("pixel spacing must be positive, got {spacing_cm:?}")));
    }
    let mut count = 0usize;
    for &p in mask.pixels() {
        if p == 1.0 {
            count += 1;
        } else if p != 0.0 {
            return Err(Error::Input(format!("mask value {p} is not binary")));
        }
    }
    if count == 0 {
        return Err(Error::Metric("mask has no foreground pixels".into()));
    }
    Ok(AreaMeasurement {
        area_cm2: count as f64 * spacing_cm[0] * spacing_cm[1],
        source,
        pixel_spacing_cm: spacing_cm,
    })
}

/// `|a_gt - a_pred| / a_gt`.
pub fn area_error(gt: &AreaMeasurement, pred: &AreaMeasurement) -> Result<f64> {
    if !(gt.area_cm2 > 0.0) {
        return Err(Error::Metric(format!("ground-truth area must be positive, got {}", gt.area_cm2)));
    }
    Ok((gt.area_cm2 - pred.area_cm2).abs() / gt.area_cm2)
}

/// One retrieval of a T1 reference view within one exam of the same leg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub patient: u32,
    pub leg: Leg,
    pub time: ExamTime,
    pub truth_index: usize,
    /// Best-ranked candidate indices, best first.
    pub top: Vec<usize>,
    pub top1_hit: bool,
    pub top3_hit: bool,
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DStats {
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over sqrt(n)).
    pub std_err: f64,
}

impl DStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count: values.len(),
            mean,
            std_err,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub pair_count: usize,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub mean_d: f64,
    pub d_std_err: f64,
    /// Keyed `T1T1`, `T1T2`, `T1T3` and `overall`.
    pub d_buckets: BTreeMap<String, DStats>,
    pub top1_hit_rate: f64,
    pub top3_hit_rate: f64,
    pub per_exam: Vec<RetrievalOutcome>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn bucket_name(time: ExamTime) -> String {
    format!("T1{time}")
}

/// Aggregates pair scores and retrieval outcomes of the test slice.
pub fn evaluate_retrieval(
    method: &str,
    scores: &[ScoredLabel],
    outcomes: &[RetrievalOutcome],
) -> Result<EvalReport> {
    if scores.is_empty() || outcomes.is_empty() {
        return Err(Error::config("evaluation needs test pairs and retrieval outcomes"));
    }
    let auc = roc_auc(scores)?;
    let p = prf1(scores, DEFAULT_THRESHOLD)?;
    let mut d_buckets = BTreeMap::new();
    for t in ExamTime::ALL {
        let d: Vec<f64> = outcomes.iter().filter(|o| o.time == t).map(|o| o.d).collect();
        if let Some(s) = DStats::of(&d) {
            d_buckets.insert(bucket_name(t), s);
        }
    }
    let all: Vec<f64> = outcomes.iter().map(|o| o.d).collect();
    let overall = DStats::of(&all).expect("outcomes are non-empty");
    d_buckets.insert("overall".into(), overall);
    let n = outcomes.len() as f64;
    Ok(EvalReport {
        method: method.into(),
        pair_count: scores.len(),
        auc,
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        threshold: DEFAULT_THRESHOLD,
        mean_d: overall.mean,
        d_std_err: overall.std_err,
        d_buckets,
        top1_hit_rate: outcomes.iter().filter(|o| o.top1_hit).count() as f64 / n,
        top3_hit_rate: outcomes.iter().filter(|o| o.top3_hit).count() as f64 / n,
        per_exam: outcomes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(pairs: &[(f64, u8)]) -> Vec<ScoredLabel> {
        pairs.iter().map(|&(score, label)| ScoredLabel { score, label }).collect()
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&sl(&[(0.1, 0), (0.2, 0), (0.8, 1), (0.9, 1)])).unwrap(), 1.0);
        assert_eq!(roc_auc(&sl(&[(0.9, 1), (0.8, 0), (0.7, 1), (0.6, 0)])).unwrap(), 0.75);
        assert_eq!(roc_auc(&sl(&[(0.5, 1), (0.5, 0)])).unwrap(), 0.5);
        assert!(matches!(roc_auc(&sl(&[(0.5, 1), (0.4, 1)])), Err(Error::Metric(_))));
    }

    #[test]
    fn prf1_cases() {
        let all_right = prf1(&sl(&[(0.9, 1), (0.1, 0)]), 0.5).unwrap();
        assert_eq!((all_right.precision, all_right.recall, all_right.f1), (1.0, 1.0, 1.0));
        let none = prf1(&sl(&[(0.1, 1), (0.2, 0)]), 0.5).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        // TP = 2, FP = 1, FN = 1
        let m = prf1(&sl(&[(0.9, 1), (0.8, 1), (0.7, 0), (0.2, 1), (0.1, 0)]), 0.5).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn area_cases() {
        let mut px = vec![0.0; 64 * 64];
        px[..100].iter_mut().for_each(|p| *p = 1.0);
        let m = Frame::new(64, 64, px).unwrap();
        let a = mask_area(&m, [0.1, 0.1], AreaSource::GroundTruth).unwrap();
        assert!((a.area_cm2 - 1.0).abs() < 1e-9);
        let full = mask_area(&Frame::filled(64, 64, 1.0), [0.05, 0.05], AreaSource::Predicted).unwrap();
        assert!((full.area_cm2 - 10.24).abs() < 1e-6);
        assert!(matches!(
            mask_area(&Frame::filled(4, 4, 0.0), [0.1, 0.1], AreaSource::Predicted),
            Err(Error::Metric(_))
        ));
        assert!(matches!(
            mask_area(&Frame::filled(4, 4, 0.5), [0.1, 0.1], AreaSource::Predicted),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn area_error_cases() {
        let m = |area_cm2, source| AreaMeasurement {
            area_cm2,
            source,
            pixel_spacing_cm: [0.1, 0.1],
        };
        let gt = m(9.0, AreaSource::GroundTruth);
        assert_eq!(area_error(&gt, &m(9.0, AreaSource::Predicted)).unwrap(), 0.0);
        assert!((area_error(&gt, &m(6.0, AreaSource::Predicted)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let d = area_error(&m(10.0, AreaSource::GroundTruth), &m(10.57, AreaSource::Predicted)).unwrap();
        assert!((d - 0.057).abs() < 1e-9);
        assert!(matches!(
            area_error(&m(0.0, AreaSource::GroundTruth), &gt),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn std_err() {
        let s = DStats::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std_err - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
