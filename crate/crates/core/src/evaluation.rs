//! Classification accuracy and detection mean average precision.
//!
//! Matching: detections of one class are visited by descending score (ties
//! keep input order); each claims the still-unmatched ground truth window of
//! the same sequence with the highest IoU, provided that IoU reaches θ.
//! AP is the area under the monotone precision envelope (all-point
//! interpolation). Classes without ground truth are left out of the mean.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::window::{iou_1d, Window};
use crate::error::{Error, Result};

/// Reference numbers for context only (validation sets, IoU θ = 0.5).
pub mod reference {
    pub const NTU_CROSS_SUBJECT_ACCURACY: f64 = 0.832;
    pub const NTU_CROSS_VIEW_ACCURACY: f64 = 0.893;
    pub const PKU_MMD_CROSS_SUBJECT_MAP_AT_0_5: f64 = 0.904;
    pub const PKU_MMD_CROSS_VIEW_MAP_AT_0_5: f64 = 0.937;
    /// θ values reported for detection.
    pub const DETECTION_THETAS: [f64; 2] = [0.1, 0.5];
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("accuracy of an empty set".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("IoU threshold {theta} outside (0, 1]")))
    }
}

/// A window tagged with the index of the sequence it belongs to.
pub type Tagged = (usize, Window);

/// True-positive flags in the order detections are visited.
fn match_detections(dets: &[Tagged], gts: &[Tagged], theta: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.score.total_cmp(&dets[a].1.score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let (seq, ref w) = dets[d];
            let mut best: Option<(usize, f64)> = None;
            for (gi, (gseq, g)) in gts.iter().enumerate() {
                if *gseq != seq || taken[gi] {
                    continue;
                }
                let iou = iou_1d(w, g);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            match best {
                Some((gi, iou)) if iou >= theta => {
                    taken[gi] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the precision envelope for a ranked list of hits.
fn interpolated_area(hits: &[bool], total_gt: usize) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// AP of one class over windows from possibly many sequences.
pub fn average_precision_tagged(dets: &[Tagged], gts: &[Tagged], theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if gts.is_empty() {
        return Ok(if dets.is_empty() { 1.0 } else { 0.0 });
    }
    let hits = match_detections(dets, gts, theta);
    Ok(interpolated_area(&hits, gts.len()))
}

/// AP of one class within a single sequence.
pub fn average_precision(dets: &[Window], gts: &[Window], theta: f64) -> Result<f64> {
    let tag = |ws: &[Window]| ws.iter().map(|w| (0, *w)).collect::<Vec<_>>();
    average_precision_tagged(&tag(dets), &tag(gts), theta)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub sequences: usize,
    pub ground_truth: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Option<f64>,
    /// θ (formatted) → class id → AP.
    pub per_class_ap: BTreeMap<String, BTreeMap<usize, f64>>,
    /// θ (formatted) → mAP.
    pub map_at_theta: BTreeMap<String, f64>,
    pub counts: EvalCounts,
    pub notes: Vec<String>,
}

pub fn theta_key(theta: f64) -> String {
    format!("{theta}")
}

impl EvalReport {
    pub fn map_at(&self, theta: f64) -> Option<f64> {
        self.map_at_theta.get(&theta_key(theta)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `theta,class_id,ap` rows.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("theta,class_id,ap\n");
        for (theta, classes) in &self.per_class_ap {
            for (c, ap) in classes {
                let _ = writeln!(out, "{theta},{c},{ap}");
            }
        }
        out
    }
}

/// mAP over the classes present in `gts`, for every θ in `thetas`.
pub fn mean_average_precision_tagged(dets: &[Tagged], gts: &[Tagged], thetas: &[f64]) -> Result<EvalReport> {
    for &t in thetas {
        check_theta(t)?;
    }
    let classes: BTreeSet<usize> = gts.iter().filter_map(|(_, w)| w.class_id).collect();
    let sequences: BTreeSet<usize> = dets.iter().chain(gts).map(|(s, _)| *s).collect();
    let mut report = EvalReport {
        counts: EvalCounts {
            sequences: sequences.len(),
            ground_truth: gts.len(),
            detections: dets.len(),
        },
        notes: vec!["mAP averages only classes present in the ground truth".into()],
        ..EvalReport::default()
    };
    let of_class = |set: &[Tagged], c: usize| -> Vec<Tagged> {
        set.iter().filter(|(_, w)| w.class_id == Some(c)).copied().collect()
    };
    for &theta in thetas {
        let mut per_class = BTreeMap::new();
        for &c in &classes {
            per_class.insert(
                c,
                average_precision_tagged(&of_class(dets, c), &of_class(gts, c), theta)?,
            );
        }
        let map = if per_class.is_empty() {
            0.0
        } else {
            per_class.values().sum::<f64>() / per_class.len() as f64
        };
        report.map_at_theta.insert(theta_key(theta), map);
        report.per_class_ap.insert(theta_key(theta), per_class);
    }
    Ok(report)
}

/// Single-sequence convenience for [`mean_average_precision_tagged`].
pub fn mean_average_precision(dets: &[Window], gts: &[Window], thetas: &[f64]) -> Result<EvalReport> {
    let tag = |ws: &[Window]| ws.iter().map(|w| (0, *w)).collect::<Vec<_>>();
    mean_average_precision_tagged(&tag(dets), &tag(gts), thetas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: f64, e: f64, score: f64, c: usize) -> Window {
        Window::scored(s, e, score, Some(c))
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ap_edge_cases() {
        let g = w(10.0, 20.0, 1.0, 1);
        assert_eq!(average_precision(&[g], &[g], 0.5).unwrap(), 1.0);
        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), 1.0);
        assert_eq!(average_precision(&[g], &[], 0.5).unwrap(), 0.0);
        assert_eq!(average_precision(&[], &[g], 0.5).unwrap(), 0.0);
        assert!(average_precision(&[g], &[g], 0.0).is_err());
        assert!(average_precision(&[g], &[g], 1.5).is_err());
    }

    #[test]
    fn high_score_match_takes_the_gt() {
        // IoU 0.6 with the high-score detection, 0.9 with the low-score one.
        let gt = w(0.0, 10.0, 1.0, 1);
        let high = w(0.0, 6.0, 0.9, 1);
        let low = w(0.0, 9.0, 0.3, 1);
        assert!((iou_1d(&gt, &high) - 0.6).abs() < 1e-12);
        assert!((iou_1d(&gt, &low) - 0.9).abs() < 1e-12);
        assert_eq!(average_precision(&[low, high], &[gt], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn map_is_mean_over_gt_classes() {
        let g1 = w(0.0, 10.0, 1.0, 1);
        let g2a = w(0.0, 10.0, 1.0, 2);
        let g2b = w(50.0, 60.0, 1.0, 2);
        // Class 2 finds one of its two windows at precision 1 → AP 0.5.
        let dets = [g1, w(0.0, 10.0, 0.8, 2), w(200.0, 210.0, 0.9, 7)];
        let r = mean_average_precision(&dets, &[g1, g2a, g2b], &[0.5]).unwrap();
        assert_eq!(r.per_class_ap["0.5"][&1], 1.0);
        assert_eq!(r.per_class_ap["0.5"][&2], 0.5);
        assert_eq!(r.map_at(0.5), Some(0.75));
        assert!(!r.per_class_ap["0.5"].contains_key(&7));
    }

    #[test]
    fn detections_do_not_cross_sequences() {
        let g = w(0.0, 10.0, 1.0, 1);
        let ap = average_precision_tagged(&[(1, g)], &[(0, g)], 0.5).unwrap();
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn report_csv_and_json() {
        let g = w(0.0, 10.0, 1.0, 3);
        let r = mean_average_precision(&[g], &[g], &reference::DETECTION_THETAS).unwrap();
        assert_eq!(r.map_at_theta.len(), 2);
        assert_eq!(r.per_class_csv(), "theta,class_id,ap\n0.1,3,1\n0.5,3,1\n");
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
