//! Anchor labelling and mini-batch sampling for the proposal network, and
//! RoI labelling for the window classification head.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::window::{encode_window, iou_1d, RegressionTarget, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub positive_iou: f64,
    pub negative_iou: f64,
    pub proposal_nms_iou: f64,
    pub pre_nms_proposals: usize,
    pub proposals_kept: usize,
    /// Proposals shorter than this many frames are dropped.
    pub min_proposal_length: f64,
    pub wpn_batch: usize,
    pub wpn_fg_fraction: f64,
    pub rcnn_fg_iou: f64,
    pub rcnn_bg_iou_low: f64,
    pub rcnn_batch: usize,
    pub rcnn_fg_fraction: f64,
    /// Scale of the window-head regression targets, `(t_c, t_l)`.
    pub rcnn_target_std: (f64, f64),
    pub final_nms_iou: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
    /// Anchors reaching further than this outside the sequence are ignored in training.
    pub allowed_border: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            positive_iou: 0.7,
            negative_iou: 0.3,
            proposal_nms_iou: 0.7,
            pre_nms_proposals: 600,
            proposals_kept: 64,
            min_proposal_length: 4.0,
            wpn_batch: 64,
            wpn_fg_fraction: 0.5,
            rcnn_fg_iou: 0.5,
            rcnn_bg_iou_low: 0.0,
            rcnn_batch: 32,
            rcnn_fg_fraction: 0.25,
            rcnn_target_std: (0.1, 0.2),
            final_nms_iou: 0.3,
            score_threshold: 0.05,
            max_detections: 100,
            allowed_border: 0.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let ious = [
            self.positive_iou,
            self.negative_iou,
            self.proposal_nms_iou,
            self.rcnn_fg_iou,
            self.rcnn_bg_iou_low,
            self.final_nms_iou,
        ];
        if ious.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("IoU thresholds must lie in [0, 1]".into()));
        }
        if self.negative_iou >= self.positive_iou {
            return Err(Error::Argument(format!(
                "negative IoU {} must be below positive IoU {}",
                self.negative_iou, self.positive_iou
            )));
        }
        if self.rcnn_bg_iou_low > self.rcnn_fg_iou {
            return Err(Error::Argument(
                "background IoU band must sit below the foreground IoU".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.wpn_fg_fraction) || !(0.0..=1.0).contains(&self.rcnn_fg_fraction) {
            return Err(Error::Argument("foreground fractions must lie in [0, 1]".into()));
        }
        if self.wpn_batch == 0 || self.rcnn_batch == 0 || self.proposals_kept == 0 {
            return Err(Error::Argument(
                "batch sizes and proposal budget must be positive".into(),
            ));
        }
        if !(self.rcnn_target_std.0 > 0.0 && self.rcnn_target_std.1 > 0.0) {
            return Err(Error::Argument("regression target scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<AnchorLabel>,
    /// Regression target towards the best-matching window, for positives.
    pub targets: Vec<Option<RegressionTarget>>,
    pub matched: Vec<Option<usize>>,
}

/// Labels anchors against ground truth.
///
/// Positive: IoU ≥ `positive_iou` with some window, or the anchor attains the
/// highest IoU (> 0) for some window. Negative: not positive and best IoU ≤
/// `negative_iou`. Everything else is ignored. Without ground truth every
/// anchor is negative.
pub fn assign_wpn_targets(anchors: &[Window], gt: &[Window], cfg: &MatchConfig) -> Result<AnchorTargets> {
    let n = anchors.len();
    if gt.is_empty() {
        return Ok(AnchorTargets {
            labels: vec![AnchorLabel::Negative; n],
            targets: vec![None; n],
            matched: vec![None; n],
        });
    }
    let iou: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gt.iter().map(|g| iou_1d(a, g)).collect())
        .collect();
    let mut labels = vec![AnchorLabel::Ignore; n];
    let mut matched = vec![None; n];
    for (i, row) in iou.iter().enumerate() {
        let (best_g, best) = row.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
        );
        matched[i] = Some(best_g);
        if best >= cfg.positive_iou {
            labels[i] = AnchorLabel::Positive;
        } else if best <= cfg.negative_iou {
            labels[i] = AnchorLabel::Negative;
        }
    }
    for j in 0..gt.len() {
        let col_max = iou.iter().map(|r| r[j]).fold(0.0, f64::max);
        if col_max <= 0.0 {
            continue;
        }
        for i in 0..n {
            if iou[i][j] == col_max {
                labels[i] = AnchorLabel::Positive;
            }
        }
    }
    let targets = labels
        .iter()
        .zip(&matched)
        .zip(anchors)
        .map(|((l, m), a)| match (l, m) {
            (AnchorLabel::Positive, Some(j)) => encode_window(a, &gt[*j]).ok(),
            _ => None,
        })
        .collect();
    Ok(AnchorTargets {
        labels,
        targets,
        matched,
    })
}

/// Keeps at most `batch · fg_fraction` positives and fills the rest of the
/// batch with negatives; unsampled anchors become `Ignore`.
pub fn sample_minibatch<R: Rng + ?Sized>(labels: &mut [AnchorLabel], batch: usize, fg_fraction: f64, rng: &mut R) {
    let mut pos: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == AnchorLabel::Positive)
        .collect();
    let mut neg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == AnchorLabel::Negative)
        .collect();
    let max_pos = (batch as f64 * fg_fraction).floor() as usize;
    if pos.len() > max_pos {
        pos.shuffle(rng);
        for &i in &pos[max_pos..] {
            labels[i] = AnchorLabel::Ignore;
        }
        pos.truncate(max_pos);
    }
    let max_neg = batch - pos.len();
    if neg.len() > max_neg {
        neg.shuffle(rng);
        for &i in &neg[max_neg..] {
            labels[i] = AnchorLabel::Ignore;
        }
    }
}

/// A sampled region for the window head: class 0 is background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSample {
    pub window: Window,
    pub class_id: usize,
    pub target: Option<RegressionTarget>,
}

/// Labels proposals (ground truth windows are appended as extra proposals)
/// and samples a foreground/background batch.
pub fn sample_rois<R: Rng + ?Sized>(
    proposals: &[Window],
    gt: &[Window],
    cfg: &MatchConfig,
    rng: &mut R,
) -> Vec<RoiSample> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for p in proposals.iter().chain(gt) {
        let best = gt
            .iter()
            .map(|g| (iou_1d(p, g), g))
            .fold(None, |acc: Option<(f64, &Window)>, (v, g)| match acc {
                Some((b, _)) if b >= v => acc,
                _ => Some((v, g)),
            });
        match best {
            Some((v, g)) if v >= cfg.rcnn_fg_iou => {
                let t = encode_window(p, g).ok().map(|t| RegressionTarget {
                    t_c: t.t_c / cfg.rcnn_target_std.0,
                    t_l: t.t_l / cfg.rcnn_target_std.1,
                });
                fg.push(RoiSample {
                    window: *p,
                    class_id: g.class_id.unwrap_or(0),
                    target: t,
                });
            }
            Some((v, _)) if v < cfg.rcnn_bg_iou_low => {}
            _ => bg.push(RoiSample {
                window: *p,
                class_id: 0,
                target: None,
            }),
        }
    }
    let fg_quota = ((cfg.rcnn_batch as f64 * cfg.rcnn_fg_fraction).round() as usize).min(fg.len());
    fg.shuffle(rng);
    fg.truncate(fg_quota);
    bg.shuffle(rng);
    bg.truncate(cfg.rcnn_batch - fg.len());
    fg.extend(bg);
    fg
}
