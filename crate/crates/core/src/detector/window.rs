//! Temporal windows and the 1-D geometry shared by proposals, detections and
//! ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scored interval `[start, end)` on the frame axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub score: f64,
    pub class_id: Option<usize>,
}

pub type WindowSet = Vec<Window>;

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window {
            start,
            end,
            score: 1.0,
            class_id: None,
        }
    }

    pub fn scored(start: f64, end: f64, score: f64, class_id: Option<usize>) -> Self {
        Window {
            start,
            end,
            score,
            class_id,
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn is_valid(&self) -> bool {
        self.start.is_finite() && self.end.is_finite() && self.start < self.end && self.score.is_finite()
    }

    pub fn clipped(&self, lo: f64, hi: f64) -> Self {
        Window {
            start: self.start.clamp(lo, hi),
            end: self.end.clamp(lo, hi),
            ..*self
        }
    }
}

/// Intersection over union of two intervals; 0 when either is empty.
pub fn iou_1d(a: &Window, b: &Window) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.length().max(0.0) + b.length().max(0.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Window regression target: centre offset in anchor lengths and log length ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub t_c: f64,
    pub t_l: f64,
}

pub fn encode_window(anchor: &Window, gt: &Window) -> Result<RegressionTarget> {
    let (la, lg) = (anchor.length(), gt.length());
    if !(la > 0.0 && lg > 0.0) {
        return Err(Error::Argument(format!(
            "window lengths must be positive (anchor {la}, target {lg})"
        )));
    }
    Ok(RegressionTarget {
        t_c: (gt.center() - anchor.center()) / la,
        t_l: (lg / la).ln(),
    })
}

pub fn decode_window(anchor: &Window, t: &RegressionTarget) -> Result<Window> {
    let la = anchor.length();
    if !(la > 0.0) {
        return Err(Error::Argument(format!("anchor length {la} must be positive")));
    }
    let c = anchor.center() + t.t_c * la;
    let l = la * t.t_l.exp();
    Ok(Window {
        start: c - 0.5 * l,
        end: c + 0.5 * l,
        score: anchor.score,
        class_id: anchor.class_id,
    })
}

/// Greedy non-maximum suppression.
///
/// Windows are visited by descending score (ties: earlier start, then lower
/// input index); a window is dropped iff its IoU with an already-kept window
/// exceeds `iou_threshold`.
pub fn nms(windows: &[Window], iou_threshold: f64) -> Vec<Window> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| {
        let (wa, wb) = (&windows[a], &windows[b]);
        wb.score
            .total_cmp(&wa.score)
            .then(wa.start.total_cmp(&wb.start))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Window> = Vec::new();
    for i in order {
        let w = windows[i];
        if kept.iter().all(|k| iou_1d(k, &w) <= iou_threshold) {
            kept.push(w);
        }
    }
    kept
}
