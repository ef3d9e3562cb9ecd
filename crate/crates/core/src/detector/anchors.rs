use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::window::Window;

/// 1-D anchor layout: one anchor per scale at every feature position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub scales: Vec<usize>,
    pub feature_stride: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: vec![50, 100, 200, 400],
            feature_stride: 8,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_stride == 0 {
            return Err(Error::Argument("feature stride must be positive".into()));
        }
        if self.scales.is_empty() || self.scales[0] == 0 {
            return Err(Error::Argument("anchor scales must be non-empty and positive".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "anchor scales {:?} must be strictly increasing",
                self.scales
            )));
        }
        Ok(())
    }

    pub fn per_position(&self) -> usize {
        self.scales.len()
    }
}

/// Anchors over the original frame axis, ordered position-major: anchor
/// `i · A + a` has centre `(i + 0.5) · stride` and length `scales[a]`.
/// Anchors are not clipped to the sequence.
pub fn generate_anchors(sequence_length: usize, cfg: &AnchorConfig) -> Vec<Window> {
    let positions = sequence_length / cfg.feature_stride.max(1);
    let stride = cfg.feature_stride as f64;
    let mut out = Vec::with_capacity(positions * cfg.scales.len());
    for i in 0..positions {
        let center = (i as f64 + 0.5) * stride;
        for &s in &cfg.scales {
            let half = s as f64 / 2.0;
            out.push(Window::scored(center - half, center + half, 0.0, None));
        }
    }
    out
}
