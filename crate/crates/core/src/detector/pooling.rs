use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

use super::window::Window;

/// Crop-and-resize along the temporal axis of `features [C, F]` or `[C, F, W]`.
///
/// Each window (frame coordinates) is mapped to feature coordinates by
/// dividing by `feature_stride`, where feature cell `i` spans `[i, i + 1)`.
/// The span is split into `bins` equal cells and the map is linearly
/// interpolated at every cell centre. A span shorter than one feature cell is
/// widened to one cell around its centre and flagged in the returned mask.
/// Output: `[R, C, bins]` or `[R, C, bins, W]`.
pub fn crop_and_resize_1d(
    g: &mut Graph,
    features: Var,
    windows: &[Window],
    feature_stride: usize,
    bins: usize,
) -> Result<(Var, Vec<bool>)> {
    if bins == 0 || feature_stride == 0 {
        return Err(Error::Argument("bins and feature stride must be positive".into()));
    }
    if windows.is_empty() {
        return Err(Error::Argument("crop_and_resize_1d needs at least one window".into()));
    }
    let stride = feature_stride as f64;
    let mut widened = Vec::with_capacity(windows.len());
    let positions: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            let (mut s, mut e) = (w.start / stride, w.end / stride);
            let short = !(e - s >= 1.0);
            if short {
                let c = 0.5 * (s + e);
                s = c - 0.5;
                e = c + 0.5;
            }
            widened.push(short);
            let cell = (e - s) / bins as f64;
            (0..bins).map(|b| s + (b as f64 + 0.5) * cell - 0.5).collect()
        })
        .collect();
    let pooled = g.linear_resample(features, &positions)?;
    Ok((pooled, widened))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn full_span_with_f_bins_is_identity() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::from_fn(&[2, 5], |i| (i * i) as f64));
        let (y, flags) = crop_and_resize_1d(&mut g, x, &[Window::new(0.0, 40.0)], 8, 5).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert_eq!(flags, vec![false]);
    }

    #[test]
    fn constant_map_gives_constant_output() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::from_fn(&[3, 7, 2], |_| 2.5));
        let ws = [Window::new(3.0, 17.0), Window::new(0.0, 56.0), Window::new(40.0, 41.0)];
        let (y, flags) = crop_and_resize_1d(&mut g, x, &ws, 8, 4).unwrap();
        assert_eq!(g.shape(y), &[3, 3, 4, 2]);
        assert!(g.value(y).iter().all(|&v| v == 2.5));
        assert_eq!(flags, vec![false, false, true]);
    }
}
