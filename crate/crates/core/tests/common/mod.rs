//! Independent reference implementations shared by the integration tests and
//! the acceptance suite. Nothing here calls the library code it checks.
#![allow(dead_code)]

pub mod grad_suite;
pub mod suites;

use rand::Rng;
use skelconv::detector::Window;
use skelconv::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

/// Max abs difference between the analytic gradient of
/// `Σ r ⊙ build(inputs)` and its central finite difference, over every
/// element of every input. `r` is a fixed random projection so that
/// non-scalar outputs get a generic upstream gradient.
pub fn fd_max_error<R: Rng>(inputs: &[Tensor], rng: &mut R, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor], proj: &[f64]| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| g.input(&t.clone().with_requires_grad(true)))
            .collect();
        let out = build(&mut g, &vars);
        let shape = g.shape(out).to_vec();
        let r = g.constant(&shape, proj.to_vec()).unwrap();
        let prod = g.mul(out, r).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss)[0];
        g.backward(loss).unwrap();
        let grads = vars
            .iter()
            .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec))
            .collect();
        (value, grads)
    };
    let size = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
        let out = build(&mut g, &vars);
        g.value(out).len()
    };
    let proj: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, analytic) = eval(inputs, &proj);
    let mut worst: f64 = 0.0;
    for (ti, grads) in analytic.iter().enumerate() {
        for (k, &exact) in grads.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[k] -= FD_STEP;
            let (fp, _) = eval(&plus, &proj);
            let (fm, _) = eval(&minus, &proj);
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max((numeric - exact).abs());
        }
    }
    worst
}

/// Uniform tensor whose entries all keep at least `margin` away from every
/// point in `kinks` (so a finite-difference step never straddles one).
pub fn tensor_avoiding<R: Rng>(shape: &[usize], bound: f64, kinks: &[f64], margin: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.gen_range(-bound..bound);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            break v;
        }
    })
}

pub fn random_tensor<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Six nested loops, zero padding, bias added last.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    bias: Option<&[f64]>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, wd] = xs;
    let [k, _, kh, kw] = ws;
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0.0; b * k * oh * ow];
    for bi in 0..b {
        for ki in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let y = (oy * stride.0 + dy) as isize - pad.0 as isize;
                                let xx = (ox * stride.1 + dx) as isize - pad.1 as isize;
                                let v = if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    x[((bi * c + ci) * h + y as usize) * wd + xx as usize]
                                } else {
                                    0.0
                                };
                                acc += v * w[((ki * c + ci) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    if let Some(bv) = bias {
                        acc += bv[ki];
                    }
                    out[((bi * k + ki) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [b, k, oh, ow])
}

pub fn iou_oracle(a: &Window, b: &Window) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = (a.end - a.start) + (b.end - b.start) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Removal-style NMS: take the best remaining window, delete everything it
/// overlaps by more than the threshold, repeat.
pub fn nms_oracle(windows: &[Window], thr: f64) -> Vec<Window> {
    let mut remaining: Vec<(usize, Window)> = windows.iter().copied().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (bi, bw) = remaining[best];
            let (ci, cw) = remaining[i];
            let better = cw.score > bw.score
                || (cw.score == bw.score && (cw.start < bw.start || (cw.start == bw.start && ci < bi)));
            if better {
                best = i;
            }
        }
        let (_, top) = remaining.remove(best);
        kept.push(top);
        remaining.retain(|(_, w)| iou_oracle(&top, w) <= thr);
    }
    kept
}

/// AP by explicit PR-curve enumeration: for every recall level reached, the
/// interpolated precision is the best precision at any rank with recall at
/// least that level; AP sums recall increments times that precision.
/// Matching walks detections by descending score (stable) and each picks
/// the unmatched gt of its own sequence with the highest IoU.
pub fn ap_oracle(dets: &[(usize, Window)], gts: &[(usize, Window)], theta: f64) -> f64 {
    if gts.is_empty() {
        return if dets.is_empty() { 1.0 } else { 0.0 };
    }
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    // Stable insertion sort by descending score.
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && dets[idx[j - 1]].1.score < dets[idx[j]].1.score {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; gts.len()];
    let mut points = Vec::new();
    let mut tp = 0;
    for (rank, &d) in idx.iter().enumerate() {
        let (seq, w) = dets[d];
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (gi, (gs, g)) in gts.iter().enumerate() {
            if *gs == seq && !used[gi] {
                let v = iou_oracle(&w, g);
                if v > best_iou {
                    best_iou = v;
                    best = Some(gi);
                }
            }
        }
        if let Some(gi) = best {
            if best_iou >= theta {
                used[gi] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.dedup();
    for r in recalls {
        if r <= prev_recall {
            continue;
        }
        let p_interp = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev_recall) * p_interp;
        prev_recall = r;
    }
    ap
}

/// Pointwise linear interpolation of `f` (length `n`, cell centres at
/// integers) at continuous index `u`, clamped to the ends.
pub fn lerp_oracle(f: &[f64], u: f64) -> f64 {
    let n = f.len();
    if u <= 0.0 {
        return f[0];
    }
    if u >= (n - 1) as f64 {
        return f[n - 1];
    }
    let i = u.floor() as usize;
    let t = u - i as f64;
    f[i] * (1.0 - t) + f[i + 1] * t
}

/// Scalar crop-and-resize: value of channel row `f` in bin `b` of `bins` for
/// a window in frame coordinates.
pub fn crop_oracle(f: &[f64], w: &Window, stride: f64, bins: usize, b: usize) -> f64 {
    let (mut s, mut e) = (w.start / stride, w.end / stride);
    if e - s < 1.0 {
        let c = (s + e) / 2.0;
        s = c - 0.5;
        e = c + 0.5;
    }
    let centre = s + (e - s) * (b as f64 + 0.5) / bins as f64;
    lerp_oracle(f, centre - 0.5)
}

pub fn random_window<R: Rng>(rng: &mut R, span: f64, max_len: f64) -> Window {
    let s = rng.gen_range(0.0..span);
    let l = rng.gen_range(0.5..max_len);
    Window::new(s, s + l)
}
