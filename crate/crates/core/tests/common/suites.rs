//! Oracle suites at acceptance scale. Each returns named checks so the
//! per-area tests and the acceptance report share one implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelconv::classifier::{
    skeleton_transform, train_classifier, ClassifierConfig, ClassifierNet, FusionMode, TrainConfig,
};
use skelconv::detector::{
    assign_wpn_targets, decode_window, encode_window, generate_anchors, iou_1d, nms, AnchorConfig, AnchorLabel,
    MatchConfig, RegressionTarget, Window,
};
use skelconv::detector::{train_detector, DetectorConfig, DetectorTrainConfig};
use skelconv::evaluation::{average_precision_tagged, mean_average_precision_tagged, Tagged};
use skelconv::skeleton_data::{
    compute_motion, synthesize_dataset, PersonStreams, SkeletonImage, SkeletonImagePair, SynthConfig, SynthMode,
};
use skelconv::tensor::{Graph, Tensor};

use super::{ap_oracle, iou_oracle, nms_oracle, random_window};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name,
        passed,
        detail: detail.into(),
    }
}

pub fn iou_properties(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..trials {
        let a = random_window(&mut rng, 100.0, 50.0);
        let b = random_window(&mut rng, 100.0, 50.0);
        let v = iou_1d(&a, &b);
        let shift = rng.gen_range(-50.0..50.0);
        let scale = rng.gen_range(0.1..10.0);
        let moved = |w: &Window| Window::new((w.start + shift) * scale, (w.end + shift) * scale);
        worst = worst
            .max((v - iou_1d(&b, &a)).abs())
            .max((v - iou_oracle(&a, &b)).abs())
            .max((v - iou_1d(&moved(&a), &moved(&b))).abs());
        ok &= (0.0..=1.0).contains(&v) && iou_1d(&a, &a) == 1.0;
        ok &= (v == 1.0) == (a.start == b.start && a.end == b.end);
    }
    check(
        "iou_1d symmetric, bounded, shift/scale invariant, matches oracle",
        ok && worst < 1e-12,
        format!("{trials} pairs, worst deviation {worst:e}"),
    )
}

pub fn encode_decode_roundtrip(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_window(&mut rng, 1000.0, 400.0);
        let g = random_window(&mut rng, 1000.0, 400.0);
        let t = encode_window(&a, &g).unwrap();
        let d = decode_window(&a, &t).unwrap();
        worst = worst.max((d.start - g.start).abs()).max((d.end - g.end).abs());
    }
    check(
        "decode(encode(a, g)) = g",
        worst < 1e-9,
        format!("{pairs} pairs, worst abs error {worst:e}"),
    )
}

pub fn nms_matches_oracle(sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut mismatches = 0;
    let mut antichain = true;
    for _ in 0..sets {
        let thr = [0.3, 0.5, 0.7][rng.gen_range(0..3)];
        let windows: Vec<Window> = (0..20)
            .map(|_| {
                let w = random_window(&mut rng, 60.0, 30.0);
                // Coarse scores force ties through the tie-break rules.
                Window::scored(w.start, w.end, (rng.gen_range(0..8) as f64) / 8.0, None)
            })
            .collect();
        let got = nms(&windows, thr);
        if got != nms_oracle(&windows, thr) {
            mismatches += 1;
        }
        for i in 0..got.len() {
            for j in i + 1..got.len() {
                antichain &= iou_1d(&got[i], &got[j]) <= thr;
            }
        }
    }
    check(
        "nms equals the removal-style oracle; kept set pairwise IoU ≤ threshold",
        mismatches == 0 && antichain,
        format!("{sets} sets of 20 windows, {mismatches} mismatches"),
    )
}

pub fn anchor_counts() -> Check {
    let mut ok = true;
    for scales in [vec![4], vec![16, 32, 64, 128], vec![50, 100, 200, 400]] {
        for stride in [1, 4, 8, 16] {
            let cfg = AnchorConfig {
                scales: scales.clone(),
                feature_stride: stride,
            };
            for len in [stride, stride + 1, 3 * stride + 5, 200, 517] {
                let anchors = generate_anchors(len, &cfg);
                ok &= anchors.len() == scales.len() * (len / stride);
                for (i, a) in anchors.iter().enumerate() {
                    let centre = ((i / scales.len()) as f64 + 0.5) * stride as f64;
                    ok &= (a.center() - centre).abs() < 1e-12
                        && (a.length() - scales[i % scales.len()] as f64).abs() < 1e-12;
                }
            }
        }
    }
    check(
        "anchor count = scales × feature positions, centres at (i + ½)·stride",
        ok,
        "",
    )
}

/// Hand-enumerated IoU table:
///
/// ```text
///            G1 [0,20]   G2 [50,70]   label
/// A0 [0,20]    1.0         0          positive (IoU ≥ 0.7)
/// A1 [5,25]    0.6         0          ignore  (0.3 < 0.6 < 0.7, not a column max)
/// A2 [30,40]   0           0          negative
/// A3 [45,65]   0           0.6        positive (ties for G2's best)
/// A4 [55,75]   0           0.6        positive (ties for G2's best)
/// A5 [10,40]   0.25        0          negative
/// ```
pub fn six_anchor_assignment() -> Check {
    let anchors = [
        Window::new(0.0, 20.0),
        Window::new(5.0, 25.0),
        Window::new(30.0, 40.0),
        Window::new(45.0, 65.0),
        Window::new(55.0, 75.0),
        Window::new(10.0, 40.0),
    ];
    let gts = [
        Window::scored(0.0, 20.0, 1.0, Some(1)),
        Window::scored(50.0, 70.0, 1.0, Some(2)),
    ];
    use AnchorLabel::*;
    let want_labels = vec![Positive, Ignore, Negative, Positive, Positive, Negative];
    let want_targets = vec![
        Some(RegressionTarget { t_c: 0.0, t_l: 0.0 }),
        None,
        None,
        Some(RegressionTarget { t_c: 0.25, t_l: 0.0 }),
        Some(RegressionTarget { t_c: -0.25, t_l: 0.0 }),
        None,
    ];
    let got = assign_wpn_targets(&anchors, &gts, &MatchConfig::default()).unwrap();
    check(
        "6-anchor / 2-gt assignment equals the hand table",
        got.labels == want_labels && got.targets == want_targets,
        format!("{:?}", got.labels),
    )
}

pub fn geometry_suite() -> Vec<Check> {
    vec![
        iou_properties(10_000),
        encode_decode_roundtrip(10_000),
        nms_matches_oracle(500),
        anchor_counts(),
        six_anchor_assignment(),
    ]
}

/// Small random detection problem over two sequences and two classes, on a
/// short span so that overlaps are common.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<Tagged>, Vec<Tagged>) {
    let gts: Vec<Tagged> = (0..rng.gen_range(0..=5))
        .map(|_| {
            let w = random_window(rng, 30.0, 15.0);
            (
                rng.gen_range(0..2),
                Window::scored(w.start, w.end, 1.0, Some(rng.gen_range(1..=2))),
            )
        })
        .collect();
    let dets: Vec<Tagged> = (0..rng.gen_range(0..=8))
        .map(|_| {
            // Half the detections jitter a gt so that true positives occur.
            let (seq, base) = match gts.is_empty() || rng.gen_bool(0.5) {
                true => (rng.gen_range(0..2), random_window(rng, 30.0, 15.0)),
                false => {
                    let (s, g) = gts[rng.gen_range(0..gts.len())];
                    let j = |rng: &mut R| rng.gen_range(-3.0..3.0);
                    let (a, b) = (g.start + j(rng), g.end + j(rng));
                    (s, Window::new(a.min(b), a.max(b) + 0.1))
                }
            };
            let score = (rng.gen_range(0..10) as f64) / 10.0;
            (
                seq,
                Window::scored(base.start, base.end, score, Some(rng.gen_range(1..=2))),
            )
        })
        .collect();
    (dets, gts)
}

fn of_class(set: &[Tagged], c: usize) -> Vec<Tagged> {
    set.iter().filter(|(_, w)| w.class_id == Some(c)).copied().collect()
}

pub fn ap_matches_oracle(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (dets, gts) = random_instance(&mut rng);
        for theta in [0.1, 0.3, 0.5, 0.7] {
            for c in 1..=2 {
                let (d, g) = (of_class(&dets, c), of_class(&gts, c));
                let got = average_precision_tagged(&d, &g, theta).unwrap();
                worst = worst.max((got - ap_oracle(&d, &g, theta)).abs());
            }
        }
    }
    check(
        "average_precision equals the exhaustive PR-curve oracle",
        worst < 1e-12,
        format!("{instances} instances × 4 θ × 2 classes, worst deviation {worst:e}"),
    )
}

pub fn map_monotone_in_theta(instances: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut violations = 0;
    for _ in 0..instances {
        let (dets, gts) = random_instance(&mut rng);
        let r = mean_average_precision_tagged(&dets, &gts, &[0.1, 0.5]).unwrap();
        if r.map_at(0.1).unwrap() + 1e-12 < r.map_at(0.5).unwrap() {
            violations += 1;
        }
    }
    check(
        "mAP(θ=0.1) ≥ mAP(θ=0.5)",
        violations == 0,
        format!("{instances} instances, {violations} violations"),
    )
}

pub fn metric_suite() -> Vec<Check> {
    vec![ap_matches_oracle(200), map_monotone_in_theta(200)]
}

fn random_image<R: Rng>(t: usize, n: usize, rng: &mut R) -> SkeletonImage {
    SkeletonImage::from_data(t, n, (0..t * n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn streams(images: Vec<SkeletonImage>) -> PersonStreams {
    PersonStreams {
        pairs: images.into_iter().map(SkeletonImagePair::from_coords).collect(),
        dropped_persons: 0,
    }
}

/// Person-permutation and person-duplication invariance of the classifier,
/// bitwise, for every ablation variant and both fusion modes.
pub fn maxout_invariance(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let mut ok = true;
    for trial in 0..trials {
        let fusion = if trial % 2 == 0 {
            FusionMode::Early
        } else {
            FusionMode::Late
        };
        let cfg = ClassifierConfig {
            p_fixed: 3,
            fusion,
            use_motion: trial % 4 < 2,
            use_transformer: trial % 3 != 0,
            ..ClassifierConfig::tiny(10, 4)
        };
        let net = ClassifierNet::new(cfg.clone(), rng.gen()).unwrap();
        let imgs: Vec<SkeletonImage> = (0..3).map(|_| random_image(cfg.t_fixed, 10, &mut rng)).collect();
        let base = net.forward_classify(&streams(imgs.clone())).unwrap();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let p: Vec<SkeletonImage> = perm.iter().map(|&i| imgs[i].clone()).collect();
            ok &= net.forward_classify(&streams(p)).unwrap() == base;
        }
        // Two distinct persons padded to three by duplicating either one.
        let two = |dup: usize| vec![imgs[0].clone(), imgs[1].clone(), imgs[dup].clone()];
        let pad0 = net.forward_classify(&streams(two(0))).unwrap();
        let pad1 = net.forward_classify(&streams(two(1))).unwrap();
        let mut pair_cfg = cfg.clone();
        pair_cfg.p_fixed = 2;
        let mut pair = ClassifierNet::new(pair_cfg, 0).unwrap();
        *pair.params_mut() = net.params().clone();
        let exact = pair
            .forward_classify(&streams(vec![imgs[0].clone(), imgs[1].clone()]))
            .unwrap();
        ok &= pad0 == exact && pad1 == exact;
    }
    check(
        "forward_classify invariant to person order and duplication (bitwise)",
        ok,
        format!("{trials} random networks"),
    )
}

pub fn transformer_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut ok = true;
    for _ in 0..20 {
        let (b, t, n) = (rng.gen_range(1..3), rng.gen_range(1..6), rng.gen_range(1..12));
        let x = Tensor::from_fn(&[b, 3, t, n], |_| rng.gen_range(-5.0..5.0));
        let eye = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let (xv, wv) = (g.input(&x), g.input(&eye));
        let y = skeleton_transform(&mut g, xv, wv).unwrap();
        ok &= g.value(y) == x.data();
    }
    check(
        "skeleton_transform with identity W is the identity map",
        ok,
        "20 random shapes",
    )
}

pub fn motion_telescoping(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (t, n) = (rng.gen_range(1..40), rng.gen_range(1..8));
        let coords = random_image(t, n, &mut rng);
        let motion = compute_motion(&coords);
        for j in 0..n {
            for c in 0..3 {
                let mut acc = 0.0;
                for tt in 0..t {
                    worst = worst.max((acc - (coords.get(tt, j, c) - coords.get(0, j, c))).abs());
                    acc += motion.get(tt, j, c);
                }
                worst = worst.max(motion.get(t - 1, j, c).abs());
            }
        }
    }
    check(
        "Σ motion[0..t] = coords[t] − coords[0]; last motion frame is zero",
        worst < 1e-12,
        format!("{trials} random images, worst deviation {worst:e}"),
    )
}

pub fn deterministic_repeats() -> Check {
    let synth = SynthConfig::default();
    let data = synthesize_dataset(&synth, 1).unwrap();
    let cfg = ClassifierConfig::tiny(10, 4);
    let tc = TrainConfig {
        epochs: 3,
        stop_at_full_train_accuracy: false,
        ..TrainConfig::default()
    };
    let a = train_classifier(&data, Some(&data[..8]), &cfg, &tc, 5).unwrap();
    let b = train_classifier(&data, Some(&data[..8]), &cfg, &tc, 5).unwrap();
    let cls_same = a.history == b.history && a.model.params() == b.model.params();

    let det_synth = SynthConfig {
        mode: SynthMode::Untrimmed,
        class_count: 3,
        sequences: 4,
        ..SynthConfig::default()
    };
    let det_data = synthesize_dataset(&det_synth, 2).unwrap();
    let dcfg = DetectorConfig::tiny(10, 3);
    let dtc = DetectorTrainConfig {
        epochs: 2,
        ..DetectorTrainConfig::default()
    };
    let x = train_detector(&det_data, &dcfg, &dtc, 9).unwrap();
    let y = train_detector(&det_data, &dcfg, &dtc, 9).unwrap();
    let det_same = x.losses == y.losses
        && det_data
            .iter()
            .all(|s| x.model.forward_detect(s).unwrap() == y.model.forward_detect(s).unwrap());
    let data_same = synthesize_dataset(&synth, 1).unwrap() == data;
    check(
        "same seed twice gives identical data, metric curves, parameters and detections",
        cls_same && det_same && data_same,
        format!("classifier {cls_same}, detector {det_same}, synthesis {data_same}"),
    )
}

pub fn invariance_suite() -> Vec<Check> {
    vec![
        maxout_invariance(12),
        transformer_identity(),
        motion_telescoping(200),
        deterministic_repeats(),
    ]
}
