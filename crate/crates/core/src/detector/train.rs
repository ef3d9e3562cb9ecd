use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton_data::{resize_temporal, SkeletonSequence};
use crate::tensor::{Graph, Sgd, SgdConfig, Var};

use super::anchors::generate_anchors;
use super::model::{DetectorConfig, DetectorNet};
use super::targets::{assign_wpn_targets, sample_minibatch, sample_rois, AnchorLabel, AnchorTargets};
use super::window::{Window, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorTrainConfig {
    /// Passes over the training sequences; one sequence per iteration.
    pub epochs: usize,
    pub sgd: SgdConfig,
    /// Per-sequence temporal scale factor drawn uniformly from this range.
    pub scale_range: (f64, f64),
    /// Weight of the regression terms relative to classification.
    pub regression_weight: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            epochs: 80,
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                weight_decay: 1e-4,
                lr_step: 60,
                lr_decay: 0.1,
            },
            scale_range: (0.8, 1.5),
            regression_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLoss {
    pub iteration: usize,
    pub epoch: usize,
    pub scale: f64,
    pub wpn_cls: f64,
    pub wpn_reg: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct DetectorTrainOutcome {
    pub model: DetectorNet,
    pub losses: Vec<IterationLoss>,
}

/// Rescales the time axis by `factor` (length rounded, at least one frame);
/// ground truth segments follow.
pub fn rescale_sequence(seq: &SkeletonSequence, factor: f64) -> Result<SkeletonSequence> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Argument(format!("scale factor {factor} must be positive")));
    }
    let t_new = ((seq.len() as f64 * factor).round() as usize).max(1);
    resize_temporal(seq, t_new)
}

/// Proposal-network targets for a sequence of `length` frames. Anchors that
/// cross the sequence boundary by more than `allowed_border` are ignored.
pub fn wpn_targets(length: usize, gt: &[Window], cfg: &DetectorConfig) -> Result<(Vec<Window>, AnchorTargets)> {
    let anchors = generate_anchors(length, &cfg.anchors);
    let border = cfg.matching.allowed_border;
    let inside: Vec<usize> = (0..anchors.len())
        .filter(|&i| anchors[i].start >= -border && anchors[i].end <= length as f64 + border)
        .collect();
    let subset: Vec<Window> = inside.iter().map(|&i| anchors[i]).collect();
    let sub = assign_wpn_targets(&subset, gt, &cfg.matching)?;
    let mut full = AnchorTargets {
        labels: vec![AnchorLabel::Ignore; anchors.len()],
        targets: vec![None; anchors.len()],
        matched: vec![None; anchors.len()],
    };
    for (k, &i) in inside.iter().enumerate() {
        full.labels[i] = sub.labels[k];
        full.targets[i] = sub.targets[k];
        full.matched[i] = sub.matched[k];
    }
    Ok((anchors, full))
}

fn ground_truth(seq: &SkeletonSequence) -> WindowSet {
    let t = seq.len() as f64;
    seq.segments
        .iter()
        .flatten()
        .map(|w| w.clipped(0.0, t))
        .filter(Window::is_valid)
        .collect()
}

struct StepLosses {
    total: Var,
    parts: [f64; 4],
}

fn add_term(g: &mut Graph, acc: Option<Var>, term: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        Some(a) => g.add(a, term)?,
        None => term,
    }))
}

fn step_loss<R: Rng>(
    net: &DetectorNet,
    g: &mut Graph,
    seq: &SkeletonSequence,
    reg_weight: f64,
    rng: &mut R,
) -> Result<Option<StepLosses>> {
    let cfg = net.config();
    let t_len = seq.len();
    if t_len < cfg.anchors.feature_stride {
        return Ok(None);
    }
    let gt = ground_truth(seq);
    let streams = net.prepare(seq)?;
    let out = net.wpn(g, &streams)?;
    let a = cfg.anchors.per_position();
    let (_, mut targets) = wpn_targets(t_len, &gt, cfg)?;
    sample_minibatch(
        &mut targets.labels,
        cfg.matching.wpn_batch,
        cfg.matching.wpn_fg_fraction,
        rng,
    );

    let mut parts = [0.0; 4];
    let mut total: Option<Var> = None;
    let sampled: Vec<usize> = (0..targets.labels.len())
        .filter(|&i| targets.labels[i] != AnchorLabel::Ignore)
        .collect();
    if !sampled.is_empty() {
        let idx: Vec<usize> = sampled
            .iter()
            .flat_map(|&k| [out.score_index(k, a, false), out.score_index(k, a, true)])
            .collect();
        let labels: Vec<usize> = sampled
            .iter()
            .map(|&k| usize::from(targets.labels[k] == AnchorLabel::Positive))
            .collect();
        let logits = g.gather(out.scores, &idx, &[sampled.len(), 2])?;
        let cls = g.softmax_cross_entropy(logits, &labels)?;
        parts[0] = g.value(cls)[0];
        total = add_term(g, total, cls)?;

        let pos: Vec<usize> = sampled
            .iter()
            .copied()
            .filter(|&k| targets.labels[k] == AnchorLabel::Positive)
            .collect();
        if !pos.is_empty() {
            let idx: Vec<usize> = pos
                .iter()
                .flat_map(|&k| [out.delta_index(k, a, 0), out.delta_index(k, a, 1)])
                .collect();
            let pred = g.gather(out.deltas, &idx, &[idx.len()])?;
            let tv: Vec<f64> = pos
                .iter()
                .flat_map(|&k| {
                    let t = targets.targets[k].expect("positives carry targets");
                    [t.t_c, t.t_l]
                })
                .collect();
            let target = g.constant(&[tv.len()], tv)?;
            let w = vec![reg_weight / sampled.len() as f64; idx.len()];
            let reg = g.smooth_l1(pred, target, &w)?;
            parts[1] = g.value(reg)[0];
            total = add_term(g, total, reg)?;
        }
    }

    let proposals = net.proposals(g, &out, t_len)?;
    let rois = sample_rois(&proposals, &gt, &cfg.matching, rng);
    if !rois.is_empty() {
        let windows: Vec<Window> = rois.iter().map(|r| r.window).collect();
        let (cls, reg) = net.head(g, out.features, &windows)?;
        let labels: Vec<usize> = rois.iter().map(|r| r.class_id).collect();
        let ce = g.softmax_cross_entropy(cls, &labels)?;
        parts[2] = g.value(ce)[0];
        total = add_term(g, total, ce)?;
        let k = cfg.class_count + 1;
        let fg: Vec<usize> = (0..rois.len()).filter(|&r| rois[r].target.is_some()).collect();
        if !fg.is_empty() {
            let idx: Vec<usize> = fg
                .iter()
                .flat_map(|&r| {
                    let c = rois[r].class_id;
                    [r * 2 * k + 2 * c, r * 2 * k + 2 * c + 1]
                })
                .collect();
            let pred = g.gather(reg, &idx, &[idx.len()])?;
            let tv: Vec<f64> = fg
                .iter()
                .flat_map(|&r| {
                    let t = rois[r].target.expect("filtered");
                    [t.t_c, t.t_l]
                })
                .collect();
            let target = g.constant(&[tv.len()], tv)?;
            let w = vec![reg_weight / rois.len() as f64; idx.len()];
            let l = g.smooth_l1(pred, target, &w)?;
            parts[3] = g.value(l)[0];
            total = add_term(g, total, l)?;
        }
    }
    Ok(total.map(|total| StepLosses { total, parts }))
}

/// Joint training of the proposal network and the window head with summed
/// losses, one sequence per iteration. Deterministic for a fixed `seed`.
pub fn train_detector(
    data: &[SkeletonSequence],
    config: &DetectorConfig,
    train_cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<DetectorTrainOutcome> {
    if data.is_empty() {
        return Err(Error::Argument("detector training set is empty".into()));
    }
    let (lo, hi) = train_cfg.scale_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Argument(format!("invalid scale range ({lo}, {hi})")));
    }
    for (i, seq) in data.iter().enumerate() {
        seq.validate()?;
        if let Some(w) = seq
            .segments
            .iter()
            .flatten()
            .find(|w| w.class_id.is_none_or(|c| c == 0 || c > config.class_count))
        {
            return Err(Error::Data(format!(
                "sequence {i}: segment class {:?} outside 1..={}",
                w.class_id, config.class_count
            )));
        }
    }
    let mut net = DetectorNet::new(config.clone(), seed)?;
    let mut opt = Sgd::new(train_cfg.sgd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00de_7ec7);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut iteration = 0;
    for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.sgd.rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for &i in &order {
            let scale = rng.gen_range(lo..=hi);
            let seq = rescale_sequence(&data[i], scale)?;
            let mut g = Graph::new();
            let Some(step) = step_loss(&net, &mut g, &seq, train_cfg.regression_weight, &mut rng)? else {
                continue;
            };
            let total = g.value(step.total)[0];
            if !total.is_finite() {
                return Err(Error::Data(format!("loss diverged at iteration {iteration}")));
            }
            g.backward(step.total)?;
            net.params_mut().accumulate_grads(&g);
            opt.step(net.params_mut(), lr);
            let [wpn_cls, wpn_reg, rcnn_cls, rcnn_reg] = step.parts;
            losses.push(IterationLoss {
                iteration,
                epoch,
                scale,
                wpn_cls,
                wpn_reg,
                rcnn_cls,
                rcnn_reg,
                total,
            });
            epoch_total += total;
            iteration += 1;
        }
        info!("epoch {epoch}: mean loss {:.4}", epoch_total / data.len() as f64);
    }
    Ok(DetectorTrainOutcome { model: net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton_data::{synthesize_dataset, SynthConfig, SynthMode};

    #[test]
    fn unit_scale_leaves_targets_unchanged() {
        let cfg = SynthConfig {
            mode: SynthMode::Untrimmed,
            sequences: 2,
            ..SynthConfig::default()
        };
        let det = DetectorConfig::tiny(10, 4);
        for seq in synthesize_dataset(&cfg, 8).unwrap() {
            let same = rescale_sequence(&seq, 1.0).unwrap();
            assert_eq!(same, seq);
            let (a0, t0) = wpn_targets(seq.len(), &ground_truth(&seq), &det).unwrap();
            let (a1, t1) = wpn_targets(same.len(), &ground_truth(&same), &det).unwrap();
            assert_eq!(a0, a1);
            assert_eq!(t0, t1);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let r = train_detector(&[], &DetectorConfig::tiny(10, 3), &DetectorTrainConfig::default(), 0);
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
