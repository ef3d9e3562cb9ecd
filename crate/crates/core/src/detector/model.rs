use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, ModelKind};
use crate::classifier::{Backbone, BackboneConfig, DenseLayer, FusionMode};
use crate::error::{Error, Result};
use crate::skeleton_data::{regularize_persons, PersonStreams, SkeletonSequence};
use crate::tensor::{kaiming_bound, softmax_rows, Graph, ParamId, ParamSet, Tensor, Var};

use super::anchors::{generate_anchors, AnchorConfig};
use super::pooling::crop_and_resize_1d;
use super::targets::MatchConfig;
use super::window::{decode_window, nms, RegressionTarget, Window, WindowSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub n_joints: usize,
    pub m_joints: usize,
    pub p_fixed: usize,
    /// Action classes, with ids `1..=class_count`; id 0 is background.
    pub class_count: usize,
    pub conv_channels: [usize; 3],
    pub kernel_size: usize,
    pub fusion: FusionMode,
    pub use_motion: bool,
    pub use_transformer: bool,
    pub wpn_channels: usize,
    /// Temporal cells per pooled window.
    pub pool_bins: usize,
    pub fc_hidden: [usize; 2],
    pub anchors: AnchorConfig,
    pub matching: MatchConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            n_joints: 25,
            m_joints: 25,
            p_fixed: 2,
            class_count: 51,
            conv_channels: [32, 32, 64],
            kernel_size: 3,
            fusion: FusionMode::Early,
            use_motion: true,
            use_transformer: true,
            wpn_channels: 128,
            pool_bins: 4,
            fc_hidden: [1024, 512],
            anchors: AnchorConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

impl DetectorConfig {
    /// Desk-scale detector for synthetic data.
    pub fn tiny(n_joints: usize, class_count: usize) -> Self {
        DetectorConfig {
            n_joints,
            m_joints: n_joints,
            p_fixed: 1,
            class_count,
            conv_channels: [16, 16, 32],
            wpn_channels: 32,
            fc_hidden: [64, 64],
            anchors: AnchorConfig {
                scales: vec![16, 32, 64, 128],
                feature_stride: 8,
            },
            ..Self::default()
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            n_joints: self.n_joints,
            m_joints: self.m_joints,
            conv_channels: self.conv_channels,
            kernel_size: self.kernel_size,
            fusion: self.fusion,
            use_motion: self.use_motion,
            use_transformer: self.use_transformer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        self.matching.validate()?;
        if self.anchors.feature_stride != 8 {
            return Err(Error::Argument(format!(
                "feature stride {} must match the backbone's three 2× pools (8)",
                self.anchors.feature_stride
            )));
        }
        if self.n_joints == 0 || self.p_fixed == 0 || self.class_count == 0 || self.pool_bins == 0 {
            return Err(Error::Argument(
                "joints, persons, classes and bins must be positive".into(),
            ));
        }
        if self.conv_channels.contains(&0) || self.fc_hidden.contains(&0) || self.wpn_channels == 0 {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Argument("kernel size must be odd".into()));
        }
        Ok(())
    }

    fn feature_width(&self) -> usize {
        crate::classifier::pooled(self.backbone().joint_width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RawConv {
    weight: ParamId,
    bias: ParamId,
}

impl RawConv {
    fn new<R: Rng>(params: &mut ParamSet, name: &str, shape: [usize; 4], bound: f64, rng: &mut R) -> Self {
        RawConv {
            weight: params.add(format!("{name}.weight"), Tensor::uniform(&shape, bound, rng)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[shape[0]])),
        }
    }

    fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var, padding: (usize, usize)) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.conv2d(x, w, Some(b), (1, 1), padding)
    }
}

/// Raw network outputs for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct WpnOutput {
    pub features: Var,
    /// `[1, 2A, F, 1]`: channel `2a` is background, `2a + 1` foreground.
    pub scores: Var,
    /// `[1, 2A, F, 1]`: channels `2a`, `2a + 1` hold `(t_c, t_l)`.
    pub deltas: Var,
    pub positions: usize,
}

impl WpnOutput {
    pub fn score_index(&self, anchor: usize, per_position: usize, fg: bool) -> usize {
        let (i, a) = (anchor / per_position, anchor % per_position);
        (2 * a + usize::from(fg)) * self.positions + i
    }

    pub fn delta_index(&self, anchor: usize, per_position: usize, component: usize) -> usize {
        let (i, a) = (anchor / per_position, anchor % per_position);
        (2 * a + component) * self.positions + i
    }
}

/// Window proposal network and window classification head on the shared backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet {
    config: DetectorConfig,
    params: ParamSet,
    backbone: Backbone,
    wpn_conv: RawConv,
    wpn_cls: RawConv,
    wpn_reg: RawConv,
    fc: [DenseLayer; 2],
    head_cls: DenseLayer,
    head_reg: DenseLayer,
}

impl DetectorNet {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let backbone = Backbone::new(config.backbone(), &mut params, &mut rng);
        let c = config.backbone().out_channels();
        let w = config.feature_width();
        let a = config.anchors.per_position();
        let h = config.wpn_channels;
        let wpn_conv = RawConv::new(
            &mut params,
            "wpn.conv",
            [h, c, 3, w],
            kaiming_bound(c * 3 * w),
            &mut rng,
        );
        let wpn_cls = RawConv::new(&mut params, "wpn.cls", [2 * a, h, 1, 1], 0.01 * 3f64.sqrt(), &mut rng);
        let wpn_reg = RawConv::new(&mut params, "wpn.reg", [2 * a, h, 1, 1], 0.001 * 3f64.sqrt(), &mut rng);
        let flat = c * config.pool_bins * w;
        let [f1, f2] = config.fc_hidden;
        let k = config.class_count + 1;
        let fc = [
            DenseLayer::new(&mut params, "fc1", flat, f1, kaiming_bound(flat), &mut rng),
            DenseLayer::new(&mut params, "fc2", f1, f2, kaiming_bound(f1), &mut rng),
        ];
        let head_cls = DenseLayer::new(&mut params, "head.cls", f2, k, 0.01 * 3f64.sqrt(), &mut rng);
        let head_reg = DenseLayer::new(&mut params, "head.reg", f2, 2 * k, 0.001 * 3f64.sqrt(), &mut rng);
        Ok(DetectorNet {
            config,
            params,
            backbone,
            wpn_conv,
            wpn_cls,
            wpn_reg,
            fc,
            head_cls,
            head_reg,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn prepare(&self, seq: &SkeletonSequence) -> Result<PersonStreams> {
        match seq.joint_count() {
            Some(n) if n == self.config.n_joints => regularize_persons(seq, self.config.p_fixed),
            other => Err(Error::Data(format!(
                "sequence has {} joints, model expects {}",
                other.unwrap_or(0),
                self.config.n_joints
            ))),
        }
    }

    /// Backbone features and proposal-network outputs for one sequence.
    pub fn wpn(&self, g: &mut Graph, streams: &PersonStreams) -> Result<WpnOutput> {
        let inputs = self.backbone.inputs(g, &[streams])?;
        let features = self.backbone.forward(g, &self.params, &inputs)?;
        let positions = g.shape(features)[2];
        let h = self.wpn_conv.forward(g, &self.params, features, (1, 0))?;
        let h = g.relu(h);
        let scores = self.wpn_cls.forward(g, &self.params, h, (0, 0))?;
        let deltas = self.wpn_reg.forward(g, &self.params, h, (0, 0))?;
        Ok(WpnOutput {
            features,
            scores,
            deltas,
            positions,
        })
    }

    /// Decodes, clips, filters and suppresses anchors into scored proposals.
    pub fn proposals(&self, g: &Graph, out: &WpnOutput, sequence_length: usize) -> Result<Vec<Window>> {
        let cfg = &self.config.matching;
        let a = self.config.anchors.per_position();
        let anchors = generate_anchors(sequence_length, &self.config.anchors);
        let (scores, deltas) = (g.value(out.scores), g.value(out.deltas));
        let t_end = sequence_length as f64;
        let mut cands = Vec::with_capacity(anchors.len());
        for (k, anchor) in anchors.iter().enumerate() {
            let bg = scores[out.score_index(k, a, false)];
            let fg = scores[out.score_index(k, a, true)];
            let t = RegressionTarget {
                t_c: deltas[out.delta_index(k, a, 0)],
                t_l: deltas[out.delta_index(k, a, 1)].clamp(-4.0, 4.0),
            };
            let mut w = decode_window(anchor, &t)?.clipped(0.0, t_end);
            if !(w.length() >= cfg.min_proposal_length) {
                continue;
            }
            w.score = 1.0 / (1.0 + (bg - fg).exp());
            cands.push(w);
        }
        cands.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.start.total_cmp(&y.start)));
        cands.truncate(cfg.pre_nms_proposals);
        let mut kept = nms(&cands, cfg.proposal_nms_iou);
        kept.truncate(cfg.proposals_kept);
        Ok(kept)
    }

    /// Window head on pooled features: class logits `[R, K+1]` and per-class
    /// regression `[R, 2(K+1)]`.
    pub fn head(&self, g: &mut Graph, features: Var, rois: &[Window]) -> Result<(Var, Var)> {
        let s = g.shape(features).to_vec();
        let fmap = g.reshape(features, &[s[1], s[2], s[3]])?;
        let stride = self.config.anchors.feature_stride;
        let (pooled, _) = crop_and_resize_1d(g, fmap, rois, stride, self.config.pool_bins)?;
        let flat_len = s[1] * self.config.pool_bins * s[3];
        let flat = g.reshape(pooled, &[rois.len(), flat_len])?;
        let h = self.fc[0].forward(g, &self.params, flat)?;
        let h = g.relu(h);
        let h = self.fc[1].forward(g, &self.params, h)?;
        let h = g.relu(h);
        let cls = self.head_cls.forward(g, &self.params, h)?;
        let reg = self.head_reg.forward(g, &self.params, h)?;
        Ok((cls, reg))
    }

    /// Full detection pass: proposals, window head, per-class decode,
    /// score threshold and per-class suppression.
    pub fn forward_detect(&self, seq: &SkeletonSequence) -> Result<WindowSet> {
        let t_len = seq.len();
        if t_len < self.config.anchors.feature_stride {
            return Ok(Vec::new());
        }
        let streams = self.prepare(seq)?;
        let mut g = Graph::new();
        let out = self.wpn(&mut g, &streams)?;
        let proposals = self.proposals(&g, &out, t_len)?;
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let (cls, reg) = self.head(&mut g, out.features, &proposals)?;
        let k = self.config.class_count + 1;
        let probs = softmax_rows(g.value(cls), k);
        let deltas = g.value(reg);
        let cfg = &self.config.matching;
        let (sc, sl) = cfg.rcnn_target_std;
        let mut detections = Vec::new();
        for c in 1..k {
            let mut per_class = Vec::new();
            for (r, p) in proposals.iter().enumerate() {
                let score = probs[r * k + c];
                if score < cfg.score_threshold {
                    continue;
                }
                let t = RegressionTarget {
                    t_c: deltas[r * 2 * k + 2 * c] * sc,
                    t_l: (deltas[r * 2 * k + 2 * c + 1] * sl).clamp(-4.0, 4.0),
                };
                let mut w = decode_window(p, &t)?.clipped(0.0, t_len as f64);
                if !w.is_valid() {
                    continue;
                }
                w.score = score;
                w.class_id = Some(c);
                per_class.push(w);
            }
            detections.extend(nms(&per_class, cfg.final_nms_iou));
        }
        detections.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.total_cmp(&b.start)));
        detections.truncate(cfg.max_detections);
        Ok(detections)
    }

    pub fn to_checkpoint(&self) -> Result<ModelCheckpoint> {
        ModelCheckpoint::new(ModelKind::Detector, &self.config, &self.params)
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.kind != ModelKind::Detector {
            return Err(Error::Checkpoint(format!(
                "expected a detector checkpoint, found {:?}",
                ck.kind
            )));
        }
        let mut net = DetectorNet::new(ck.config()?, 0)?;
        ck.load_into(&mut net.params)?;
        Ok(net)
    }
}
