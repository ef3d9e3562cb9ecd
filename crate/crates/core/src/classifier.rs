//! Two-stream skeleton classifier.
//!
//! Per person, the coordinate and motion images pass through a shared
//! bias-free joint transformer, then a small convolution stack. Person feature
//! maps are merged by element-wise max right after the last convolution, and
//! the merged map feeds the fully connected stages.

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, ModelKind};
use crate::error::{Error, Result};
use crate::skeleton_data::{prepare_streams, PersonStreams, SkeletonImage, SkeletonSequence};
use crate::tensor::{kaiming_bound, softmax_rows, Graph, ParamId, ParamSet, Sgd, SgdConfig, Tensor, Var};

/// Where the coordinate and motion streams meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Each stream has its own first convolution; maps are concatenated on
    /// channels before the remaining convolutions.
    Early,
    /// Each stream has a full convolution stack; maps are concatenated before
    /// the fully connected stages.
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub n_joints: usize,
    /// Interpolated joints produced by the transformer.
    pub m_joints: usize,
    pub t_fixed: usize,
    pub p_fixed: usize,
    pub class_count: usize,
    pub conv_channels: [usize; 3],
    /// Hidden widths followed by the class head (last entry = `class_count`).
    pub fc_widths: [usize; 3],
    pub kernel_size: usize,
    pub fusion: FusionMode,
    pub use_motion: bool,
    pub use_transformer: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            n_joints: 25,
            m_joints: 25,
            t_fixed: 32,
            p_fixed: 2,
            class_count: 60,
            conv_channels: [32, 32, 64],
            fc_widths: [1024, 512, 60],
            kernel_size: 3,
            fusion: FusionMode::Early,
            use_motion: true,
            use_transformer: true,
        }
    }
}

impl ClassifierConfig {
    /// Desk-scale network for quick experiments on synthetic data.
    pub fn tiny(n_joints: usize, class_count: usize) -> Self {
        ClassifierConfig {
            n_joints,
            m_joints: n_joints,
            t_fixed: 32,
            p_fixed: 2,
            class_count,
            conv_channels: [8, 8, 16],
            fc_widths: [64, 64, class_count],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_joints == 0 || self.t_fixed == 0 || self.p_fixed == 0 || self.class_count == 0 {
            return bad("joint count, t_fixed, p_fixed and class_count must be positive".into());
        }
        if self.use_transformer && self.m_joints == 0 {
            return bad("m_joints must be positive".into());
        }
        if self.conv_channels.contains(&0) || self.fc_widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.fc_widths[2] != self.class_count {
            return bad(format!(
                "final fc width {} must equal class_count {}",
                self.fc_widths[2], self.class_count
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        Ok(())
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

    /// Flattened feature length entering the first fully connected stage.
    pub fn flat_features(&self) -> usize {
        let bb = self.backbone();
        bb.out_channels() * pooled(self.t_fixed) * pooled(bb.joint_width())
    }
}

/// One 2×2 max-pool (stride 2) per convolution stage; an axis of length 1 is left alone.
pub(crate) fn pool_len(d: usize) -> usize {
    if d >= 2 {
        d / 2
    } else {
        d
    }
}

pub(crate) fn pooled(d: usize) -> usize {
    pool_len(pool_len(pool_len(d)))
}

/// Architecture of the convolutional trunk shared with the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_joints: usize,
    pub m_joints: usize,
    pub conv_channels: [usize; 3],
    pub kernel_size: usize,
    pub fusion: FusionMode,
    pub use_motion: bool,
    pub use_transformer: bool,
}

impl BackboneConfig {
    pub fn streams(&self) -> usize {
        if self.use_motion {
            2
        } else {
            1
        }
    }

    pub fn joint_width(&self) -> usize {
        if self.use_transformer {
            self.m_joints
        } else {
            self.n_joints
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.fusion {
            FusionMode::Early => self.conv_channels[2],
            FusionMode::Late => self.conv_channels[2] * self.streams(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    pad: usize,
}

impl ConvLayer {
    fn new<R: Rng>(params: &mut ParamSet, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Self {
        let bound = kaiming_bound(c_in * k * k);
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform(&[c_out, c_in, k, k], bound, rng),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        ConvLayer {
            weight,
            bias,
            pad: k / 2,
        }
    }

    fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.conv2d(x, w, Some(b), (1, 1), (self.pad, self.pad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseLayer {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl DenseLayer {
    pub(crate) fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        f_in: usize,
        f_out: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::uniform(&[f_in, f_out], bound, rng));
        let bias = Some(params.add(format!("{name}.bias"), Tensor::zeros(&[f_out])));
        DenseLayer { weight, bias }
    }

    pub(crate) fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = self.bias.map(|b| g.param(params, b));
        g.dense(x, w, b)
    }
}

pub(crate) fn relu_pool(g: &mut Graph, x: Var) -> Result<Var> {
    let h = g.relu(x);
    let s = g.shape(h);
    let win = (s[2].min(2), s[3].min(2));
    g.max_pool2d(h, win, win)
}

/// Bias-free joint transformer `S' = (Sᵀ·W)ᵀ` applied to a `[B, 3, T, N]`
/// stream: every frame and channel is mapped `N → M` by the same `W [N, M]`.
pub fn skeleton_transform(g: &mut Graph, stream: Var, weight: Var) -> Result<Var> {
    let s = g.shape(stream).to_vec();
    let ws = g.shape(weight).to_vec();
    if s.len() != 4 || ws.len() != 2 || s[3] != ws[0] {
        return Err(Error::shape(&s, &ws, "skeleton_transform stream/weight"));
    }
    let rows = g.reshape(stream, &[s[0] * s[1] * s[2], s[3]])?;
    let mixed = g.dense(rows, weight, None)?;
    g.reshape(mixed, &[s[0], s[1], s[2], ws[1]])
}

/// Transformer initialisation: identity on the first `min(N, M)` columns plus
/// uniform noise in ±0.01.
pub fn init_transformer<R: Rng>(n: usize, m: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(&[n, m], |i| {
        let (row, col) = (i / m, i % m);
        let eye = if row == col { 1.0 } else { 0.0 };
        eye + rng.gen_range(-0.01..=0.01)
    })
}

/// Convolutional trunk with transformer, stream fusion and person maxout.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    transformer: Option<ParamId>,
    stacks: Vec<Vec<ConvLayer>>,
    trunk: Vec<ConvLayer>,
}

impl Backbone {
    pub fn new<R: Rng>(config: BackboneConfig, params: &mut ParamSet, rng: &mut R) -> Self {
        let transformer = config.use_transformer.then(|| {
            params.add(
                "transformer.weight",
                init_transformer(config.n_joints, config.m_joints, rng),
            )
        });
        let [c1, c2, c3] = config.conv_channels;
        let k = config.kernel_size;
        let names = ["coords", "motion"];
        let streams = config.streams();
        let (stacks, trunk) = match config.fusion {
            FusionMode::Early => {
                let stacks = (0..streams)
                    .map(|s| vec![ConvLayer::new(params, &format!("conv1_{}", names[s]), 3, c1, k, rng)])
                    .collect();
                let trunk = vec![
                    ConvLayer::new(params, "conv2", c1 * streams, c2, k, rng),
                    ConvLayer::new(params, "conv3", c2, c3, k, rng),
                ];
                (stacks, trunk)
            }
            FusionMode::Late => {
                let stacks = (0..streams)
                    .map(|s| {
                        vec![
                            ConvLayer::new(params, &format!("conv1_{}", names[s]), 3, c1, k, rng),
                            ConvLayer::new(params, &format!("conv2_{}", names[s]), c1, c2, k, rng),
                            ConvLayer::new(params, &format!("conv3_{}", names[s]), c2, c3, k, rng),
                        ]
                    })
                    .collect();
                (stacks, Vec::new())
            }
        };
        Backbone {
            config,
            transformer,
            stacks,
            trunk,
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn transformer_param(&self) -> Option<ParamId> {
        self.transformer
    }

    /// Records the constant `[B, 3, T, N]` stream tensors for a batch of
    /// equally long sequences: `(coords, motion)` per person.
    pub fn inputs(&self, g: &mut Graph, batch: &[&PersonStreams]) -> Result<Vec<(Var, Option<Var>)>> {
        let first = batch.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
        let persons = first.pairs.len();
        let (t_len, n) = (first.pairs[0].coords.frames, first.pairs[0].coords.joints);
        if n != self.config.n_joints {
            return Err(Error::Data(format!(
                "stream has {n} joints, model expects {}",
                self.config.n_joints
            )));
        }
        let mut out = Vec::with_capacity(persons);
        for p in 0..persons {
            let mut coords = Vec::with_capacity(batch.len() * 3 * t_len * n);
            let mut motion = Vec::with_capacity(coords.capacity());
            for item in batch {
                let pair = item
                    .pairs
                    .get(p)
                    .ok_or_else(|| Error::Data("batch items differ in person count".into()))?;
                check_image(&pair.coords, t_len, n)?;
                coords.extend(pair.coords.to_channels_first());
                if self.config.use_motion {
                    motion.extend(pair.motion.to_channels_first());
                }
            }
            let shape = [batch.len(), 3, t_len, n];
            let c = g.constant(&shape, coords)?;
            let m = if self.config.use_motion {
                Some(g.constant(&shape, motion)?)
            } else {
                None
            };
            out.push((c, m));
        }
        Ok(out)
    }

    fn person_features(&self, g: &mut Graph, params: &ParamSet, coords: Var, motion: Option<Var>) -> Result<Var> {
        let w = self.transformer.map(|id| g.param(params, id));
        let mut streams = vec![coords];
        streams.extend(motion);
        let mut outs = Vec::with_capacity(streams.len());
        for (stack, x) in self.stacks.iter().zip(streams) {
            let mut h = match w {
                Some(w) => skeleton_transform(g, x, w)?,
                None => x,
            };
            for (i, layer) in stack.iter().enumerate() {
                h = layer.forward(g, params, h)?;
                let is_final = self.trunk.is_empty() && i + 1 == stack.len();
                if !is_final {
                    h = relu_pool(g, h)?;
                }
            }
            outs.push(h);
        }
        let mut h = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        for (i, layer) in self.trunk.iter().enumerate() {
            h = layer.forward(g, params, h)?;
            if i + 1 < self.trunk.len() {
                h = relu_pool(g, h)?;
            }
        }
        Ok(h)
    }

    /// Runs every person through the shared layers, merges them by
    /// element-wise max after the last convolution, then applies the final
    /// ReLU and pool. Output: `[B, C, T/8, M/8]`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, persons: &[(Var, Option<Var>)]) -> Result<Var> {
        let feats = persons
            .iter()
            .map(|&(c, m)| self.person_features(g, params, c, m))
            .collect::<Result<Vec<_>>>()?;
        let merged = g.max_all(&feats)?;
        relu_pool(g, merged)
    }
}

fn check_image(img: &SkeletonImage, t_len: usize, n: usize) -> Result<()> {
    if img.frames != t_len || img.joints != n {
        return Err(Error::shape(
            &[img.frames, img.joints],
            &[t_len, n],
            "batch stream sizes",
        ));
    }
    Ok(())
}

/// The full classification network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    config: ClassifierConfig,
    params: ParamSet,
    backbone: Backbone,
    fc: [DenseLayer; 3],
}

impl ClassifierNet {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let backbone = Backbone::new(config.backbone(), &mut params, &mut rng);
        let [f1, f2, f3] = config.fc_widths;
        let flat = config.flat_features();
        let fc = [
            DenseLayer::new(&mut params, "fc1", flat, f1, kaiming_bound(flat), &mut rng),
            DenseLayer::new(&mut params, "fc2", f1, f2, kaiming_bound(f1), &mut rng),
            DenseLayer::new(&mut params, "fc3", f2, f3, 1.0 / (f2 as f64).sqrt(), &mut rng),
        ];
        Ok(ClassifierNet {
            config,
            params,
            backbone,
            fc,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Exact number of scalar parameters, transformer weight included.
    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// Resize, regularise persons and compute motion for one sequence.
    pub fn prepare(&self, seq: &SkeletonSequence) -> Result<PersonStreams> {
        match seq.joint_count() {
            Some(n) if n == self.config.n_joints => {}
            other => {
                return Err(Error::Data(format!(
                    "sequence has {} joints, model expects {}",
                    other.unwrap_or(0),
                    self.config.n_joints
                )))
            }
        }
        prepare_streams(seq, self.config.t_fixed, self.config.p_fixed)
    }

    /// Records the forward pass for a batch and returns logits `[B, class_count]`.
    pub fn logits(&self, g: &mut Graph, batch: &[&PersonStreams]) -> Result<Var> {
        let inputs = self.backbone.inputs(g, batch)?;
        let feats = self.backbone.forward(g, &self.params, &inputs)?;
        let flat = g.reshape(feats, &[batch.len(), self.config.flat_features()])?;
        let h = self.fc[0].forward(g, &self.params, flat)?;
        let h = g.relu(h);
        let h = self.fc[1].forward(g, &self.params, h)?;
        let h = g.relu(h);
        self.fc[2].forward(g, &self.params, h)
    }

    /// Class logits for one set of person streams.
    pub fn forward_classify(&self, streams: &PersonStreams) -> Result<Vec<f64>> {
        if streams.pairs.is_empty() {
            return Err(Error::Data("no person streams".into()));
        }
        let (t, n) = (streams.pairs[0].coords.frames, streams.pairs[0].coords.joints);
        if t != self.config.t_fixed || n != self.config.n_joints {
            return Err(Error::shape(
                &[t, n],
                &[self.config.t_fixed, self.config.n_joints],
                "classifier streams",
            ));
        }
        let mut g = Graph::new();
        let out = self.logits(&mut g, &[streams])?;
        Ok(g.value(out).to_vec())
    }

    pub fn predict(&self, seq: &SkeletonSequence) -> Result<Prediction> {
        let streams = self.prepare(seq)?;
        let logits = self.forward_classify(&streams)?;
        Ok(Prediction::from_logits(&logits))
    }

    pub fn to_checkpoint(&self) -> Result<ModelCheckpoint> {
        ModelCheckpoint::new(ModelKind::Classifier, &self.config, &self.params)
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.kind != ModelKind::Classifier {
            return Err(Error::Checkpoint(format!(
                "expected a classifier checkpoint, found {:?}",
                ck.kind
            )));
        }
        let mut net = ClassifierNet::new(ck.config()?, 0)?;
        ck.load_into(&mut net.params)?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_id: usize,
    pub scores: Vec<f64>,
}

impl Prediction {
    /// Softmax scores; ties in the argmax go to the lowest class id.
    pub fn from_logits(logits: &[f64]) -> Self {
        let scores = softmax_rows(logits, logits.len());
        let class_id = argmax(&scores);
        Prediction { class_id, scores }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    /// End training after the first epoch that classifies every training sequence correctly.
    pub stop_at_full_train_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 8,
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                weight_decay: 1e-4,
                lr_step: 0,
                lr_decay: 0.1,
            },
            stop_at_full_train_accuracy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (training
    /// accuracy when no validation set is given).
    pub model: ClassifierNet,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

fn labelled(seqs: &[SkeletonSequence], net: &ClassifierNet) -> Result<Vec<(PersonStreams, usize)>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let label = s
                .label
                .ok_or_else(|| Error::Data(format!("sequence {i} has no label")))?;
            if label >= net.config.class_count {
                return Err(Error::Data(format!(
                    "label {label} of sequence {i} exceeds class_count {}",
                    net.config.class_count
                )));
            }
            Ok((net.prepare(s)?, label))
        })
        .collect()
}

/// Mean loss and accuracy over a prepared set, forward only.
fn evaluate(net: &ClassifierNet, data: &[(PersonStreams, usize)], batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in data.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let batch: Vec<&PersonStreams> = chunk.iter().map(|(s, _)| s).collect();
        let labels: Vec<usize> = chunk.iter().map(|(_, l)| *l).collect();
        let logits = net.logits(&mut g, &batch)?;
        let l = g.softmax_cross_entropy(logits, &labels)?;
        loss += g.value(l)[0] * chunk.len() as f64;
        let k = net.config.class_count;
        for (row, &label) in g.value(logits).chunks(k).zip(&labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Trains from scratch. Deterministic for a fixed `seed`.
pub fn train_classifier(
    train: &[SkeletonSequence],
    val: Option<&[SkeletonSequence]>,
    config: &ClassifierConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if train_cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut net = ClassifierNet::new(config.clone(), seed)?;
    let train_data = labelled(train, &net)?;
    let val_data = val.map(|v| labelled(v, &net)).transpose()?;
    let mut opt = Sgd::new(train_cfg.sgd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_da7a);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.sgd.rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&PersonStreams> = idx.iter().map(|&i| &train_data[i].0).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_data[i].1).collect();
            let mut g = Graph::new();
            let logits = net.logits(&mut g, &batch)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            loss_sum += g.value(loss)[0] * idx.len() as f64;
            g.backward(loss)?;
            net.params.accumulate_grads(&g);
            opt.step(&mut net.params, lr);
        }
        let (_, train_accuracy) = evaluate(&net, &train_data, 32)?;
        let (val_loss, val_accuracy) = match &val_data {
            Some(v) => {
                let (l, a) = evaluate(&net, v, 32)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let m = EpochMetrics {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy,
            val_loss,
            val_accuracy,
        };
        info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val acc {:?}",
            m.train_loss, m.train_accuracy, m.val_accuracy
        );
        let score = val_accuracy.unwrap_or(train_accuracy);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, net.params.clone()));
        }
        history.push(m);
        if train_cfg.stop_at_full_train_accuracy && train_accuracy >= 1.0 {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            net.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model: net,
        best_epoch,
        history,
    })
}
