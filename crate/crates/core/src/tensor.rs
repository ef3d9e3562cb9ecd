//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and fills in the
//! gradient of every node that depends on a gradient-requiring leaf. Trainable
//! weights live in a [`ParamSet`] and are bound into a fresh graph with
//! [`Graph::param`] for every forward pass; [`ParamSet::accumulate_grads`]
//! copies the graph's gradients back onto them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Argument(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(&shape, &[data.len()], "tensor data length"));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(-bound..=bound))
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(&self.shape, shape, "reshape"));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernels: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    padding: (usize, usize),
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Relu(Var),
    MaxElementwise(Var, Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: usize,
        f_in: usize,
        f_out: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        spans: Vec<usize>,
        inner: usize,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    Resample {
        input: Var,
        channels: usize,
        length: usize,
        inner: usize,
        samples: Vec<Vec<Sample>>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SmoothL1 {
        pred: Var,
        target: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only operation tape. Inputs always precede outputs, so the tape is
/// acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf holding a copy of `t`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a constant leaf that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(shape, &[data.len()], "constant data length"));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Binds a trainable parameter as a gradient-requiring leaf.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let t = params.get(id);
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Gradient of the last `backward` root with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn binary_same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(self.shape(a), self.shape(b), context));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, factor), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(Error::shape(self.shape(a), shape, "reshape"));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, Op::Relu(a), rg)
    }

    /// Element-wise maximum. On ties the first operand is treated as the
    /// winner and receives the whole gradient.
    pub fn max_elementwise(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "max_elementwise")?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::MaxElementwise(a, b), rg))
    }

    /// Folds [`Graph::max_elementwise`] over a non-empty list.
    pub fn max_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Argument("max over an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.max_elementwise(acc, v))
    }

    /// Fully connected layer: `input [B, F_in] · weight [F_in, F_out] (+ bias [F_out])`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (is, ws) = (self.shape(input), self.shape(weight));
        if is.len() != 2 || ws.len() != 2 || is[1] != ws[0] {
            return Err(Error::shape(is, ws, "dense input/weight"));
        }
        let (rows, f_in, f_out) = (is[0], is[1], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [f_out] {
                return Err(Error::shape(self.shape(b), &[f_out], "dense bias"));
            }
        }
        let x = self.value(input);
        let w = self.value(weight);
        let mut out = vec![0.0; rows * f_out];
        for r in 0..rows {
            let orow = &mut out[r * f_out..(r + 1) * f_out];
            for k in 0..f_in {
                let xv = x[r * f_in + k];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w[k * f_out..(k + 1) * f_out];
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            for orow in out.chunks_mut(f_out) {
                orow.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![rows, f_out],
            out,
            Op::Dense {
                input,
                weight,
                bias,
                rows,
                f_in,
                f_out,
            },
            rg,
        ))
    }

    /// 2-D cross-correlation over `input [B, C, H, W]` with `kernel [K, C, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (is, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if is.len() != 4 || ks.len() != 4 || is[1] != ks[1] {
            return Err(Error::shape(&is, &ks, "conv2d input/kernel"));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Argument("conv2d stride must be positive".into()));
        }
        let (ph, pw) = (is[2] + 2 * padding.0, is[3] + 2 * padding.1);
        if ph < ks[2] || pw < ks[3] {
            return Err(Error::shape(&is, &ks, "conv2d kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ks[0]] {
                return Err(Error::shape(self.shape(b), &[ks[0]], "conv2d bias"));
            }
        }
        let geom = ConvGeom {
            batch: is[0],
            channels: is[1],
            height: is[2],
            width: is[3],
            kernels: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            padding,
            out_h: (ph - ks[2]) / stride.0 + 1,
            out_w: (pw - ks[3]) / stride.1 + 1,
        };
        let cols = im2col(self.value(input), &geom);
        let (p, q, k) = (geom.positions(), geom.patch(), geom.kernels);
        let w = self.value(kernel);
        let mut out = vec![0.0; geom.batch * k * p];
        for b in 0..geom.batch {
            let bcols = &cols[b * p * q..(b + 1) * p * q];
            for ki in 0..k {
                let wrow = &w[ki * q..(ki + 1) * q];
                let orow = &mut out[(b * k + ki) * p..(b * k + ki + 1) * p];
                for (pi, o) in orow.iter_mut().enumerate() {
                    let crow = &bcols[pi * q..(pi + 1) * q];
                    let mut acc = 0.0;
                    for (c, wv) in crow.iter().zip(wrow) {
                        acc += c * wv;
                    }
                    *o = acc;
                }
            }
        }
        if let Some(bv) = bias {
            let bv = self.value(bv);
            for b in 0..geom.batch {
                for ki in 0..k {
                    out[(b * k + ki) * p..(b * k + ki + 1) * p]
                        .iter_mut()
                        .for_each(|o| *o += bv[ki]);
                }
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![geom.batch, k, geom.out_h, geom.out_w],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Max pooling over `[B, C, H, W]`; output size `floor((dim - window) / stride) + 1`.
    /// Within a window the first maximal element (row-major) wins.
    pub fn max_pool2d(&mut self, input: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || s[2] < window.0 || s[3] < window.1 || window.0 == 0 || window.1 == 0 {
            return Err(Error::shape(&s, &[window.0, window.1], "max_pool2d window"));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Argument("max_pool2d stride must be positive".into()));
        }
        let (oh, ow) = ((s[2] - window.0) / stride.0 + 1, (s[3] - window.1) / stride.1 + 1);
        let x = self.value(input);
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for plane in 0..planes {
            let base = plane * s[2] * s[3];
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for di in 0..window.0 {
                        for dj in 0..window.1 {
                            let idx = base + (i * stride.0 + di) * s[3] + j * stride.1 + dj;
                            if best == usize::MAX || x[idx] > best_v {
                                best = idx;
                                best_v = x[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(vec![s[0], s[1], oh, ow], out, Op::MaxPool2d { input, argmax }, rg))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Argument("concat of an empty list".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Argument(format!("concat axis {axis} out of range")));
        }
        let mut spans = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape(&base, s, "concat"));
            }
            spans.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = spans.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &span) in inputs.iter().zip(&spans) {
                let chunk = span * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                spans,
                inner,
            },
            rg,
        ))
    }

    /// Picks flat elements `input[indices[j]]` into a tensor of `shape`.
    pub fn gather(&mut self, input: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != indices.len() {
            return Err(Error::shape(shape, &[indices.len()], "gather output"));
        }
        let x = self.value(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Argument(format!(
                "gather index {bad} out of range for {} elements",
                x.len()
            )));
        }
        let out = indices.iter().map(|&i| x[i]).collect();
        let rg = self.rg(input);
        Ok(self.push(
            shape.to_vec(),
            out,
            Op::Gather {
                input,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Linear resampling along axis 1 of `input [C, L, W]`.
    ///
    /// `positions[r][b]` is a continuous index into `0..L` (index `i` is the
    /// centre of cell `i`); positions outside `[0, L-1]` clamp to the edge.
    /// The result has shape `[R, C, B, W]`.
    pub fn linear_resample(&mut self, input: Var, positions: &[Vec<f64>]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (channels, length, inner) = match s.as_slice() {
            [c, l] => (*c, *l, 1),
            [c, l, w] => (*c, *l, *w),
            _ => return Err(Error::shape(&s, &[], "linear_resample expects [C, L] or [C, L, W]")),
        };
        let bins = positions.first().map_or(0, |p| p.len());
        if bins == 0 || positions.iter().any(|p| p.len() != bins) {
            return Err(Error::Argument(
                "resample positions must be a non-empty rectangle".into(),
            ));
        }
        if positions.iter().flatten().any(|u| !u.is_finite()) {
            return Err(Error::Argument("non-finite resample position".into()));
        }
        let samples: Vec<Vec<Sample>> = positions
            .iter()
            .map(|row| row.iter().map(|&u| sample_at(u, length)).collect())
            .collect();
        let x = self.value(input);
        let mut out = Vec::with_capacity(samples.len() * channels * bins * inner);
        for row in &samples {
            for c in 0..channels {
                for sm in row {
                    let lo = &x[(c * length + sm.lo) * inner..(c * length + sm.lo + 1) * inner];
                    let hi = &x[(c * length + sm.hi) * inner..(c * length + sm.hi + 1) * inner];
                    out.extend(lo.iter().zip(hi).map(|(a, b)| a * (1.0 - sm.w_hi) + b * sm.w_hi));
                }
            }
        }
        let rg = self.rg(input);
        let shape = vec![samples.len(), channels, bins, inner];
        let shape = if s.len() == 2 { shape[..3].to_vec() } else { shape };
        Ok(self.push(
            shape,
            out,
            Op::Resample {
                input,
                channels,
                length,
                inner,
                samples,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits [B, C]` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(&s, &[labels.len()], "softmax_cross_entropy logits/labels"));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let probs = softmax_rows(self.value(logits), classes);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -probs[r * classes + l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Weighted smooth-L1 sum: `Σ w·f(pred − target)` with `f(d) = d²/2` for
    /// `|d| < 1` and `|d| − 1/2` otherwise.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, inside_weights: &[f64]) -> Result<Var> {
        self.binary_same_shape(pred, target, "smooth_l1")?;
        if inside_weights.len() != self.value(pred).len() {
            return Err(Error::shape(
                self.shape(pred),
                &[inside_weights.len()],
                "smooth_l1 weights",
            ));
        }
        let loss = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .zip(inside_weights)
            .map(|((p, t), w)| w * smooth_l1_value(p - t))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SmoothL1 {
                pred,
                target,
                weights: inside_weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar root. Gradients from any previous call are
    /// discarded; use [`ParamSet::accumulate_grads`] to keep them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g);
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn send(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Each arm computes the input gradients from immutable borrows first,
        // then hands them to `send`.
        let node = &self.nodes[idx];
        let mut out: Vec<(Var, Vec<f64>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                out.push((*a, g.iter().zip(bv).map(|(g, y)| g * y).collect()));
                out.push((*b, g.iter().zip(av).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(a, f) => out.push((*a, g.iter().map(|x| x * f).collect())),
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Relu(a) => {
                let av = self.value(*a);
                out.push((
                    *a,
                    g.iter().zip(av).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
                ));
            }
            Op::MaxElementwise(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..g.len() {
                    if av[i] >= bv[i] {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Dense {
                input,
                weight,
                bias,
                rows,
                f_in,
                f_out,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (rows, f_in, f_out) = (*rows, *f_in, *f_out);
                if self.rg(*input) {
                    let mut gx = vec![0.0; rows * f_in];
                    for r in 0..rows {
                        let grow = &g[r * f_out..(r + 1) * f_out];
                        for k in 0..f_in {
                            let wrow = &w[k * f_out..(k + 1) * f_out];
                            gx[r * f_in + k] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    out.push((*input, gx));
                }
                if self.rg(*weight) {
                    let mut gw = vec![0.0; f_in * f_out];
                    for r in 0..rows {
                        let grow = &g[r * f_out..(r + 1) * f_out];
                        for k in 0..f_in {
                            let xv = x[r * f_in + k];
                            if xv == 0.0 {
                                continue;
                            }
                            gw[k * f_out..(k + 1) * f_out]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, gv)| *o += xv * gv);
                        }
                    }
                    out.push((*weight, gw));
                }
                if let Some(b) = bias {
                    let mut gb = vec![0.0; f_out];
                    for grow in g.chunks(f_out) {
                        gb.iter_mut().zip(grow).for_each(|(o, gv)| *o += gv);
                    }
                    out.push((*b, gb));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let geom = *geom;
                let (p, q, k) = (geom.positions(), geom.patch(), geom.kernels);
                let w = self.value(*kernel);
                if self.rg(*kernel) {
                    let mut gw = vec![0.0; k * q];
                    for b in 0..geom.batch {
                        let bcols = &cols[b * p * q..(b + 1) * p * q];
                        for ki in 0..k {
                            let grow = &g[(b * k + ki) * p..(b * k + ki + 1) * p];
                            let gwrow = &mut gw[ki * q..(ki + 1) * q];
                            for (pi, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let crow = &bcols[pi * q..(pi + 1) * q];
                                gwrow.iter_mut().zip(crow).for_each(|(o, c)| *o += gv * c);
                            }
                        }
                    }
                    out.push((*kernel, gw));
                }
                if self.rg(*input) {
                    let mut gcols = vec![0.0; geom.batch * p * q];
                    for b in 0..geom.batch {
                        for ki in 0..k {
                            let grow = &g[(b * k + ki) * p..(b * k + ki + 1) * p];
                            let wrow = &w[ki * q..(ki + 1) * q];
                            for (pi, &gv) in grow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let base = (b * p + pi) * q;
                                gcols[base..base + q]
                                    .iter_mut()
                                    .zip(wrow)
                                    .for_each(|(o, wv)| *o += gv * wv);
                            }
                        }
                    }
                    out.push((*input, col2im(&gcols, &geom)));
                }
                if let Some(bv) = bias {
                    let mut gb = vec![0.0; k];
                    for b in 0..geom.batch {
                        for (ki, o) in gb.iter_mut().enumerate() {
                            *o += g[(b * k + ki) * p..(b * k + ki + 1) * p].iter().sum::<f64>();
                        }
                    }
                    out.push((*bv, gb));
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).len()];
                for (&i, gv) in argmax.iter().zip(g) {
                    gx[i] += gv;
                }
                out.push((*input, gx));
            }
            Op::Concat {
                inputs,
                outer,
                spans,
                inner,
            } => {
                let total: usize = spans.iter().sum();
                let mut offset = 0;
                for (&v, &span) in inputs.iter().zip(spans) {
                    let chunk = span * inner;
                    let mut gv = Vec::with_capacity(outer * chunk);
                    for o in 0..*outer {
                        let start = o * total * inner + offset * inner;
                        gv.extend_from_slice(&g[start..start + chunk]);
                    }
                    offset += span;
                    out.push((v, gv));
                }
            }
            Op::Gather { input, indices } => {
                let mut gx = vec![0.0; self.value(*input).len()];
                for (&i, gv) in indices.iter().zip(g) {
                    gx[i] += gv;
                }
                out.push((*input, gx));
            }
            Op::Resample {
                input,
                channels,
                length,
                inner,
                samples,
            } => {
                let (channels, length, inner) = (*channels, *length, *inner);
                let mut gx = vec![0.0; channels * length * inner];
                let mut it = g.chunks(inner);
                for row in samples {
                    for c in 0..channels {
                        for sm in row {
                            let gchunk = it.next().expect("resample gradient length");
                            for (w_i, gv) in gchunk.iter().enumerate() {
                                gx[(c * length + sm.lo) * inner + w_i] += gv * (1.0 - sm.w_hi);
                                gx[(c * length + sm.hi) * inner + w_i] += gv * sm.w_hi;
                            }
                        }
                    }
                }
                out.push((*input, gx));
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let classes = probs.len() / labels.len();
                let scale = g[0] / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * classes + l] -= scale;
                }
                out.push((*logits, gl));
            }
            Op::SmoothL1 { pred, target, weights } => {
                let gp: Vec<f64> = self
                    .value(*pred)
                    .iter()
                    .zip(self.value(*target))
                    .zip(weights)
                    .map(|((p, t), w)| g[0] * w * smooth_l1_slope(p - t))
                    .collect();
                let gt = gp.iter().map(|x| -x).collect();
                out.push((*pred, gp));
                out.push((*target, gt));
            }
        }
        for (v, gv) in out {
            self.send(v, gv);
        }
    }
}

fn sample_at(u: f64, length: usize) -> Sample {
    let max = (length - 1) as f64;
    let u = u.clamp(0.0, max);
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(length - 1);
    Sample {
        lo,
        hi,
        w_hi: if hi == lo { 0.0 } else { u - lo as f64 },
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, q) = (g.positions(), g.patch());
    let mut cols = vec![0.0; g.batch * p * q];
    for b in 0..g.batch {
        for oi in 0..g.out_h {
            for oj in 0..g.out_w {
                let row = (b * p + oi * g.out_w + oj) * q;
                let mut qi = 0;
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * g.height * g.width;
                    for di in 0..g.kh {
                        let ii = (oi * g.stride.0 + di) as isize - g.padding.0 as isize;
                        for dj in 0..g.kw {
                            let jj = (oj * g.stride.1 + dj) as isize - g.padding.1 as isize;
                            if ii >= 0 && jj >= 0 && (ii as usize) < g.height && (jj as usize) < g.width {
                                cols[row + qi] = x[plane + ii as usize * g.width + jj as usize];
                            }
                            qi += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (p, q) = (g.positions(), g.patch());
    let mut x = vec![0.0; g.batch * g.channels * g.height * g.width];
    for b in 0..g.batch {
        for oi in 0..g.out_h {
            for oj in 0..g.out_w {
                let row = (b * p + oi * g.out_w + oj) * q;
                let mut qi = 0;
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * g.height * g.width;
                    for di in 0..g.kh {
                        let ii = (oi * g.stride.0 + di) as isize - g.padding.0 as isize;
                        for dj in 0..g.kw {
                            let jj = (oj * g.stride.1 + dj) as isize - g.padding.1 as isize;
                            if ii >= 0 && jj >= 0 && (ii as usize) < g.height && (jj as usize) < g.width {
                                x[plane + ii as usize * g.width + jj as usize] += cols[row + qi];
                            }
                            qi += 1;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Row-wise numerically stable softmax over a flat `[rows, classes]` buffer.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

pub fn smooth_l1_value(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_slope(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Named collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds the gradients of every parameter-bound node in `graph` onto the
    /// matching tensors. Repeated calls accumulate.
    pub fn accumulate_grads(&mut self, graph: &Graph) {
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Some(id), Some(Some(g))) = (node.param, graph.grads.get(i)) {
                self.tensors[id.0].accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiply the learning rate by `lr_decay` every `lr_step` epochs (0 disables).
    pub lr_step: usize,
    pub lr_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_step: 0,
            lr_decay: 0.1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {} must be ≥ 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Argument("weight decay must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Learning rate after the step-decay schedule at `epoch`.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_step) {
            Some(steps) => self.learning_rate * self.lr_decay.powi(steps as i32),
            None => self.learning_rate,
        }
    }
}

/// Momentum SGD; keeps one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`, then clears all gradients.
    pub fn step(&mut self, params: &mut ParamSet, learning_rate: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        }
        let SgdConfig {
            momentum, weight_decay, ..
        } = self.config;
        for (t, v) in params.tensors.iter_mut().zip(&mut self.velocity) {
            let Some(g) = t.grad.take() else { continue };
            for ((w, vel), gv) in t.data.iter_mut().zip(v.iter_mut()).zip(&g) {
                *vel = momentum * *vel + gv + weight_decay * *w;
                *w -= learning_rate * *vel;
            }
        }
    }
}

/// Kaiming-uniform bound `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn dense_identity_and_hand_product() {
        let mut g = Graph::new();
        let x = g.input(&t(&[1, 2], &[1.0, 2.0]));
        let eye = g.input(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.dense(x, eye, None).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);

        let w = g.input(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.dense(x, w, None).unwrap();
        assert_eq!(g.value(y), &[9.0, 12.0, 15.0]);
    }

    #[test]
    fn dense_shape_error_names_shapes() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(&[1, 3]));
        let w = g.input(&Tensor::zeros(&[2, 2]));
        let err = g.dense(x, w, None).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_identity_and_window_sum() {
        let mut g = Graph::new();
        let img = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let x = g.input(&img);
        let k = g.input(&t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, k, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y), img.data());

        let x = g.input(&t(&[1, 1, 3, 3], &[1.0; 9]));
        let k = g.input(&t(&[1, 1, 3, 3], &[1.0; 9]));
        let y = g.conv2d(x, k, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y), &[9.0]);
    }

    #[test]
    fn conv_output_size_formula() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(&[2, 3, 9, 7]));
        let k = g.input(&Tensor::zeros(&[4, 3, 3, 2]));
        let y = g.conv2d(x, k, None, (2, 1), (1, 0)).unwrap();
        assert_eq!(g.shape(y), &[2, 4, (9 + 2 - 3) / 2 + 1, 7 - 2 + 1]);
        let bad = g.input(&Tensor::zeros(&[4, 2, 3, 3]));
        assert!(matches!(
            g.conv2d(x, bad, None, (1, 1), (0, 0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn max_tie_sends_gradient_to_first() {
        let mut g = Graph::new();
        let a = g.input(&t(&[3], &[1.0, -2.0, 0.5]).with_requires_grad(true));
        let b = g.input(&t(&[3], &[1.0, -2.0, 0.5]).with_requires_grad(true));
        let m = g.max_elementwise(a, b).unwrap();
        assert_eq!(g.value(m), g.value(a));
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0; 3]);
        assert_eq!(g.grad(b).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let mut g = Graph::new();
        let l = g.input(&Tensor::zeros(&[2, 5]));
        let loss = g.softmax_cross_entropy(l, &[0, 3]).unwrap();
        assert!((g.value(loss)[0] - 5f64.ln()).abs() < 1e-12);
        assert!(g.softmax_cross_entropy(l, &[0, 5]).is_err());
    }

    #[test]
    fn smooth_l1_piecewise_values() {
        let mut g = Graph::new();
        let p = g.input(&t(&[2], &[0.5, 2.0]));
        let z = g.input(&Tensor::zeros(&[2]));
        let a = g.smooth_l1(p, z, &[1.0, 0.0]).unwrap();
        let b = g.smooth_l1(p, z, &[0.0, 1.0]).unwrap();
        assert_eq!(g.value(a), &[0.125]);
        assert_eq!(g.value(b), &[1.5]);
    }

    #[test]
    fn backward_sum_gives_ones_and_rejects_non_scalar() {
        let mut params = ParamSet::new();
        let id = params.add("w", t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let mut g = Graph::new();
        let w = g.param(&params, id);
        assert!(matches!(g.backward(w), Err(Error::Usage(_))));
        let s = g.sum(w);
        g.backward(s).unwrap();
        params.accumulate_grads(&g);
        assert_eq!(params.get(id).grad().unwrap(), &[1.0; 4]);
        g.backward(s).unwrap();
        params.accumulate_grads(&g);
        assert_eq!(params.get(id).grad().unwrap(), &[2.0; 4]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5, -0.5, 3.0];
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::zeros(&[3]));
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            ..SgdConfig::default()
        };
        let mut opt = Sgd::new(cfg).unwrap();
        for _ in 0..200 {
            let mut g = Graph::new();
            let w = g.param(&params, id);
            let c = g.constant(&[3], target.to_vec()).unwrap();
            let d = g.sub(w, c).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            params.accumulate_grads(&g);
            opt.step(&mut params, cfg.learning_rate);
        }
        for (w, t) in params.get(id).data().iter().zip(target) {
            assert!((w - t).abs() < 1e-3, "{w} vs {t}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut params = ParamSet::new();
        let id = params.add("w", t(&[2], &[0.3, -0.7]));
        let before = params.clone();
        let mut opt = Sgd::new(SgdConfig {
            learning_rate: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        for _ in 0..5 {
            let mut g = Graph::new();
            let w = g.param(&params, id);
            let loss = g.sum(w);
            g.backward(loss).unwrap();
            params.accumulate_grads(&g);
            opt.step(&mut params, 0.0);
        }
        assert_eq!(params.get(id).data(), before.get(id).data());
    }

    #[test]
    fn resample_identity_at_cell_centres() {
        let mut g = Graph::new();
        let x = g.input(&t(&[2, 3], &[1.0, 2.0, 4.0, -1.0, 0.0, 5.0]));
        let y = g.linear_resample(x, &[vec![0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 3]);
        assert_eq!(g.value(y), g.value(x));
        let mid = g.linear_resample(x, &[vec![0.5, 1.5]]).unwrap();
        assert_eq!(g.value(mid), &[1.5, 3.0, -0.5, 2.5]);
    }

    #[test]
    fn concat_and_gather_roundtrip_values() {
        let mut g = Graph::new();
        let a = g.input(&t(&[1, 1, 2], &[1.0, 2.0]));
        let b = g.input(&t(&[1, 2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 3, 2]);
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let picked = g.gather(c, &[5, 0], &[2]).unwrap();
        assert_eq!(g.value(picked), &[6.0, 1.0]);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = SgdConfig {
            learning_rate: 1.0,
            lr_step: 10,
            lr_decay: 0.5,
            ..SgdConfig::default()
        };
        assert_eq!(cfg.rate_at(9), 1.0);
        assert_eq!(cfg.rate_at(10), 0.5);
        assert_eq!(cfg.rate_at(25), 0.25);
    }
}
