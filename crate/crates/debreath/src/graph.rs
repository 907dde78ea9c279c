//! Reverse-mode automatic differentiation over the layer primitives the
//! network is built from.
//!
//! A [`Graph`] is a flat tape of nodes. Builders run the forward kernel
//! eagerly and record enough context to replay it: [`Graph::recompute`]
//! re-evaluates every node in creation order (reusing stochastic state such
//! as dropout masks), which is what the finite-difference gradient checks
//! lean on, and [`Graph::backward`] walks the tape in reverse accumulating
//! gradients into every node on a `requires_grad` path.
//!
//! Activations are NHWC; convolution kernels are `[kh, kw, c_in, c_out]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sum, Scalar, Tensor};

/// Sigmoid inputs are clamped to this magnitude so the output stays
/// strictly inside (0, 1) even in single precision.
const SIGMOID_CLAMP: f64 = 15.0;

pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<E> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    },
    ConvTranspose2x2 {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    BatchNormTrain {
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        saved_mean: Vec<E>,
        saved_var: Vec<E>,
    },
    BatchNormEval {
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        running_mean: Vec<E>,
        running_var: Vec<E>,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    MaxPool2x2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    UpsampleNearest2x {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<bool>,
        keep: E,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    ScaleByMap {
        map: NodeId,
        x: NodeId,
    },
    MaeLoss {
        y_true: NodeId,
        y_pred: NodeId,
    },
    SpeechLoss {
        y_true: NodeId,
        y_pred: NodeId,
    },
    WeightedSum {
        input: NodeId,
        weights: Vec<E>,
    },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// Tape of values and operations supporting forward re-evaluation and
/// reverse-mode gradient accumulation.
pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to node `id`,
    /// if that node lies on a differentiable path.
    pub fn grad(&self, id: NodeId) -> Option<&[E]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        let requires_grad = value.requires_grad;
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Replace a leaf's values (same shape) for forward re-evaluation.
    pub fn set_leaf(&mut self, id: NodeId, data: &[E]) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Usage("set_leaf on a non-leaf node".into()));
        }
        if data.len() != node.value.len() {
            return Err(Error::Usage("set_leaf length mismatch".into()));
        }
        node.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- builders ------------------------------------------------------

    /// 2-D cross-correlation with "same" zero padding.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let [n, h, w, cin] = self.value(input).dims4()?;
        let [_, _, kcin, cout] = self.value(kernel).dims4()?;
        if kcin != cin {
            return Err(Error::Input(format!(
                "conv2d kernel expects {kcin} input channels, got {cin}"
            )));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::Input(format!(
                "conv2d bias shape {:?} does not match {cout} output channels",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Input("conv2d stride must be >= 1".into()));
        }
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let requires = self.requires(&[input, kernel, bias]);
        let id = self.push(
            Tensor::zeros(vec![n, oh, ow, cout]),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    /// Transposed convolution with a 2x2 kernel and stride 2: doubles both
    /// spatial extents. Kernel layout is `[2, 2, c_in, c_out]`.
    pub fn conv_transpose2x2(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        let [n, h, w, cin] = self.value(input).dims4()?;
        let [kh, kw, kcin, cout] = self.value(kernel).dims4()?;
        if kh != 2 || kw != 2 {
            return Err(Error::Input("transposed conv kernel must be 2x2".into()));
        }
        if kcin != cin {
            return Err(Error::Input(format!(
                "transposed conv kernel expects {kcin} input channels, got {cin}"
            )));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::Input("transposed conv bias shape mismatch".into()));
        }
        let requires = self.requires(&[input, kernel, bias]);
        let id = self.push(
            Tensor::zeros(vec![n, 2 * h, 2 * w, cout]),
            Op::ConvTranspose2x2 {
                input,
                kernel,
                bias,
            },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    /// Per-channel batch normalization.
    ///
    /// Train mode normalizes by batch statistics (saved for the caller via
    /// [`Graph::batch_norm_stats`]); eval mode uses the supplied running
    /// statistics.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        running: Option<(&[E], &[E])>,
        mode: Mode,
    ) -> Result<NodeId> {
        let [_, _, _, c] = self.value(input).dims4()?;
        if self.value(gain).shape() != [c] || self.value(shift).shape() != [c] {
            return Err(Error::Input(format!(
                "batch norm gain/shift must have shape [{c}]"
            )));
        }
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input, gain, shift]);
        let op = match mode {
            Mode::Train => Op::BatchNormTrain {
                input,
                gain,
                shift,
                saved_mean: vec![E::zero(); c],
                saved_var: vec![E::zero(); c],
            },
            Mode::Eval => {
                let (rm, rv) = running.ok_or_else(|| {
                    Error::Usage("eval-mode batch norm needs running statistics".into())
                })?;
                if rm.len() != c || rv.len() != c {
                    return Err(Error::Input(
                        "running statistics length does not match channels".into(),
                    ));
                }
                Op::BatchNormEval {
                    input,
                    gain,
                    shift,
                    running_mean: rm.to_vec(),
                    running_var: rv.to_vec(),
                }
            }
        };
        let id = self.push(Tensor::zeros(shape), op, requires);
        self.compute(id);
        Ok(id)
    }

    /// Batch statistics a train-mode batch norm node computed, for running
    /// stat updates. `None` for other node kinds.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[E], &[E])> {
        match &self.nodes[id.0].op {
            Op::BatchNormTrain {
                saved_mean,
                saved_var,
                ..
            } => Some((saved_mean, saved_var)),
            _ => None,
        }
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input]);
        let id = self.push(Tensor::zeros(shape), Op::Relu { input }, requires);
        self.compute(id);
        id
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let shape = self.value(input).shape().to_vec();
        let requires = self.requires(&[input]);
        let id = self.push(Tensor::zeros(shape), Op::Sigmoid { input }, requires);
        self.compute(id);
        id
    }

    pub fn max_pool2x2(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, h, w, c] = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Input(format!(
                "max pool needs even spatial extents, got {h}x{w}"
            )));
        }
        let requires = self.requires(&[input]);
        let id = self.push(
            Tensor::zeros(vec![n, h / 2, w / 2, c]),
            Op::MaxPool2x2 {
                input,
                argmax: vec![0; n * (h / 2) * (w / 2) * c],
            },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    pub fn upsample_nearest2x(&mut self, input: NodeId) -> Result<NodeId> {
        let [n, h, w, c] = self.value(input).dims4()?;
        let requires = self.requires(&[input]);
        let id = self.push(
            Tensor::zeros(vec![n, 2 * h, 2 * w, c]),
            Op::UpsampleNearest2x { input },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [na, ha, wa, ca] = self.value(a).dims4()?;
        let [nb, hb, wb, cb] = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::Input(format!(
                "concat operands disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let requires = self.requires(&[a, b]);
        let id = self.push(
            Tensor::zeros(vec![na, ha, wa, ca + cb]),
            Op::ConcatChannels { a, b },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    /// Inverted dropout with a mask drawn once from `rng`; the mask stays
    /// fixed across `recompute` and `backward`.
    pub fn dropout(&mut self, input: NodeId, rate: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Input(format!("dropout rate {rate} not in [0, 1)")));
        }
        let len = self.value(input).len();
        let shape = self.value(input).shape().to_vec();
        // Drawn in f64 so the mask is identical across scalar types.
        let mask: Vec<bool> = (0..len).map(|_| rng.gen::<f64>() >= rate).collect();
        let requires = self.requires(&[input]);
        let id = self.push(
            Tensor::zeros(shape),
            Op::Dropout {
                input,
                mask,
                keep: E::from_f64(1.0 - rate),
            },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, true)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, false)
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, is_add: bool) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Input(format!(
                "elementwise operands disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let shape = self.value(a).shape().to_vec();
        let requires = self.requires(&[a, b]);
        let op = if is_add { Op::Add { a, b } } else { Op::Mul { a, b } };
        let id = self.push(Tensor::zeros(shape), op, requires);
        self.compute(id);
        Ok(id)
    }

    /// Multiply a single-channel map into every channel of `x`.
    pub fn scale_by_map(&mut self, map: NodeId, x: NodeId) -> Result<NodeId> {
        let [nm, hm, wm, cm] = self.value(map).dims4()?;
        let [n, h, w, _] = self.value(x).dims4()?;
        if cm != 1 || (nm, hm, wm) != (n, h, w) {
            return Err(Error::Input(format!(
                "attention map shape {:?} does not broadcast over {:?}",
                self.value(map).shape(),
                self.value(x).shape()
            )));
        }
        let shape = self.value(x).shape().to_vec();
        let requires = self.requires(&[map, x]);
        let id = self.push(Tensor::zeros(shape), Op::ScaleByMap { map, x }, requires);
        self.compute(id);
        Ok(id)
    }

    /// Mean absolute error over all entries, as a scalar node.
    pub fn mae_loss(&mut self, y_true: NodeId, y_pred: NodeId) -> Result<NodeId> {
        self.loss_node(y_true, y_pred, true)
    }

    /// Speech-preservation loss 2/N * sum |t^2 - p t|, as a scalar node.
    pub fn speech_loss(&mut self, y_true: NodeId, y_pred: NodeId) -> Result<NodeId> {
        self.loss_node(y_true, y_pred, false)
    }

    /// Scalar dot product of a node with fixed weights. A smooth reduction,
    /// used by the gradient checks to probe any op without the kinks of the
    /// absolute-value losses.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<E>) -> Result<NodeId> {
        if weights.len() != self.value(input).len() {
            return Err(Error::Input(format!(
                "weighted_sum got {} weights for {} values",
                weights.len(),
                self.value(input).len()
            )));
        }
        let requires = self.requires(&[input]);
        let id = self.push(
            Tensor::zeros(vec![1]),
            Op::WeightedSum { input, weights },
            requires,
        );
        self.compute(id);
        Ok(id)
    }

    fn loss_node(&mut self, y_true: NodeId, y_pred: NodeId, mae: bool) -> Result<NodeId> {
        if self.value(y_true).shape() != self.value(y_pred).shape() {
            return Err(Error::Input(format!(
                "loss operands disagree: {:?} vs {:?}",
                self.value(y_true).shape(),
                self.value(y_pred).shape()
            )));
        }
        if !self.value(y_true).all_finite() || !self.value(y_pred).all_finite() {
            return Err(Error::Input("loss operands must be finite".into()));
        }
        let requires = self.requires(&[y_true, y_pred]);
        let op = if mae {
            Op::MaeLoss { y_true, y_pred }
        } else {
            Op::SpeechLoss { y_true, y_pred }
        };
        let id = self.push(Tensor::zeros(vec![1]), op, requires);
        self.compute(id);
        Ok(id)
    }

    // ---- forward -------------------------------------------------------

    /// Re-run the forward pass for every node in creation order. Dropout
    /// masks are reused; data-dependent context (pool argmax, batch
    /// statistics) is refreshed.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            self.compute(NodeId(i));
        }
    }

    fn compute(&mut self, id: NodeId) {
        let (before, rest) = self.nodes.split_at_mut(id.0);
        let node = &mut rest[0];
        let val = |i: NodeId| -> &Tensor<E> { &before[i.0].value };
        match &mut node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            } => {
                conv2d_forward(
                    val(*input),
                    val(*kernel),
                    val(*bias).data(),
                    *stride,
                    &mut node.value,
                );
            }
            Op::ConvTranspose2x2 {
                input,
                kernel,
                bias,
            } => {
                conv_transpose_forward(val(*input), val(*kernel), val(*bias).data(), &mut node.value);
            }
            Op::BatchNormTrain {
                input,
                gain,
                shift,
                saved_mean,
                saved_var,
            } => {
                let x = val(*input);
                let [n, h, w, c] = x.dims4().expect("validated at build");
                let m = (n * h * w) as f64;
                let xd = x.data();
                for ch in 0..c {
                    let mut sum = E::zero();
                    let mut i = ch;
                    while i < xd.len() {
                        sum += xd[i];
                        i += c;
                    }
                    let mean = sum / E::from_f64(m);
                    let mut var = E::zero();
                    let mut i = ch;
                    while i < xd.len() {
                        let d = xd[i] - mean;
                        var += d * d;
                        i += c;
                    }
                    saved_mean[ch] = mean;
                    saved_var[ch] = var / E::from_f64(m);
                }
                let g = val(*gain).data();
                let b = val(*shift).data();
                let eps = E::from_f64(BATCH_NORM_EPS);
                let out = node.value.data_mut();
                for (i, o) in out.iter_mut().enumerate() {
                    let ch = i % c;
                    let inv = (saved_var[ch] + eps).sqrt().recip();
                    *o = g[ch] * (xd[i] - saved_mean[ch]) * inv + b[ch];
                }
            }
            Op::BatchNormEval {
                input,
                gain,
                shift,
                running_mean,
                running_var,
            } => {
                let x = val(*input);
                let [_, _, _, c] = x.dims4().expect("validated at build");
                let xd = x.data();
                let g = val(*gain).data();
                let b = val(*shift).data();
                let eps = E::from_f64(BATCH_NORM_EPS);
                let out = node.value.data_mut();
                for (i, o) in out.iter_mut().enumerate() {
                    let ch = i % c;
                    let inv = (running_var[ch] + eps).sqrt().recip();
                    *o = g[ch] * (xd[i] - running_mean[ch]) * inv + b[ch];
                }
            }
            Op::Relu { input } => {
                let x = val(*input).data();
                for (o, &v) in node.value.data_mut().iter_mut().zip(x) {
                    *o = if v > E::zero() { v } else { E::zero() };
                }
            }
            Op::Sigmoid { input } => {
                let x = val(*input).data();
                let clamp = E::from_f64(SIGMOID_CLAMP);
                for (o, &v) in node.value.data_mut().iter_mut().zip(x) {
                    let z = v.max(-clamp).min(clamp);
                    *o = E::one() / (E::one() + (-z).exp());
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                let x = val(*input);
                let [n, h, w, c] = x.dims4().expect("validated at build");
                let xd = x.data();
                let out = node.value.data_mut();
                let (oh, ow) = (h / 2, w / 2);
                let mut oi = 0;
                for b in 0..n {
                    for i in 0..oh {
                        for j in 0..ow {
                            for ch in 0..c {
                                let mut best_idx = ((b * h + 2 * i) * w + 2 * j) * c + ch;
                                let mut best = xd[best_idx];
                                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                                    if xd[idx] > best {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                                out[oi] = best;
                                argmax[oi] = best_idx;
                                oi += 1;
                            }
                        }
                    }
                }
            }
            Op::UpsampleNearest2x { input } => {
                let x = val(*input);
                let [n, h, w, c] = x.dims4().expect("validated at build");
                let xd = x.data();
                let out = node.value.data_mut();
                for b in 0..n {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            let src = ((b * h + i / 2) * w + j / 2) * c;
                            let dst = ((b * 2 * h + i) * 2 * w + j) * c;
                            out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let ta = val(*a);
                let tb = val(*b);
                let [n, h, w, ca] = ta.dims4().expect("validated at build");
                let cb = tb.shape()[3];
                let out = node.value.data_mut();
                for pos in 0..n * h * w {
                    let dst = pos * (ca + cb);
                    out[dst..dst + ca].copy_from_slice(&ta.data()[pos * ca..(pos + 1) * ca]);
                    out[dst + ca..dst + ca + cb]
                        .copy_from_slice(&tb.data()[pos * cb..(pos + 1) * cb]);
                }
            }
            Op::Dropout { input, mask, keep } => {
                let x = val(*input).data();
                let k = *keep;
                for ((o, &v), &m) in node.value.data_mut().iter_mut().zip(x).zip(mask.iter()) {
                    *o = if m { v / k } else { E::zero() };
                }
            }
            Op::Add { a, b } => {
                let (xa, xb) = (val(*a).data(), val(*b).data());
                for ((o, &u), &v) in node.value.data_mut().iter_mut().zip(xa).zip(xb) {
                    *o = u + v;
                }
            }
            Op::Mul { a, b } => {
                let (xa, xb) = (val(*a).data(), val(*b).data());
                for ((o, &u), &v) in node.value.data_mut().iter_mut().zip(xa).zip(xb) {
                    *o = u * v;
                }
            }
            Op::ScaleByMap { map, x } => {
                let a = val(*map);
                let t = val(*x);
                let c = t.shape()[3];
                let out = node.value.data_mut();
                for (pos, &alpha) in a.data().iter().enumerate() {
                    for ch in 0..c {
                        out[pos * c + ch] = alpha * t.data()[pos * c + ch];
                    }
                }
            }
            Op::MaeLoss { y_true, y_pred } => {
                let (t, p) = (val(*y_true).data(), val(*y_pred).data());
                let n = E::from_f64(t.len() as f64);
                let sum = pairwise_sum(t.len(), &|i| (t[i] - p[i]).abs());
                node.value.data_mut()[0] = sum / n;
            }
            Op::SpeechLoss { y_true, y_pred } => {
                let (t, p) = (val(*y_true).data(), val(*y_pred).data());
                let n = E::from_f64(t.len() as f64);
                let sum = pairwise_sum(t.len(), &|i| (t[i] * t[i] - p[i] * t[i]).abs());
                node.value.data_mut()[0] = E::from_f64(2.0) * sum / n;
            }
            Op::WeightedSum { input, weights } => {
                let x = val(*input).data();
                node.value.data_mut()[0] = pairwise_sum(x.len(), &|i| x[i] * weights[i]);
            }
        }
    }

    // ---- backward ------------------------------------------------------

    /// Populate gradients of `loss` with respect to every node on a
    /// `requires_grad` path. Parameters not reachable from the loss keep a
    /// zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward target must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![E::one()]);

        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.grads[i].take().expect("checked above");
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }

        // Unreached trainable leaves get explicit zeros.
        for i in 0..self.nodes.len() {
            if self.nodes[i].requires_grad
                && matches!(self.nodes[i].op, Op::Leaf)
                && self.grads[i].is_none()
            {
                self.grads[i] = Some(vec![E::zero(); self.nodes[i].value.len()]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, parent: NodeId, contribution: Vec<E>) {
        if !self.nodes[parent.0].requires_grad {
            return;
        }
        match &mut self.grads[parent.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, g: &[E]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            } => {
                let (input, kernel, bias, stride) = (*input, *kernel, *bias, *stride);
                let (d_in, d_k, d_b) = conv2d_backward(
                    self.value(input),
                    self.value(kernel),
                    stride,
                    g,
                    self.nodes[i].value.shape(),
                );
                self.accumulate(input, d_in);
                self.accumulate(kernel, d_k);
                self.accumulate(bias, d_b);
            }
            Op::ConvTranspose2x2 {
                input,
                kernel,
                bias,
            } => {
                let (input, kernel, bias) = (*input, *kernel, *bias);
                let (d_in, d_k, d_b) =
                    conv_transpose_backward(self.value(input), self.value(kernel), g);
                self.accumulate(input, d_in);
                self.accumulate(kernel, d_k);
                self.accumulate(bias, d_b);
            }
            Op::BatchNormTrain {
                input,
                gain,
                shift,
                saved_mean,
                saved_var,
            } => {
                let (input, gain, shift) = (*input, *gain, *shift);
                let x = self.value(input);
                let [n, h, w, c] = x.dims4().expect("validated at build");
                let m = E::from_f64((n * h * w) as f64);
                let eps = E::from_f64(BATCH_NORM_EPS);
                let xd = x.data();
                let gd = self.value(gain).data();

                let mut d_in = vec![E::zero(); xd.len()];
                let mut d_gain = vec![E::zero(); c];
                let mut d_shift = vec![E::zero(); c];
                for ch in 0..c {
                    let mean = saved_mean[ch];
                    let inv = (saved_var[ch] + eps).sqrt().recip();
                    // Accumulate sum(dy) and sum(dy * xhat) for the channel.
                    let mut sum_dy = E::zero();
                    let mut sum_dy_xhat = E::zero();
                    let mut i2 = ch;
                    while i2 < xd.len() {
                        let xhat = (xd[i2] - mean) * inv;
                        sum_dy += g[i2];
                        sum_dy_xhat += g[i2] * xhat;
                        i2 += c;
                    }
                    d_gain[ch] = sum_dy_xhat;
                    d_shift[ch] = sum_dy;
                    let mean_dy = sum_dy / m;
                    let mean_dy_xhat = sum_dy_xhat / m;
                    let scale = gd[ch] * inv;
                    let mut i2 = ch;
                    while i2 < xd.len() {
                        let xhat = (xd[i2] - mean) * inv;
                        d_in[i2] = scale * (g[i2] - mean_dy - xhat * mean_dy_xhat);
                        i2 += c;
                    }
                }
                self.accumulate(input, d_in);
                self.accumulate(gain, d_gain);
                self.accumulate(shift, d_shift);
            }
            Op::BatchNormEval {
                input,
                gain,
                shift,
                running_mean,
                running_var,
            } => {
                let (input, gain, shift) = (*input, *gain, *shift);
                let x = self.value(input);
                let [_, _, _, c] = x.dims4().expect("validated at build");
                let eps = E::from_f64(BATCH_NORM_EPS);
                let xd = x.data();
                let gd = self.value(gain).data();
                let mut d_in = vec![E::zero(); xd.len()];
                let mut d_gain = vec![E::zero(); c];
                let mut d_shift = vec![E::zero(); c];
                for (i2, &dy) in g.iter().enumerate() {
                    let ch = i2 % c;
                    let inv = (running_var[ch] + eps).sqrt().recip();
                    d_in[i2] = dy * gd[ch] * inv;
                    d_gain[ch] += dy * (xd[i2] - running_mean[ch]) * inv;
                    d_shift[ch] += dy;
                }
                self.accumulate(input, d_in);
                self.accumulate(gain, d_gain);
                self.accumulate(shift, d_shift);
            }
            Op::Relu { input } => {
                let input = *input;
                let x = self.value(input).data();
                let d: Vec<E> = g
                    .iter()
                    .zip(x)
                    .map(|(&dy, &v)| if v > E::zero() { dy } else { E::zero() })
                    .collect();
                self.accumulate(input, d);
            }
            Op::Sigmoid { input } => {
                let input = *input;
                let clamp = E::from_f64(SIGMOID_CLAMP);
                let x = self.value(input).data();
                let y = self.nodes[i].value.data();
                let d: Vec<E> = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&dy, (&z, &s))| {
                        if z.abs() >= clamp {
                            E::zero()
                        } else {
                            dy * s * (E::one() - s)
                        }
                    })
                    .collect();
                self.accumulate(input, d);
            }
            Op::MaxPool2x2 { input, argmax } => {
                let input = *input;
                let mut d = vec![E::zero(); self.value(input).len()];
                for (oi, &src) in argmax.iter().enumerate() {
                    d[src] += g[oi];
                }
                self.accumulate(input, d);
            }
            Op::UpsampleNearest2x { input } => {
                let input = *input;
                let x = self.value(input);
                let [n, h, w, c] = x.dims4().expect("validated at build");
                let mut d = vec![E::zero(); x.len()];
                for b in 0..n {
                    for i2 in 0..2 * h {
                        for j in 0..2 * w {
                            let src = ((b * h + i2 / 2) * w + j / 2) * c;
                            let dst = ((b * 2 * h + i2) * 2 * w + j) * c;
                            for ch in 0..c {
                                d[src + ch] += g[dst + ch];
                            }
                        }
                    }
                }
                self.accumulate(input, d);
            }
            Op::ConcatChannels { a, b } => {
                let (a, b) = (*a, *b);
                let ca = self.value(a).shape()[3];
                let cb = self.value(b).shape()[3];
                let positions = self.value(a).len() / ca;
                let mut da = vec![E::zero(); self.value(a).len()];
                let mut db = vec![E::zero(); self.value(b).len()];
                for pos in 0..positions {
                    let src = pos * (ca + cb);
                    da[pos * ca..(pos + 1) * ca].copy_from_slice(&g[src..src + ca]);
                    db[pos * cb..(pos + 1) * cb].copy_from_slice(&g[src + ca..src + ca + cb]);
                }
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Dropout { input, mask, keep } => {
                let input = *input;
                let keep = *keep;
                let d: Vec<E> = g
                    .iter()
                    .zip(mask)
                    .map(|(&dy, &m)| if m { dy / keep } else { E::zero() })
                    .collect();
                self.accumulate(input, d);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let da: Vec<E> = g
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&dy, &v)| dy * v)
                    .collect();
                let db: Vec<E> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&dy, &v)| dy * v)
                    .collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::ScaleByMap { map, x } => {
                let (map, x) = (*map, *x);
                let c = self.value(x).shape()[3];
                let alpha = self.value(map).data();
                let xd = self.value(x).data();
                let mut d_map = vec![E::zero(); alpha.len()];
                let mut d_x = vec![E::zero(); xd.len()];
                for pos in 0..alpha.len() {
                    for ch in 0..c {
                        let idx = pos * c + ch;
                        d_map[pos] += g[idx] * xd[idx];
                        d_x[idx] = g[idx] * alpha[pos];
                    }
                }
                self.accumulate(map, d_map);
                self.accumulate(x, d_x);
            }
            Op::MaeLoss { y_true, y_pred } => {
                let (y_true, y_pred) = (*y_true, *y_pred);
                let t = self.value(y_true).data();
                let p = self.value(y_pred).data();
                let scale = g[0] / E::from_f64(t.len() as f64);
                // Subgradient at ties is 0 so backward stays deterministic.
                let d_p: Vec<E> = t
                    .iter()
                    .zip(p)
                    .map(|(&tv, &pv)| scale * sign(pv - tv))
                    .collect();
                let d_t: Vec<E> = t
                    .iter()
                    .zip(p)
                    .map(|(&tv, &pv)| scale * sign(tv - pv))
                    .collect();
                self.accumulate(y_pred, d_p);
                self.accumulate(y_true, d_t);
            }
            Op::SpeechLoss { y_true, y_pred } => {
                let (y_true, y_pred) = (*y_true, *y_pred);
                let t = self.value(y_true).data();
                let p = self.value(y_pred).data();
                let scale = g[0] * E::from_f64(2.0) / E::from_f64(t.len() as f64);
                let d_p: Vec<E> = t
                    .iter()
                    .zip(p)
                    .map(|(&tv, &pv)| -scale * tv * sign(tv * tv - pv * tv))
                    .collect();
                let d_t: Vec<E> = t
                    .iter()
                    .zip(p)
                    .map(|(&tv, &pv)| {
                        scale * sign(tv * tv - pv * tv) * (tv + tv - pv)
                    })
                    .collect();
                self.accumulate(y_pred, d_p);
                self.accumulate(y_true, d_t);
            }
            Op::WeightedSum { input, weights } => {
                let input = *input;
                let d: Vec<E> = weights.iter().map(|&w| g[0] * w).collect();
                self.accumulate(input, d);
            }
        }
    }
}

fn sign<E: Scalar>(v: E) -> E {
    if v > E::zero() {
        E::one()
    } else if v < E::zero() {
        -E::one()
    } else {
        E::zero()
    }
}

fn same_padding(extent: usize, kernel: usize, stride: usize) -> usize {
    let out = extent.div_ceil(stride);
    ((out - 1) * stride + kernel).saturating_sub(extent) / 2
}

fn conv2d_forward<E: Scalar>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &[E],
    stride: usize,
    out: &mut Tensor<E>,
) {
    let [n, h, w, cin] = input.dims4().expect("validated at build");
    let [kh, kw, _, cout] = kernel.dims4().expect("validated at build");
    let [_, oh, ow, _] = out.dims4().expect("shape set at build");
    let ph = same_padding(h, kh, stride);
    let pw = same_padding(w, kw, stride);
    let xd = input.data();
    let kd = kernel.data();
    let od = out.data_mut();

    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let base = ((b * oh + i) * ow + j) * cout;
                od[base..base + cout].copy_from_slice(bias);
                for ki in 0..kh {
                    let ih = (i * stride + ki) as isize - ph as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    for kj in 0..kw {
                        let iw = (j * stride + kj) as isize - pw as isize;
                        if iw < 0 || iw as usize >= w {
                            continue;
                        }
                        let xoff = ((b * h + ih as usize) * w + iw as usize) * cin;
                        let koff = (ki * kw + kj) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xoff + ci];
                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            for (o, &kv) in od[base..base + cout].iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::type_complexity)]
fn conv2d_backward<E: Scalar>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    g: &[E],
    out_shape: &[usize],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let [n, h, w, cin] = input.dims4().expect("validated at build");
    let [kh, kw, _, cout] = kernel.dims4().expect("validated at build");
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let ph = same_padding(h, kh, stride);
    let pw = same_padding(w, kw, stride);
    let xd = input.data();
    let kd = kernel.data();
    let mut d_in = vec![E::zero(); xd.len()];
    let mut d_k = vec![E::zero(); kd.len()];
    let mut d_b = vec![E::zero(); cout];

    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let base = ((b * oh + i) * ow + j) * cout;
                let gout = &g[base..base + cout];
                for (co, &gv) in gout.iter().enumerate() {
                    d_b[co] += gv;
                }
                for ki in 0..kh {
                    let ih = (i * stride + ki) as isize - ph as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    for kj in 0..kw {
                        let iw = (j * stride + kj) as isize - pw as isize;
                        if iw < 0 || iw as usize >= w {
                            continue;
                        }
                        let xoff = ((b * h + ih as usize) * w + iw as usize) * cin;
                        let koff = (ki * kw + kj) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xoff + ci];
                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            let mut dx = E::zero();
                            for ((&gv, &kv), dk) in gout
                                .iter()
                                .zip(krow)
                                .zip(&mut d_k[koff + ci * cout..koff + (ci + 1) * cout])
                            {
                                dx += gv * kv;
                                *dk += gv * xv;
                            }
                            d_in[xoff + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k, d_b)
}

fn conv_transpose_forward<E: Scalar>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &[E],
    out: &mut Tensor<E>,
) {
    let [n, h, w, cin] = input.dims4().expect("validated at build");
    let cout = kernel.shape()[3];
    let xd = input.data();
    let kd = kernel.data();
    let od = out.data_mut();
    // Stride equals the kernel size, so each output cell receives exactly
    // one (di, dj) contribution.
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let xoff = ((b * h + i) * w + j) * cin;
                for di in 0..2 {
                    for dj in 0..2 {
                        let obase = ((b * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * cout;
                        od[obase..obase + cout].copy_from_slice(bias);
                        let koff = (di * 2 + dj) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xoff + ci];
                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            for (o, &kv) in od[obase..obase + cout].iter_mut().zip(krow) {
                                *o += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_transpose_backward<E: Scalar>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    g: &[E],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let [n, h, w, cin] = input.dims4().expect("validated at build");
    let cout = kernel.shape()[3];
    let xd = input.data();
    let kd = kernel.data();
    let mut d_in = vec![E::zero(); xd.len()];
    let mut d_k = vec![E::zero(); kd.len()];
    let mut d_b = vec![E::zero(); cout];

    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let xoff = ((b * h + i) * w + j) * cin;
                for di in 0..2 {
                    for dj in 0..2 {
                        let obase = ((b * 2 * h + 2 * i + di) * 2 * w + 2 * j + dj) * cout;
                        let gout = &g[obase..obase + cout];
                        for (co, &gv) in gout.iter().enumerate() {
                            d_b[co] += gv;
                        }
                        let koff = (di * 2 + dj) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xoff + ci];
                            let krow = &kd[koff + ci * cout..koff + (ci + 1) * cout];
                            let mut dx = E::zero();
                            for ((&gv, &kv), dk) in gout
                                .iter()
                                .zip(krow)
                                .zip(&mut d_k[koff + ci * cout..koff + (ci + 1) * cout])
                            {
                                dx += gv * kv;
                                *dk += gv * xv;
                            }
                            d_in[xoff + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k, d_b)
}
