//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every forward operation as a node; [`Tape::backward`]
//! walks the nodes in reverse and accumulates exact gradients into the
//! [`ParameterSet`]s whose parameters entered the tape as trainable leaves.
//! The tape is rebuilt on every forward pass, which keeps alternating
//! generator/discriminator updates trivially correct: whichever side should
//! stay fixed enters the next tape as a constant.

use crate::error::{Error, Result};
use crate::kernels;
use crate::optim::ParameterSet;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before any logarithm.
pub const PROB_EPS: f32 = 1e-7;

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter leaf; parameters carry their origin.
    Leaf { origin: Option<(u64, usize)> },
    Add(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
    },
    Relu(usize),
    LeakyRelu { input: usize, slope: f32 },
    SoftmaxChannels(usize),
    Sigmoid(usize),
    UpsampleNearest2x(usize),
    Sum(usize),
    Mean(usize),
    /// ln(max(x, PROB_EPS)); gradient is zero in the clamped region.
    ClampLog(usize),
    OneMinus(usize),
    Neg(usize),
    Scale { input: usize, factor: f32 },
    /// [C,H,W] -> [1,H,W] sum over the class axis.
    ChannelSum(usize),
    /// Rank-1 concatenation.
    Concat(Vec<usize>),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

static NEXT_TAPE_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node. Panics on a handle from another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "Var used on the wrong tape");
        &self.nodes[v.idx].value
    }

    fn check(&self, v: Var, what: &str) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "{what}: value was not recorded on this tape"
            )));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        value.check_finite(what)?;
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Records a value that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf { origin: None }, "constant")
    }

    /// Records a named parameter as a trainable leaf. `backward` will
    /// accumulate its gradient into the owning set.
    pub fn param(&mut self, set: &ParameterSet, name: &str) -> Result<Var> {
        let idx = set.position(name)?;
        let value = set.value_at(idx).clone();
        self.push(
            value,
            Op::Leaf {
                origin: Some((set.id(), idx)),
            },
            "param",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a, "add")?, self.check(b, "add")?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Add(ia, ib), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a, "mul")?, self.check(b, "mul")?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Mul(ia, ib), "mul")
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a, "matmul")?, self.check(b, "matmul")?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = match (ta.shape(), tb.shape()) {
            ([m, k], [k2, n]) if k == k2 => {
                Tensor::new(vec![*m, *n], kernels::matmul(ta.data(), tb.data(), *m, *k, *n))?
            }
            ([m, k], [k2]) if k == k2 => {
                Tensor::new(vec![*m], kernels::matmul(ta.data(), tb.data(), *m, *k, 1))?
            }
            (sa, sb) => {
                return Err(Error::Dimension(format!("matmul: {sa:?} x {sb:?}")));
            }
        };
        self.push(value, Op::MatMul(ia, ib), "matmul")
    }

    /// 3x3 convolution, zero padding 1, stride 1 or 2.
    /// input `[ci,h,w]`, weight `[co,ci,3,3]`, bias `[co]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride != 1 && stride != 2 {
            return Err(Error::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let ii = self.check(input, "conv2d")?;
        let iw = self.check(weight, "conv2d")?;
        let ib = self.check(bias, "conv2d")?;
        let (ts, ws, bs) = (
            self.nodes[ii].value.shape().to_vec(),
            self.nodes[iw].value.shape().to_vec(),
            self.nodes[ib].value.shape().to_vec(),
        );
        let ([ci, h, w], [co, wci, kh, kw], [bco]) = (&ts[..], &ws[..], &bs[..]) else {
            return Err(Error::Dimension(format!(
                "conv2d: input {ts:?}, weight {ws:?}, bias {bs:?}"
            )));
        };
        if wci != ci || *kh != 3 || *kw != 3 || bco != co {
            return Err(Error::Dimension(format!(
                "conv2d: input {ts:?} incompatible with weight {ws:?} / bias {bs:?}"
            )));
        }
        let out = kernels::conv2d(
            self.nodes[ii].value.data(),
            *ci,
            *h,
            *w,
            self.nodes[iw].value.data(),
            self.nodes[ib].value.data(),
            *co,
            stride,
        );
        let oh = kernels::conv_out_dim(*h, stride);
        let ow = kernels::conv_out_dim(*w, stride);
        let value = Tensor::new(vec![*co, oh, ow], out)?;
        self.push(
            value,
            Op::Conv2d {
                input: ii,
                weight: iw,
                bias: ib,
                stride,
            },
            "conv2d",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "relu")?;
        let t = &self.nodes[ix].value;
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Relu(ix), "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        let ix = self.check(x, "leaky_relu")?;
        let t = &self.nodes[ix].value;
        let data = t
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::LeakyRelu { input: ix, slope }, "leaky_relu")
    }

    /// Per-pixel softmax across the class axis of `[C,H,W]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "softmax_channels")?;
        let t = &self.nodes[ix].value;
        let [c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "softmax_channels expects [C,H,W], got {:?}",
                t.shape()
            )));
        };
        let (c, hw) = (*c, h * w);
        let src = t.data();
        let mut data = vec![0.0f32; c * hw];
        for p in 0..hw {
            let mut max = f32::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(src[ch * hw + p]);
            }
            let mut sum = 0.0f32;
            for ch in 0..c {
                let e = (src[ch * hw + p] - max).exp();
                data[ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                data[ch * hw + p] /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::SoftmaxChannels(ix), "softmax_channels")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "sigmoid")?;
        let t = &self.nodes[ix].value;
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Sigmoid(ix), "sigmoid")
    }

    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "upsample_nearest_2x")?;
        let t = &self.nodes[ix].value;
        let [c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "upsample_nearest_2x expects [C,H,W], got {:?}",
                t.shape()
            )));
        };
        let data = kernels::upsample2x(t.data(), *c, *h, *w);
        let value = Tensor::new(vec![*c, h * 2, w * 2], data)?;
        self.push(value, Op::UpsampleNearest2x(ix), "upsample_nearest_2x")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "sum")?;
        let s: f32 = self.nodes[ix].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ix), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "mean")?;
        let t = &self.nodes[ix].value;
        let s: f32 = t.data().iter().sum::<f32>() / t.numel() as f32;
        self.push(Tensor::scalar(s), Op::Mean(ix), "mean")
    }

    pub fn clamp_log(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "clamp_log")?;
        let t = &self.nodes[ix].value;
        let data = t.data().iter().map(|&v| v.max(PROB_EPS).ln()).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::ClampLog(ix), "clamp_log")
    }

    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "one_minus")?;
        let t = &self.nodes[ix].value;
        let data = t.data().iter().map(|v| 1.0 - v).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::OneMinus(ix), "one_minus")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "neg")?;
        let t = &self.nodes[ix].value;
        let data = t.data().iter().map(|v| -v).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Neg(ix), "neg")
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        if !factor.is_finite() {
            return Err(Error::Numeric(format!("scale factor {factor} not finite")));
        }
        let ix = self.check(x, "scale")?;
        let t = &self.nodes[ix].value;
        let data = t.data().iter().map(|v| factor * v).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push(value, Op::Scale { input: ix, factor }, "scale")
    }

    /// `[C,H,W] -> [1,H,W]` sum over classes.
    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x, "channel_sum")?;
        let t = &self.nodes[ix].value;
        let [c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "channel_sum expects [C,H,W], got {:?}",
                t.shape()
            )));
        };
        let hw = h * w;
        let mut data = vec![0.0f32; hw];
        for ch in 0..*c {
            let plane = &t.data()[ch * hw..][..hw];
            for (d, v) in data.iter_mut().zip(plane) {
                *d += *v;
            }
        }
        let value = Tensor::new(vec![1, *h, *w], data)?;
        self.push(value, Op::ChannelSum(ix), "channel_sum")
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        let mut idxs = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for (k, &p) in parts.iter().enumerate() {
            let ip = self.check(p, "concat")?;
            let t = &self.nodes[ip].value;
            if t.rank() != 1 {
                return Err(Error::Dimension(format!(
                    "concat expects rank-1 parts, part {k} has shape {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
            idxs.push(ip);
        }
        let value = Tensor::new(vec![data.len()], data)?;
        self.push(value, Op::Concat(idxs), "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let ix = self.check(x, "reshape")?;
        let value = self.nodes[ix].value.reshaped(shape)?;
        self.push(value, Op::Reshape(ix), "reshape")
    }

    /// Reverse pass from a scalar loss. Every trainable leaf that influenced
    /// the loss gets its gradient accumulated into the owning set in `sinks`;
    /// leaves that did not influence it are left untouched (zero gradient).
    pub fn backward(&mut self, loss: Var, sinks: &mut [&mut ParameterSet]) -> Result<()> {
        let il = self.check(loss, "backward")?;
        if self.nodes[il].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf { origin: None } => {}
                Op::Leaf {
                    origin: Some((set_id, pidx)),
                } => {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric("non-finite parameter gradient".into()));
                    }
                    let sink = sinks
                        .iter_mut()
                        .find(|s| s.id() == *set_id)
                        .ok_or_else(|| {
                            Error::Usage(
                                "trainable leaf reached in backward but its ParameterSet \
                                 was not passed as a sink"
                                    .into(),
                            )
                        })?;
                    sink.accumulate_grad(*pidx, &g);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    });
                    accumulate(&mut grads, b, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    accumulate(&mut grads, a, &self.nodes, |buf| {
                        for ((d, gv), y) in buf.iter_mut().zip(&g).zip(vb) {
                            *d += *gv * *y;
                        }
                    });
                    accumulate(&mut grads, b, &self.nodes, |buf| {
                        for ((d, gv), x) in buf.iter_mut().zip(&g).zip(va) {
                            *d += *gv * *x;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa = self.nodes[a].value.shape();
                    let (m, k) = (sa[0], sa[1]);
                    let n = if self.nodes[b].value.rank() == 2 {
                        self.nodes[b].value.shape()[1]
                    } else {
                        1
                    };
                    let (da, db) = kernels::matmul_backward(
                        self.nodes[a].value.data(),
                        self.nodes[b].value.data(),
                        m,
                        k,
                        n,
                        &g,
                    );
                    accumulate(&mut grads, a, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&da) {
                            *d += *v;
                        }
                    });
                    accumulate(&mut grads, b, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&db) {
                            *d += *v;
                        }
                    });
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                } => {
                    let (input, weight, bias, stride) = (*input, *weight, *bias, *stride);
                    let ts = self.nodes[input].value.shape();
                    let (ci, h, w) = (ts[0], ts[1], ts[2]);
                    let co = self.nodes[weight].value.shape()[0];
                    let (di, dw, db) = kernels::conv2d_backward(
                        self.nodes[input].value.data(),
                        ci,
                        h,
                        w,
                        self.nodes[weight].value.data(),
                        co,
                        stride,
                        &g,
                    );
                    accumulate(&mut grads, input, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&di) {
                            *d += *v;
                        }
                    });
                    accumulate(&mut grads, weight, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&dw) {
                            *d += *v;
                        }
                    });
                    accumulate(&mut grads, bias, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&db) {
                            *d += *v;
                        }
                    });
                }
                Op::Relu(x) => {
                    let x = *x;
                    let vx = self.nodes[x].value.data();
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for ((d, gv), v) in buf.iter_mut().zip(&g).zip(vx) {
                            if *v > 0.0 {
                                *d += *gv;
                            }
                        }
                    });
                }
                Op::LeakyRelu { input, slope } => {
                    let (x, slope) = (*input, *slope);
                    let vx = self.nodes[x].value.data();
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for ((d, gv), v) in buf.iter_mut().zip(&g).zip(vx) {
                            *d += *gv * if *v > 0.0 { 1.0 } else { slope };
                        }
                    });
                }
                Op::SoftmaxChannels(x) => {
                    let x = *x;
                    let shape = self.nodes[i].value.shape();
                    let (c, hw) = (shape[0], shape[1] * shape[2]);
                    let p = self.nodes[i].value.data();
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for px in 0..hw {
                            let mut dot = 0.0f32;
                            for ch in 0..c {
                                dot += g[ch * hw + px] * p[ch * hw + px];
                            }
                            for ch in 0..c {
                                buf[ch * hw + px] += p[ch * hw + px] * (g[ch * hw + px] - dot);
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = self.nodes[i].value.data();
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for ((d, gv), s) in buf.iter_mut().zip(&g).zip(y) {
                            *d += *gv * *s * (1.0 - *s);
                        }
                    });
                }
                Op::UpsampleNearest2x(x) => {
                    let x = *x;
                    let s = self.nodes[x].value.shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let di = kernels::upsample2x_backward(&g, c, h, w);
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for (d, v) in buf.iter_mut().zip(&di) {
                            *d += *v;
                        }
                    });
                }
                Op::Sum(x) => {
                    let x = *x;
                    let gv = g[0];
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for d in buf.iter_mut() {
                            *d += gv;
                        }
                    });
                }
                Op::Mean(x) => {
                    let x = *x;
                    let gv = g[0] / self.nodes[x].value.numel() as f32;
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for d in buf.iter_mut() {
                            *d += gv;
                        }
                    });
                }
                Op::ClampLog(x) => {
                    let x = *x;
                    let vx = self.nodes[x].value.data();
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for ((d, gv), v) in buf.iter_mut().zip(&g).zip(vx) {
                            if *v >= PROB_EPS {
                                *d += *gv / *v;
                            }
                        }
                    });
                }
                Op::OneMinus(x) => {
                    let x = *x;
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d -= *gv;
                        }
                    });
                }
                Op::Neg(x) => {
                    let x = *x;
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d -= *gv;
                        }
                    });
                }
                Op::Scale { input, factor } => {
                    let (x, k) = (*input, *factor);
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d += k * *gv;
                        }
                    });
                }
                Op::ChannelSum(x) => {
                    let x = *x;
                    let s = self.nodes[x].value.shape();
                    let (c, hw) = (s[0], s[1] * s[2]);
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for ch in 0..c {
                            for (d, gv) in buf[ch * hw..(ch + 1) * hw].iter_mut().zip(&g) {
                                *d += *gv;
                            }
                        }
                    });
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p].value.numel();
                        let seg = &g[off..off + n];
                        accumulate(&mut grads, p, &self.nodes, |buf| {
                            for (d, gv) in buf.iter_mut().zip(seg) {
                                *d += *gv;
                            }
                        });
                        off += n;
                    }
                }
                Op::Reshape(x) => {
                    let x = *x;
                    accumulate(&mut grads, x, &self.nodes, |buf| {
                        for (d, gv) in buf.iter_mut().zip(&g) {
                            *d += *gv;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn accumulate(
    grads: &mut [Option<Vec<f32>>],
    idx: usize,
    nodes: &[Node],
    f: impl FnOnce(&mut [f32]),
) {
    let buf = grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.numel()]);
    f(buf);
}
