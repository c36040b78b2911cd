//! Minimal reverse-mode differentiation over shaped double-precision
//! arrays.
//!
//! A [`Tape`] records every operation as it executes (define-by-run); a
//! [`Tensor`] is a copyable handle into the tape. Calling
//! [`Tensor::backward`] on a scalar replays the record in reverse and
//! accumulates `d(loss)/d(node)` into every node's gradient buffer.
//! Gradients add up: using a tensor twice yields the sum of per-use
//! gradients, and repeated backward calls without
//! [`Tape::clear_gradients`] accumulate too.
//!
//! Tensors are immutable after construction except for their gradient
//! accumulators, and a tape is confined to one execution context. Distinct
//! tapes share nothing and may run concurrently.

pub mod nn;
pub mod optim;

use std::cell::RefCell;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Exp,
    Log,
    Abs,
    Sqrt,
    Swish,
    Sigmoid,
    Tanh,
}

/// How a binary op's operands relate: equal shapes, or one side is a single
/// element broadcast against the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    LhsScalar,
    RhsScalar,
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: BinaryKind, lhs: usize, rhs: usize, broadcast: Broadcast },
    Scalar { kind: BinaryKind, lhs: usize, value: f64 },
    Unary { kind: UnaryKind, arg: usize },
    Sum { arg: usize },
    Matmul { lhs: usize, rhs: usize, m: usize, k: usize, n: usize },
    Conv2d { input: usize, kernel: usize, dims: ConvDims },
    ConcatChannels { parts: Vec<usize> },
    SelectChannels { arg: usize, channels: Vec<usize> },
    ChannelDot { vec: usize, map: usize },
    ChannelScale { weight: usize, map: usize },
    ChannelBias { map: usize, bias: usize },
    BlockDct { arg: usize, block: usize },
    BlockIdct { arg: usize, block: usize },
    Reshape { arg: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    /// True when this node or anything upstream of it requires gradients;
    /// backward skips subgraphs where this is false.
    needs_grad: bool,
    op: Op,
}

/// Operation record for one forward pass. Rebuilt per pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    index: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor<'_> {
        let needs_grad = requires_grad || {
            let nodes = self.nodes.borrow();
            let dep = |i: &usize| nodes[*i].needs_grad;
            match &op {
                Op::Leaf => false,
                Op::Binary { lhs, rhs, .. } => dep(lhs) || dep(rhs),
                Op::Scalar { lhs, .. } => dep(lhs),
                Op::Unary { arg, .. }
                | Op::Sum { arg }
                | Op::SelectChannels { arg, .. }
                | Op::BlockDct { arg, .. }
                | Op::BlockIdct { arg, .. }
                | Op::Reshape { arg } => dep(arg),
                Op::Matmul { lhs, rhs, .. } => dep(lhs) || dep(rhs),
                Op::Conv2d { input, kernel, .. } => dep(input) || dep(kernel),
                Op::ConcatChannels { parts } => parts.iter().any(dep),
                Op::ChannelDot { vec, map } => dep(vec) || dep(map),
                Op::ChannelScale { weight, map } => dep(weight) || dep(map),
                Op::ChannelBias { map, bias } => dep(map) || dep(bias),
            }
        };
        let grad = vec![0.0; data.len()];
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, data, grad, requires_grad, needs_grad, op });
        Tensor { tape: self, index: nodes.len() - 1 }
    }

    fn checked(&self, shape: &[usize], data: &[f64]) -> Result<()> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch { lhs: vec![data.len()], rhs: shape.to_vec() });
        }
        Ok(())
    }

    /// Records an input that does not need gradients.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor<'_>> {
        self.checked(shape, &data)?;
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Records an input that participates in differentiation.
    pub fn variable(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor<'_>> {
        self.checked(shape, &data)?;
        Ok(self.push(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn scalar(&self, value: f64) -> Tensor<'_> {
        self.push(vec![1], vec![value], false, Op::Leaf)
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels<'t>(&'t self, parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = parts[0].nchw()?;
        let mut channels = 0usize;
        for p in parts {
            let d = p.nchw()?;
            if d.0 != first.0 || d.2 != first.2 || d.3 != first.3 {
                return Err(Error::ShapeMismatch { lhs: parts[0].shape(), rhs: p.shape() });
            }
            channels += d.1;
        }
        let (n, _, h, w) = first;
        let plane = h * w;
        let mut data = vec![0.0; n * channels * plane];
        {
            let nodes = self.nodes.borrow();
            for b in 0..n {
                let mut at = 0usize;
                for p in parts {
                    let pc = nodes[p.index].shape[1];
                    let src = &nodes[p.index].data[b * pc * plane..(b + 1) * pc * plane];
                    data[(b * channels + at) * plane..(b * channels + at + pc) * plane]
                        .copy_from_slice(src);
                    at += pc;
                }
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.index).collect();
        Ok(self.push(vec![n, channels, h, w], data, false, Op::ConcatChannels { parts: idx }))
    }

    /// Resets every gradient accumulator to zero.
    pub fn clear_gradients(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

impl<'t> Tensor<'t> {
    /// The tape this tensor lives on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.index].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.index].data.len()
    }

    /// Copy of the node's values.
    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.index].data.clone()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.index];
        if node.data.len() != 1 {
            return Err(Error::ShapeMismatch { lhs: node.shape.clone(), rhs: vec![1] });
        }
        Ok(node.data[0])
    }

    /// Copy of the accumulated gradient.
    pub fn grad(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.index].grad.clone()
    }

    /// Whether this node was created as a differentiable leaf.
    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.index].requires_grad
    }

    fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch { lhs: shape, rhs: vec![0, 0, 0, 0] });
        }
        Ok((shape[0], shape[1], shape[2], shape[3]))
    }

    fn binary(&self, rhs: Tensor<'t>, kind: BinaryKind) -> Result<Tensor<'t>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        let (ln, rn): (usize, usize) = (ls.iter().product(), rs.iter().product());
        let broadcast = if ls == rs {
            Broadcast::None
        } else if rn == 1 {
            Broadcast::RhsScalar
        } else if ln == 1 {
            Broadcast::LhsScalar
        } else {
            return Err(Error::ShapeMismatch { lhs: ls, rhs: rs });
        };
        let apply = |a: f64, b: f64| match kind {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        };
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.index].data;
            let b = &nodes[rhs.index].data;
            match broadcast {
                Broadcast::None => (ls, a.iter().zip(b).map(|(&x, &y)| apply(x, y)).collect()),
                Broadcast::RhsScalar => (ls, a.iter().map(|&x| apply(x, b[0])).collect()),
                Broadcast::LhsScalar => (rs, b.iter().map(|&y| apply(a[0], y)).collect()),
            }
        };
        Ok(self.tape.push(
            shape,
            data,
            false,
            Op::Binary { kind, lhs: self.index, rhs: rhs.index, broadcast },
        ))
    }

    pub fn add(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(rhs, BinaryKind::Add)
    }

    pub fn sub(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(rhs, BinaryKind::Sub)
    }

    pub fn mul(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(rhs, BinaryKind::Mul)
    }

    pub fn div(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(rhs, BinaryKind::Div)
    }

    fn scalar_op(&self, value: f64, kind: BinaryKind) -> Tensor<'t> {
        let apply = |a: f64| match kind {
            BinaryKind::Add => a + value,
            BinaryKind::Sub => a - value,
            BinaryKind::Mul => a * value,
            BinaryKind::Div => a / value,
        };
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let node = &nodes[self.index];
            (node.shape.clone(), node.data.iter().map(|&x| apply(x)).collect())
        };
        self.tape.push(shape, data, false, Op::Scalar { kind, lhs: self.index, value })
    }

    pub fn add_scalar(&self, value: f64) -> Tensor<'t> {
        self.scalar_op(value, BinaryKind::Add)
    }

    pub fn sub_scalar(&self, value: f64) -> Tensor<'t> {
        self.scalar_op(value, BinaryKind::Sub)
    }

    pub fn mul_scalar(&self, value: f64) -> Tensor<'t> {
        self.scalar_op(value, BinaryKind::Mul)
    }

    pub fn div_scalar(&self, value: f64) -> Tensor<'t> {
        self.scalar_op(value, BinaryKind::Div)
    }

    fn unary(&self, kind: UnaryKind) -> Result<Tensor<'t>> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let node = &nodes[self.index];
            let mapped: Result<Vec<f64>> = node
                .data
                .iter()
                .map(|&x| match kind {
                    UnaryKind::Neg => Ok(-x),
                    UnaryKind::Exp => Ok(x.exp()),
                    UnaryKind::Log => {
                        if x <= 0.0 {
                            Err(Error::Domain(format!("log of non-positive value {x}")))
                        } else {
                            Ok(x.ln())
                        }
                    }
                    UnaryKind::Abs => Ok(x.abs()),
                    UnaryKind::Sqrt => {
                        if x < 0.0 {
                            Err(Error::Domain(format!("sqrt of negative value {x}")))
                        } else {
                            Ok(x.sqrt())
                        }
                    }
                    UnaryKind::Swish => Ok(x * sigmoid(x)),
                    UnaryKind::Sigmoid => Ok(sigmoid(x)),
                    UnaryKind::Tanh => Ok(x.tanh()),
                })
                .collect();
            (node.shape.clone(), mapped?)
        };
        Ok(self.tape.push(shape, data, false, Op::Unary { kind, arg: self.index }))
    }

    pub fn neg(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Neg).expect("neg cannot fail")
    }

    pub fn exp(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Exp).expect("exp cannot fail")
    }

    /// Natural log; rejects non-positive entries.
    pub fn ln(&self) -> Result<Tensor<'t>> {
        self.unary(UnaryKind::Log)
    }

    pub fn abs(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Abs).expect("abs cannot fail")
    }

    /// Square root; rejects negative entries. The backward pass treats the
    /// derivative at exactly zero as zero.
    pub fn sqrt(&self) -> Result<Tensor<'t>> {
        self.unary(UnaryKind::Sqrt)
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Swish).expect("swish cannot fail")
    }

    pub fn sigmoid(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Sigmoid).expect("sigmoid cannot fail")
    }

    pub fn tanh(&self) -> Tensor<'t> {
        self.unary(UnaryKind::Tanh).expect("tanh cannot fail")
    }

    /// Full reduction to a scalar.
    pub fn sum(&self) -> Tensor<'t> {
        let total: f64 = self.tape.nodes.borrow()[self.index].data.iter().sum();
        self.tape.push(vec![1], vec![total], false, Op::Sum { arg: self.index })
    }

    /// Arithmetic mean over all entries.
    pub fn mean(&self) -> Tensor<'t> {
        let n = self.numel() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Matrix product of `[m, k]` by `[k, n]`.
    pub fn matmul(&self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(Error::ShapeMismatch { lhs: ls, rhs: rs });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.index].data;
            let b = &nodes[rhs.index].data;
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += av * b[p * n + j];
                    }
                }
            }
            out
        };
        Ok(self.tape.push(
            vec![m, n],
            data,
            false,
            Op::Matmul { lhs: self.index, rhs: rhs.index, m, k, n },
        ))
    }

    /// 2D cross-correlation in NCHW layout with an `[cout, cin, kh, kw]`
    /// kernel, zero padding, and a single group.
    pub fn conv2d(&self, kernel: Tensor<'t>, stride: usize, padding: usize) -> Result<Tensor<'t>> {
        self.conv2d_grouped(kernel, stride, padding, 1)
    }

    /// Grouped 2D cross-correlation: the kernel is
    /// `[cout, cin / groups, kh, kw]` and both channel counts must divide by
    /// `groups`. `groups == cin == cout` gives a depthwise convolution.
    pub fn conv2d_grouped(
        &self,
        kernel: Tensor<'t>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<'t>> {
        if stride == 0 || groups == 0 {
            return Err(Error::InvalidArgument("stride and groups must be positive".into()));
        }
        let (batch, cin, h, w) = self.nchw()?;
        let ks = kernel.shape();
        if ks.len() != 4 {
            return Err(Error::ShapeMismatch { lhs: ks, rhs: vec![0, 0, 0, 0] });
        }
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if cin % groups != 0 || cout % groups != 0 || kcin != cin / groups {
            return Err(Error::ShapeMismatch { lhs: vec![cin, groups], rhs: ks });
        }
        let padded_h = h + 2 * padding;
        let padded_w = w + 2 * padding;
        if padded_h < kh || padded_w < kw {
            return Err(Error::InvalidArgument(format!(
                "kernel {kh}x{kw} exceeds padded input {padded_h}x{padded_w}"
            )));
        }
        let ho = (padded_h - kh) / stride + 1;
        let wo = (padded_w - kw) / stride + 1;
        let dims = ConvDims { batch, cin, h, w, cout, kh, kw, ho, wo, stride, padding, groups };
        let data = {
            let nodes = self.tape.nodes.borrow();
            conv2d_forward(&nodes[self.index].data, &nodes[kernel.index].data, &dims)
        };
        Ok(self.tape.push(
            vec![batch, cout, ho, wo],
            data,
            false,
            Op::Conv2d { input: self.index, kernel: kernel.index, dims },
        ))
    }

    /// Gathers channels of an NCHW tensor in the given order. Repeats are
    /// allowed; gradients scatter-add back.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Tensor<'t>> {
        let (n, c, h, w) = self.nchw()?;
        if channels.is_empty() {
            return Err(Error::InvalidArgument("empty channel selection".into()));
        }
        if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
            return Err(Error::InvalidArgument(format!(
                "channel {bad} out of range for {c} channels"
            )));
        }
        let plane = h * w;
        let l = channels.len();
        let mut data = vec![0.0; n * l * plane];
        {
            let nodes = self.tape.nodes.borrow();
            let src = &nodes[self.index].data;
            for b in 0..n {
                for (sl, &ch) in channels.iter().enumerate() {
                    let from = (b * c + ch) * plane;
                    let to = (b * l + sl) * plane;
                    data[to..to + plane].copy_from_slice(&src[from..from + plane]);
                }
            }
        }
        Ok(self.tape.push(
            vec![n, l, h, w],
            data,
            false,
            Op::SelectChannels { arg: self.index, channels: channels.to_vec() },
        ))
    }

    /// Per-pixel dot product of a length-`C` vector with an `[N, C, H, W]`
    /// map, producing `[N, 1, H, W]`.
    pub fn channel_dot(&self, map: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, c, h, w) = map.nchw()?;
        if self.numel() != c {
            return Err(Error::ShapeMismatch { lhs: self.shape(), rhs: map.shape() });
        }
        let plane = h * w;
        let mut data = vec![0.0; n * plane];
        {
            let nodes = self.tape.nodes.borrow();
            let vecd = &nodes[self.index].data;
            let mapd = &nodes[map.index].data;
            for b in 0..n {
                for ch in 0..c {
                    let src = &mapd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    let out = &mut data[b * plane..(b + 1) * plane];
                    let vv = vecd[ch];
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += vv * s;
                    }
                }
            }
        }
        Ok(self.tape.push(
            vec![n, 1, h, w],
            data,
            false,
            Op::ChannelDot { vec: self.index, map: map.index },
        ))
    }

    /// Multiplies every channel of `map` by this `[N, 1, H, W]` weight map.
    pub fn channel_scale(&self, map: Tensor<'t>) -> Result<Tensor<'t>> {
        let (wn, wc, wh, ww) = self.nchw()?;
        let (n, c, h, w) = map.nchw()?;
        if wn != n || wc != 1 || wh != h || ww != w {
            return Err(Error::ShapeMismatch { lhs: self.shape(), rhs: map.shape() });
        }
        let plane = h * w;
        let mut data = vec![0.0; n * c * plane];
        {
            let nodes = self.tape.nodes.borrow();
            let wd = &nodes[self.index].data;
            let md = &nodes[map.index].data;
            for b in 0..n {
                let weight = &wd[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let at = (b * c + ch) * plane;
                    for p in 0..plane {
                        data[at + p] = weight[p] * md[at + p];
                    }
                }
            }
        }
        Ok(self.tape.push(
            map.shape(),
            data,
            false,
            Op::ChannelScale { weight: self.index, map: map.index },
        ))
    }

    /// Adds a per-channel bias (length `C`) to an `[N, C, H, W]` map.
    pub fn channel_bias(&self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        let (n, c, h, w) = self.nchw()?;
        if bias.numel() != c {
            return Err(Error::ShapeMismatch { lhs: self.shape(), rhs: bias.shape() });
        }
        let plane = h * w;
        let mut data = self.value();
        {
            let nodes = self.tape.nodes.borrow();
            let bd = &nodes[bias.index].data;
            for b in 0..n {
                for ch in 0..c {
                    let at = (b * c + ch) * plane;
                    for p in 0..plane {
                        data[at + p] += bd[ch];
                    }
                }
            }
        }
        Ok(self.tape.push(
            vec![n, c, h, w],
            data,
            false,
            Op::ChannelBias { map: self.index, bias: bias.index },
        ))
    }

    /// Per-channel block DCT: `[N, C, H, W]` with `H, W` multiples of
    /// `block` becomes `[N, C * block^2, H/block, W/block]`, sub-channel
    /// `u * block + v` holding frequency `(u, v)` of each patch. The
    /// backward pass is the inverse transform of the upstream gradient
    /// (exact adjoint by orthonormality).
    pub fn block_dct(&self, block: usize) -> Result<Tensor<'t>> {
        let (n, c, h, w) = self.nchw()?;
        if block == 0 || h % block != 0 || w % block != 0 {
            return Err(Error::InvalidArgument(format!(
                "extents {h}x{w} are not multiples of block {block}"
            )));
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            block_dct_raw(&nodes[self.index].data, n, c, h, w, block)?
        };
        Ok(self.tape.push(
            vec![n, c * block * block, h / block, w / block],
            data,
            false,
            Op::BlockDct { arg: self.index, block },
        ))
    }

    /// Inverse of [`Tensor::block_dct`]: `[N, C * block^2, h, w]` becomes
    /// `[N, C, h * block, w * block]`.
    pub fn block_idct(&self, block: usize) -> Result<Tensor<'t>> {
        let (n, c, h, w) = self.nchw()?;
        let bb = block * block;
        if block == 0 || c % bb != 0 {
            return Err(Error::InvalidArgument(format!(
                "channel count {c} is not a multiple of block^2 = {bb}"
            )));
        }
        let data = {
            let nodes = self.tape.nodes.borrow();
            block_idct_raw(&nodes[self.index].data, n, c / bb, h, w, block)?
        };
        Ok(self.tape.push(
            vec![n, c / bb, h * block, w * block],
            data,
            false,
            Op::BlockIdct { arg: self.index, block },
        ))
    }

    /// Same data, new shape (element counts must agree).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'t>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch { lhs: self.shape(), rhs: shape.to_vec() });
        }
        let data = self.value();
        Ok(self.tape.push(shape.to_vec(), data, false, Op::Reshape { arg: self.index }))
    }

    /// Reverse sweep from this scalar. Adjoints are computed fresh per call
    /// and added into each node's gradient accumulator, so repeated calls
    /// accumulate.
    pub fn backward(&self) -> Result<()> {
        {
            let nodes = self.tape.nodes.borrow();
            let node = &nodes[self.index];
            if node.data.len() != 1 {
                return Err(Error::ShapeMismatch { lhs: node.shape.clone(), rhs: vec![1] });
            }
        }
        let mut nodes = self.tape.nodes.borrow_mut();
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.index + 1];
        adjoint[self.index] = Some(vec![1.0]);
        for i in (0..=self.index).rev() {
            let Some(up) = adjoint[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            propagate(&nodes, i, &up, &mut adjoint);
            let node = &mut nodes[i];
            for (g, u) in node.grad.iter_mut().zip(&up) {
                *g += u;
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sign with the subgradient convention `sign(0) = 0`.
fn subsign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(adjoint: &mut Vec<Option<Vec<f64>>>, nodes: &[Node], target: usize, add: &[f64]) {
    if !nodes[target].needs_grad {
        return;
    }
    let slot = adjoint[target].get_or_insert_with(|| vec![0.0; nodes[target].data.len()]);
    for (a, b) in slot.iter_mut().zip(add) {
        *a += b;
    }
}

fn propagate(nodes: &[Node], index: usize, up: &[f64], adjoint: &mut Vec<Option<Vec<f64>>>) {
    match &nodes[index].op {
        Op::Leaf => {}
        Op::Binary { kind, lhs, rhs, broadcast } => {
            let a = &nodes[*lhs].data;
            let b = &nodes[*rhs].data;
            let (mut da, mut db) = (vec![0.0; a.len()], vec![0.0; b.len()]);
            let fetch = |v: &[f64], i: usize, scalar: bool| if scalar { v[0] } else { v[i] };
            let (ls, rs) = match broadcast {
                Broadcast::None => (false, false),
                Broadcast::LhsScalar => (true, false),
                Broadcast::RhsScalar => (false, true),
            };
            for (i, &g) in up.iter().enumerate() {
                let x = fetch(a, i, ls);
                let y = fetch(b, i, rs);
                let (ga, gb) = match kind {
                    BinaryKind::Add => (g, g),
                    BinaryKind::Sub => (g, -g),
                    BinaryKind::Mul => (g * y, g * x),
                    BinaryKind::Div => (g / y, -g * x / (y * y)),
                };
                if ls {
                    da[0] += ga;
                } else {
                    da[i] += ga;
                }
                if rs {
                    db[0] += gb;
                } else {
                    db[i] += gb;
                }
            }
            accumulate(adjoint, nodes, *lhs, &da);
            accumulate(adjoint, nodes, *rhs, &db);
        }
        Op::Scalar { kind, lhs, value } => {
            let da: Vec<f64> = match kind {
                BinaryKind::Add | BinaryKind::Sub => up.to_vec(),
                BinaryKind::Mul => up.iter().map(|&g| g * value).collect(),
                BinaryKind::Div => up.iter().map(|&g| g / value).collect(),
            };
            accumulate(adjoint, nodes, *lhs, &da);
        }
        Op::Unary { kind, arg } => {
            let x = &nodes[*arg].data;
            let y = &nodes[index].data;
            let da: Vec<f64> = up
                .iter()
                .enumerate()
                .map(|(i, &g)| match kind {
                    UnaryKind::Neg => -g,
                    UnaryKind::Exp => g * y[i],
                    UnaryKind::Log => g / x[i],
                    UnaryKind::Abs => g * subsign(x[i]),
                    UnaryKind::Sqrt => {
                        if y[i] > 0.0 {
                            g * 0.5 / y[i]
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::Swish => {
                        let s = sigmoid(x[i]);
                        g * (s + x[i] * s * (1.0 - s))
                    }
                    UnaryKind::Sigmoid => g * y[i] * (1.0 - y[i]),
                    UnaryKind::Tanh => g * (1.0 - y[i] * y[i]),
                })
                .collect();
            accumulate(adjoint, nodes, *arg, &da);
        }
        Op::Sum { arg } => {
            let da = vec![up[0]; nodes[*arg].data.len()];
            accumulate(adjoint, nodes, *arg, &da);
        }
        Op::Matmul { lhs, rhs, m, k, n } => {
            let a = &nodes[*lhs].data;
            let b = &nodes[*rhs].data;
            let mut da = vec![0.0; a.len()];
            let mut db = vec![0.0; b.len()];
            // dA = G * B^T, dB = A^T * G
            for i in 0..*m {
                for j in 0..*n {
                    let g = up[i * n + j];
                    for p in 0..*k {
                        da[i * k + p] += g * b[p * n + j];
                        db[p * n + j] += g * a[i * k + p];
                    }
                }
            }
            accumulate(adjoint, nodes, *lhs, &da);
            accumulate(adjoint, nodes, *rhs, &db);
        }
        Op::Conv2d { input, kernel, dims } => {
            let x = &nodes[*input].data;
            let k = &nodes[*kernel].data;
            let (dx, dk) = conv2d_backward(x, k, up, dims);
            accumulate(adjoint, nodes, *input, &dx);
            accumulate(adjoint, nodes, *kernel, &dk);
        }
        Op::ConcatChannels { parts } => {
            let out_shape = &nodes[index].shape;
            let (n, h, w) = (out_shape[0], out_shape[2], out_shape[3]);
            let plane = h * w;
            let channels: usize = out_shape[1];
            let mut at = 0usize;
            for p in parts {
                let pc = nodes[*p].shape[1];
                let mut dp = vec![0.0; n * pc * plane];
                for b in 0..n {
                    let from = (b * channels + at) * plane;
                    dp[b * pc * plane..(b + 1) * pc * plane]
                        .copy_from_slice(&up[from..from + pc * plane]);
                }
                accumulate(adjoint, nodes, *p, &dp);
                at += pc;
            }
        }
        Op::SelectChannels { arg, channels } => {
            let shape = &nodes[*arg].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let plane = h * w;
            let l = channels.len();
            let mut da = vec![0.0; n * c * plane];
            for b in 0..n {
                for (sl, &ch) in channels.iter().enumerate() {
                    let to = (b * c + ch) * plane;
                    let from = (b * l + sl) * plane;
                    for p in 0..plane {
                        da[to + p] += up[from + p];
                    }
                }
            }
            accumulate(adjoint, nodes, *arg, &da);
        }
        Op::ChannelDot { vec, map } => {
            let vshape = nodes[*vec].data.len();
            let mshape = &nodes[*map].shape;
            let (n, c, h, w) = (mshape[0], mshape[1], mshape[2], mshape[3]);
            let plane = h * w;
            let vd = &nodes[*vec].data;
            let md = &nodes[*map].data;
            let mut dv = vec![0.0; vshape];
            let mut dm = vec![0.0; md.len()];
            for b in 0..n {
                let g = &up[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let at = (b * c + ch) * plane;
                    let mut acc = 0.0;
                    for p in 0..plane {
                        acc += g[p] * md[at + p];
                        dm[at + p] += g[p] * vd[ch];
                    }
                    dv[ch] += acc;
                }
            }
            accumulate(adjoint, nodes, *vec, &dv);
            accumulate(adjoint, nodes, *map, &dm);
        }
        Op::ChannelScale { weight, map } => {
            let mshape = &nodes[*map].shape;
            let (n, c, h, w) = (mshape[0], mshape[1], mshape[2], mshape[3]);
            let plane = h * w;
            let wd = &nodes[*weight].data;
            let md = &nodes[*map].data;
            let mut dw = vec![0.0; wd.len()];
            let mut dm = vec![0.0; md.len()];
            for b in 0..n {
                for ch in 0..c {
                    let at = (b * c + ch) * plane;
                    for p in 0..plane {
                        let g = up[at + p];
                        dw[b * plane + p] += g * md[at + p];
                        dm[at + p] += g * wd[b * plane + p];
                    }
                }
            }
            accumulate(adjoint, nodes, *weight, &dw);
            accumulate(adjoint, nodes, *map, &dm);
        }
        Op::ChannelBias { map, bias } => {
            let mshape = &nodes[*map].shape;
            let (n, c, h, w) = (mshape[0], mshape[1], mshape[2], mshape[3]);
            let plane = h * w;
            let mut db = vec![0.0; nodes[*bias].data.len()];
            for b in 0..n {
                for ch in 0..c {
                    let at = (b * c + ch) * plane;
                    for p in 0..plane {
                        db[ch] += up[at + p];
                    }
                }
            }
            accumulate(adjoint, nodes, *map, up);
            accumulate(adjoint, nodes, *bias, &db);
        }
        Op::BlockDct { arg, block } => {
            let shape = &nodes[*arg].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let da = block_idct_raw(up, n, c, h / block, w / block, *block)
                .expect("adjoint shapes are valid by construction");
            accumulate(adjoint, nodes, *arg, &da);
        }
        Op::BlockIdct { arg, block } => {
            let shape = &nodes[*arg].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let spatial_c = c / (block * block);
            let da = block_dct_raw(up, n, spatial_c, h * block, w * block, *block)
                .expect("adjoint shapes are valid by construction");
            debug_assert_eq!(da.len(), n * c * h * w);
            accumulate(adjoint, nodes, *arg, &da);
        }
        Op::Reshape { arg } => {
            accumulate(adjoint, nodes, *arg, up);
        }
    }
}

/// Output-column range for which `ix = ox * stride + kx - padding` lands
/// inside `[0, w)`.
fn ox_bounds(d: &ConvDims, kx: usize) -> (usize, usize) {
    let shift = kx as isize - d.padding as isize;
    let lo = if shift >= 0 { 0 } else { ((-shift) as usize).div_ceil(d.stride) };
    let max_ix = d.w as isize - 1 - shift;
    if max_ix < 0 {
        return (0, 0);
    }
    let hi = (max_ix as usize / d.stride + 1).min(d.wo);
    (lo.min(hi), hi)
}

// The convolution loops put the kernel taps outermost so the innermost loop
// runs contiguously over output columns and vectorizes.

fn conv2d_forward(x: &[f64], k: &[f64], d: &ConvDims) -> Vec<f64> {
    let cpg_in = d.cin / d.groups;
    let cpg_out = d.cout / d.groups;
    let mut out = vec![0.0; d.batch * d.cout * d.ho * d.wo];
    for b in 0..d.batch {
        for oc in 0..d.cout {
            let ic0 = (oc / cpg_out) * cpg_in;
            let obase = (b * d.cout + oc) * d.ho;
            for icg in 0..cpg_in {
                let xbase = (b * d.cin + ic0 + icg) * d.h;
                let kbase = (oc * cpg_in + icg) * d.kh;
                for ky in 0..d.kh {
                    let krow = (kbase + ky) * d.kw;
                    for kx in 0..d.kw {
                        let kval = k[krow + kx];
                        let (ox_lo, ox_hi) = ox_bounds(d, kx);
                        let shift = kx as isize - d.padding as isize;
                        for oy in 0..d.ho {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * d.w;
                            let orow = (obase + oy) * d.wo;
                            if d.stride == 1 {
                                let xoff = (xrow as isize + shift + ox_lo as isize) as usize;
                                let src = &x[xoff..xoff + (ox_hi - ox_lo)];
                                let dst = &mut out[orow + ox_lo..orow + ox_hi];
                                for (o, &s) in dst.iter_mut().zip(src) {
                                    *o += kval * s;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = (ox * d.stride) as isize + shift;
                                    out[orow + ox] += kval * x[xrow + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(x: &[f64], k: &[f64], up: &[f64], d: &ConvDims) -> (Vec<f64>, Vec<f64>) {
    let cpg_in = d.cin / d.groups;
    let cpg_out = d.cout / d.groups;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    for b in 0..d.batch {
        for oc in 0..d.cout {
            let ic0 = (oc / cpg_out) * cpg_in;
            let obase = (b * d.cout + oc) * d.ho;
            for icg in 0..cpg_in {
                let xbase = (b * d.cin + ic0 + icg) * d.h;
                let kbase = (oc * cpg_in + icg) * d.kh;
                for ky in 0..d.kh {
                    let krow = (kbase + ky) * d.kw;
                    for kx in 0..d.kw {
                        let kval = k[krow + kx];
                        let (ox_lo, ox_hi) = ox_bounds(d, kx);
                        let shift = kx as isize - d.padding as isize;
                        let mut kacc = 0.0;
                        for oy in 0..d.ho {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = (xbase + iy as usize) * d.w;
                            let orow = (obase + oy) * d.wo;
                            if d.stride == 1 {
                                let xoff = (xrow as isize + shift + ox_lo as isize) as usize;
                                let run = ox_hi - ox_lo;
                                let grad = &up[orow + ox_lo..orow + ox_hi];
                                let src = &x[xoff..xoff + run];
                                let dst = &mut dx[xoff..xoff + run];
                                for ((g, &s), o) in grad.iter().zip(src).zip(dst) {
                                    kacc += g * s;
                                    *o += g * kval;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ((ox * d.stride) as isize + shift) as usize;
                                    let g = up[orow + ox];
                                    kacc += g * x[xrow + ix];
                                    dx[xrow + ix] += g * kval;
                                }
                            }
                        }
                        dk[krow + kx] += kacc;
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Per-channel forward block transform on raw data; shared by the tape op
/// and its adjoint.
fn block_dct_raw(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    block: usize,
) -> Result<Vec<f64>> {
    let basis = crate::dct::make_basis(block)?;
    let bb = block * block;
    let (hp, wp) = (h / block, w / block);
    let plane_out = hp * wp;
    let mut out = vec![0.0; n * c * bb * plane_out];
    let mut patch = vec![0.0; bb];
    let mut spec = vec![0.0; bb];
    let mut scratch = vec![0.0; bb];
    for b in 0..n {
        for ch in 0..c {
            let xbase = (b * c + ch) * h * w;
            for ty in 0..hp {
                for tx in 0..wp {
                    for r in 0..block {
                        let row = xbase + (ty * block + r) * w + tx * block;
                        patch[r * block..(r + 1) * block].copy_from_slice(&x[row..row + block]);
                    }
                    crate::dct::dct2_fast_into(&patch, &mut spec, &mut scratch, &basis);
                    let at = ty * wp + tx;
                    for q in 0..bb {
                        out[((b * c + ch) * bb + q) * plane_out + at] = spec[q];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel inverse block transform on raw data (inverse of
/// [`block_dct_raw`]'s layout).
fn block_idct_raw(
    f: &[f64],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    block: usize,
) -> Result<Vec<f64>> {
    let basis = crate::dct::make_basis(block)?;
    let bb = block * block;
    let (h, w) = (hp * block, wp * block);
    let plane_in = hp * wp;
    let mut out = vec![0.0; n * c * h * w];
    let mut spec = vec![0.0; bb];
    let mut patch = vec![0.0; bb];
    let mut scratch = vec![0.0; bb];
    for b in 0..n {
        for ch in 0..c {
            let obase = (b * c + ch) * h * w;
            for ty in 0..hp {
                for tx in 0..wp {
                    let at = ty * wp + tx;
                    for q in 0..bb {
                        spec[q] = f[((b * c + ch) * bb + q) * plane_in + at];
                    }
                    crate::dct::idct2_fast_into(&spec, &mut patch, &mut scratch, &basis);
                    for r in 0..block {
                        let row = obase + (ty * block + r) * w + tx * block;
                        out[row..row + block].copy_from_slice(&patch[r * block..(r + 1) * block]);
                    }
                }
            }
        }
    }
    Ok(out)
}
