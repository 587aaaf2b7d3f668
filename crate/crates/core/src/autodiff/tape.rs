//! Define-by-run gradient tape.
//!
//! A [`Tape`] records every primitive operation of a forward pass in
//! topological order; [`Tape::backward`] replays the record in reverse and
//! accumulates chain-rule gradients for every leaf created with
//! `requires_grad`. The tape is rebuilt for every forward pass, which keeps
//! recurrent inference (variable iteration count) trivial.
//!
//! Calling `backward` a second time on the same tape recomputes all gradients
//! from zero and therefore yields identical results; gradients never
//! accumulate across calls.

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: usize, w: usize, bias: usize },
    Conv2d { x: usize, kernel: usize, dims: ConvDims },
    Relu { x: usize },
    MaxPool2d { x: usize, argmax: Vec<u32> },
    GlobalAvgPool { x: usize },
    Concat { a: usize, b: usize, axis: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    MulElem { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddConst { x: usize },
    Neg { x: usize },
    Exp { x: usize },
    Sqrt { x: usize },
    RowSum { x: usize },
    Mean { x: usize },
    Sum { x: usize },
    SliceCols { x: usize, start: usize },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients detached from their tape by [`Tape::into_gradients`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id.0).map(|g| g.as_slice()).filter(|g| !g.is_empty())
    }
}

/// Records a forward pass and computes gradients on demand.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    /// When false, every kernel runs sequentially (strict mode). Kernel
    /// results are bit-identical either way; this switch exists so exact
    /// reproducibility never depends on the thread pool at all.
    parallel: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::with_parallelism(true)
    }

    pub fn with_parallelism(parallel: bool) -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), parallel }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Gradient tracking follows `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        let needs = t.requires_grad;
        self.push(Op::Leaf, t, needs)
    }

    /// Adds a non-trainable input without consuming the caller's tensor.
    pub fn constant(&mut self, t: &Tensor) -> ValueId {
        let mut t = t.clone();
        t.requires_grad = false;
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node, if tracked.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id.0).map(|g| g.as_slice()).filter(|g| !g.is_empty())
    }

    /// Consumes the tape, keeping only the gradients. Dropping the recorded
    /// values releases every leaf's shared buffer, so parameter updates that
    /// follow can mutate in place instead of copying.
    pub fn into_gradients(self) -> Gradients {
        Gradients { grads: self.grads }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> ValueId {
        self.nodes.push(Node { op, value, needs_grad });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    // ---- shape-checked operations ------------------------------------

    /// Fully-connected layer: `x[b,i] * w[i,j] + bias[j]`.
    pub fn dense(&mut self, x: ValueId, w: ValueId, bias: ValueId) -> Result<ValueId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(bias).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::ShapeMismatch(format!(
                "dense expects [b,i]x[i,j]+[j], got {:?} x {:?} + {:?}",
                xs, ws, bs
            )));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[1]);
        let mut out = Tensor::zeros(&[batch, n_out]);
        kernels::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
            batch,
            n_in,
            n_out,
            out.data_mut(),
            self.parallel,
        );
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(bias.0);
        Ok(self.push(Op::Dense { x: x.0, w: w.0, bias: bias.0 }, out, needs))
    }

    /// 2-D cross-correlation over `[b,c,h,w]` input with `[f,c,k,k]` kernel.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        kernel: ValueId,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [b,c,h,w] input and [f,c,k,k] kernel, got {:?} and {:?}",
                xs, ks
            )));
        }
        if xs[1] != ks[1] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                xs[1], ks[1]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d stride must be >= 1".into()));
        }
        let (h, w, k) = (xs[2], xs[3], ks[2]);
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::InvalidConfig(format!(
                "conv2d kernel {} exceeds padded input {}x{}",
                k,
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if (h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "conv2d output size is not integral for input {}x{}, k={}, stride={}, padding={}",
                h, w, k, stride, padding
            )));
        }
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            h,
            w,
            c_out: ks[0],
            k,
            stride,
            padding,
            h_out: (h + 2 * padding - k) / stride + 1,
            w_out: (w + 2 * padding - k) / stride + 1,
        };
        let mut out = Tensor::zeros(&[dims.batch, dims.c_out, dims.h_out, dims.w_out]);
        kernels::conv2d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            dims,
            out.data_mut(),
            self.parallel,
        );
        let needs = self.needs(x.0) || self.needs(kernel.0);
        Ok(self.push(Op::Conv2d { x: x.0, kernel: kernel.0, dims }, out, needs))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let needs = self.needs(x.0);
        self.push(Op::Relu { x: x.0 }, out, needs)
    }

    /// Max pooling with square window `size` and matching stride.
    pub fn max_pool2d(&mut self, x: ValueId, size: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch(format!("max_pool2d expects [b,c,h,w], got {:?}", xs)));
        }
        if size == 0 || xs[2] < size || xs[3] < size {
            return Err(Error::InvalidConfig(format!(
                "max_pool2d window {} does not fit input {}x{}",
                size, xs[2], xs[3]
            )));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / size, w / size);
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        let mut argmax = vec![0u32; b * c * ho * wo];
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for bc in 0..b * c {
                let plane = &xd[bc * h * w..(bc + 1) * h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dh in 0..size {
                            for dw in 0..size {
                                let idx = (oh * size + dh) * w + ow * size + dw;
                                // First maximum in scan order wins ties.
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = (bc * ho + oh) * wo + ow;
                        od[o] = best;
                        argmax[o] = best_idx as u32;
                    }
                }
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(Op::MaxPool2d { x: x.0, argmax }, out, needs))
    }

    /// Mean over the two spatial axes: `[b,c,h,w] -> [b,c]`.
    pub fn global_avg_pool(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "global_avg_pool expects [b,c,h,w], got {:?}",
                xs
            )));
        }
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let mut out = Tensor::zeros(&[b, c]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for (bc, o) in od.iter_mut().enumerate() {
                let plane = &xd[bc * hw..(bc + 1) * hw];
                *o = plane.iter().sum::<f64>() / hw as f64;
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(Op::GlobalAvgPool { x: x.0 }, out, needs))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, a: ValueId, b: ValueId, axis: usize) -> Result<ValueId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::ShapeMismatch(format!(
                "concat axis {} invalid for shapes {:?} and {:?}",
                axis, sa, sb
            )));
        }
        for (i, (da, db)) in sa.iter().zip(&sb).enumerate() {
            if i != axis && da != db {
                return Err(Error::ShapeMismatch(format!(
                    "concat shapes {:?} and {:?} differ on non-concat axis {}",
                    sa, sb, i
                )));
            }
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (ra, rb) = (sa[axis] * inner, sb[axis] * inner);
        let mut data = Vec::with_capacity(outer * (ra + rb));
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            for o in 0..outer {
                data.extend_from_slice(&da[o * ra..(o + 1) * ra]);
                data.extend_from_slice(&db[o * rb..(o + 1) * rb]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Concat { a: a.0, b: b.0, axis }, out, needs))
    }

    fn elementwise_pair(&mut self, a: ValueId, b: ValueId, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch(format!(
                "{} expects equal shapes, got {:?} and {:?}",
                name,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_pair(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, out, needs))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_pair(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Sub { a: a.0, b: b.0 }, out, needs))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_pair(a, b, "mul_elem")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::MulElem { a: a.0, b: b.0 }, out, needs))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= c;
        }
        let needs = self.needs(x.0);
        self.push(Op::Scale { x: x.0, c }, out, needs)
    }

    pub fn add_const(&mut self, x: ValueId, c: f64) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v += c;
        }
        let needs = self.needs(x.0);
        self.push(Op::AddConst { x: x.0 }, out, needs)
    }

    pub fn neg(&mut self, x: ValueId) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = -*v;
        }
        let needs = self.needs(x.0);
        self.push(Op::Neg { x: x.0 }, out, needs)
    }

    pub fn exp(&mut self, x: ValueId) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.exp();
        }
        let needs = self.needs(x.0);
        self.push(Op::Exp { x: x.0 }, out, needs)
    }

    pub fn sqrt(&mut self, x: ValueId) -> ValueId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.sqrt();
        }
        let needs = self.needs(x.0);
        self.push(Op::Sqrt { x: x.0 }, out, needs)
    }

    /// Row sums of a `[b,d]` tensor: output shape `[b]`.
    pub fn row_sum(&mut self, x: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::ShapeMismatch(format!("row_sum expects [b,d], got {:?}", xs)));
        }
        let (b, d) = (xs[0], xs[1]);
        let mut out = Tensor::zeros(&[b]);
        {
            let xd = self.value(x).data();
            for (r, o) in out.data_mut().iter_mut().enumerate() {
                *o = xd[r * d..(r + 1) * d].iter().sum();
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(Op::RowSum { x: x.0 }, out, needs))
    }

    /// Mean of all elements, as a `[1]` scalar.
    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let n = self.value(x).len().max(1);
        let s = self.value(x).data().iter().sum::<f64>() / n as f64;
        let needs = self.needs(x.0);
        self.push(Op::Mean { x: x.0 }, Tensor::scalar(s), needs)
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let s = self.value(x).data().iter().sum::<f64>();
        let needs = self.needs(x.0);
        self.push(Op::Sum { x: x.0 }, Tensor::scalar(s), needs)
    }

    /// Columns `start..start+len` of a `[b,d]` tensor.
    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || start + len > xs[1] {
            return Err(Error::ShapeMismatch(format!(
                "slice_cols {}..{} out of range for {:?}",
                start,
                start + len,
                xs
            )));
        }
        let (b, d) = (xs[0], xs[1]);
        let mut data = Vec::with_capacity(b * len);
        {
            let xd = self.value(x).data();
            for r in 0..b {
                data.extend_from_slice(&xd[r * d + start..r * d + start + len]);
            }
        }
        let out = Tensor::new(vec![b, len], data)?;
        let needs = self.needs(x.0);
        Ok(self.push(Op::SliceCols { x: x.0, start }, out, needs))
    }

    // ---- backward ------------------------------------------------------

    /// Accumulates gradients of the scalar `loss` into every tracked node.
    /// Safe to call repeatedly: gradients are recomputed from zero each time.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward target must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| if n.needs_grad { vec![0.0; n.value.len()] } else { Vec::new() })
            .collect();
        if !self.nodes[loss.0].needs_grad {
            // Loss does not depend on any tracked leaf; nothing to do.
            return Ok(());
        }
        self.grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.grads[idx].is_empty() {
                continue;
            }
            // Output index is strictly greater than all inputs, so taking its
            // buffer leaves every input buffer available for accumulation.
            let gout = std::mem::take(&mut self.grads[idx]);
            self.apply_backward(idx, &gout);
            self.grads[idx] = gout;
        }
        Ok(())
    }

    fn apply_backward(&mut self, idx: usize, gout: &[f64]) {
        let parallel = self.parallel;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Dense { x, w, bias } => {
                let (x, w, bias) = (*x, *w, *bias);
                let xs = self.nodes[x].value.shape();
                let (b, n_in) = (xs[0], xs[1]);
                let n_out = self.nodes[w].value.shape()[1];
                if self.nodes[x].needs_grad {
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    kernels::dense_backward_input(
                        gout,
                        self.nodes[w].value.data(),
                        b,
                        n_in,
                        n_out,
                        &mut dx,
                        parallel,
                    );
                    self.grads[x] = dx;
                }
                if self.nodes[w].needs_grad {
                    let mut dw = std::mem::take(&mut self.grads[w]);
                    kernels::dense_backward_weights(
                        self.nodes[x].value.data(),
                        gout,
                        b,
                        n_in,
                        n_out,
                        &mut dw,
                        parallel,
                    );
                    self.grads[w] = dw;
                }
                if self.nodes[bias].needs_grad {
                    let mut db = std::mem::take(&mut self.grads[bias]);
                    kernels::dense_backward_bias(gout, b, n_out, &mut db);
                    self.grads[bias] = db;
                }
            }
            Op::Conv2d { x, kernel, dims } => {
                let (x, kernel, dims) = (*x, *kernel, *dims);
                if self.nodes[x].needs_grad {
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    kernels::conv2d_backward_input(
                        gout,
                        self.nodes[kernel].value.data(),
                        dims,
                        &mut dx,
                        parallel,
                    );
                    self.grads[x] = dx;
                }
                if self.nodes[kernel].needs_grad {
                    let mut dk = std::mem::take(&mut self.grads[kernel]);
                    kernels::conv2d_backward_kernel(
                        self.nodes[x].value.data(),
                        gout,
                        dims,
                        &mut dk,
                        parallel,
                    );
                    self.grads[kernel] = dk;
                }
            }
            Op::Relu { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    for ((d, g), v) in dx.iter_mut().zip(gout).zip(self.nodes[x].value.data()) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                    self.grads[x] = dx;
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let xs = self.nodes[x].value.shape();
                    let plane = xs[2] * xs[3];
                    let out_plane = gout.len() / (xs[0] * xs[1]);
                    let argmax = argmax.clone();
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    for (o, g) in gout.iter().enumerate() {
                        let bc = o / out_plane;
                        dx[bc * plane + argmax[o] as usize] += g;
                    }
                    self.grads[x] = dx;
                }
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let xs = self.nodes[x].value.shape();
                    let hw = xs[2] * xs[3];
                    let inv = 1.0 / hw as f64;
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    for (bc, g) in gout.iter().enumerate() {
                        for d in &mut dx[bc * hw..(bc + 1) * hw] {
                            *d += g * inv;
                        }
                    }
                    self.grads[x] = dx;
                }
            }
            Op::Concat { a, b, axis } => {
                let (a, b, axis) = (*a, *b, *axis);
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                let outer: usize = sa[..axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let (ra, rb) = (sa[axis] * inner, sb[axis] * inner);
                if self.nodes[a].needs_grad {
                    let mut da = std::mem::take(&mut self.grads[a]);
                    for o in 0..outer {
                        let src = &gout[o * (ra + rb)..o * (ra + rb) + ra];
                        for (d, g) in da[o * ra..(o + 1) * ra].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                    self.grads[a] = da;
                }
                if self.nodes[b].needs_grad {
                    let mut db = std::mem::take(&mut self.grads[b]);
                    for o in 0..outer {
                        let src = &gout[o * (ra + rb) + ra..(o + 1) * (ra + rb)];
                        for (d, g) in db[o * rb..(o + 1) * rb].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                    self.grads[b] = db;
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                for &i in &[a, b] {
                    if self.nodes[i].needs_grad {
                        let mut d = std::mem::take(&mut self.grads[i]);
                        for (di, g) in d.iter_mut().zip(gout) {
                            *di += g;
                        }
                        self.grads[i] = d;
                    }
                }
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[a]);
                    for (di, g) in d.iter_mut().zip(gout) {
                        *di += g;
                    }
                    self.grads[a] = d;
                }
                if self.nodes[b].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[b]);
                    for (di, g) in d.iter_mut().zip(gout) {
                        *di -= g;
                    }
                    self.grads[b] = d;
                }
            }
            Op::MulElem { a, b } => {
                let (a, b) = (*a, *b);
                if self.nodes[a].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[a]);
                    for ((di, g), v) in d.iter_mut().zip(gout).zip(self.nodes[b].value.data()) {
                        *di += g * v;
                    }
                    self.grads[a] = d;
                }
                if self.nodes[b].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[b]);
                    for ((di, g), v) in d.iter_mut().zip(gout).zip(self.nodes[a].value.data()) {
                        *di += g * v;
                    }
                    self.grads[b] = d;
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if self.nodes[x].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for (di, g) in d.iter_mut().zip(gout) {
                        *di += g * c;
                    }
                    self.grads[x] = d;
                }
            }
            Op::AddConst { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for (di, g) in d.iter_mut().zip(gout) {
                        *di += g;
                    }
                    self.grads[x] = d;
                }
            }
            Op::Neg { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for (di, g) in d.iter_mut().zip(gout) {
                        *di -= g;
                    }
                    self.grads[x] = d;
                }
            }
            Op::Exp { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let out_vals = self.nodes[idx].value.data().to_vec();
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for ((di, g), v) in d.iter_mut().zip(gout).zip(&out_vals) {
                        *di += g * v;
                    }
                    self.grads[x] = d;
                }
            }
            Op::Sqrt { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let out_vals = self.nodes[idx].value.data().to_vec();
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for ((di, g), v) in d.iter_mut().zip(gout).zip(&out_vals) {
                        *di += g / (2.0 * v);
                    }
                    self.grads[x] = d;
                }
            }
            Op::RowSum { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let d_cols = self.nodes[x].value.shape()[1];
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for (r, g) in gout.iter().enumerate() {
                        for di in &mut d[r * d_cols..(r + 1) * d_cols] {
                            *di += g;
                        }
                    }
                    self.grads[x] = d;
                }
            }
            Op::Mean { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let inv = 1.0 / self.nodes[x].value.len() as f64;
                    let g = gout[0] * inv;
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for di in d.iter_mut() {
                        *di += g;
                    }
                    self.grads[x] = d;
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.nodes[x].needs_grad {
                    let g = gout[0];
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for di in d.iter_mut() {
                        *di += g;
                    }
                    self.grads[x] = d;
                }
            }
            Op::SliceCols { x, start } => {
                let (x, start) = (*x, *start);
                if self.nodes[x].needs_grad {
                    let d_cols = self.nodes[x].value.shape()[1];
                    let len = self.nodes[idx].value.shape()[1];
                    let mut d = std::mem::take(&mut self.grads[x]);
                    for (r, grow) in gout.chunks(len).enumerate() {
                        for (di, g) in d[r * d_cols + start..r * d_cols + start + len]
                            .iter_mut()
                            .zip(grow)
                        {
                            *di += g;
                        }
                    }
                    self.grads[x] = d;
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
