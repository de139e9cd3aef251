//! Define-by-run tape. Every op appends a node; `backward` walks the tape in
//! reverse, so each node is visited once in reverse topological order.

use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        col: Vec<f64>,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    StackLast(Vec<Var>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    scope: Vec<String>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Pushes a name onto the scope path reported by non-finite errors.
    pub fn enter(&mut self, name: impl Into<String>) {
        self.scope.push(name.into());
    }

    pub fn exit(&mut self) {
        self.scope.pop();
    }

    pub fn scope_path(&self) -> String {
        if self.scope.is_empty() {
            "<root>".to_string()
        } else {
            self.scope.join(".")
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: name,
                scope: self.scope_path(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        self.enter(p.name.clone());
        let v = self.push("param", p.value.clone(), Op::Leaf);
        self.exit();
        let v = v?;
        self.nodes[v.0].param = Some(id);
        Ok(v)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dim(op, format!("expected a 2-D tensor, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let c = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], c), Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("add", out, Op::Add(a, b))
    }

    /// `x[..×n] + bias[n]`, broadcasting the bias over leading dims.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(bias).numel() != n {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} does not match {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = self.value(bias).data();
        let vx = self.value(x);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = kernels::softmax_rows(vx.data(), vx.last_dim());
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Normalises over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "affine {:?}/{:?} does not match {:?}",
                    self.shape(gamma),
                    self.shape(beta),
                    self.shape(x)
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let (xhat, inv_std) = kernels::normalize_rows(self.value(x).data(), n, eps);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut data = xhat.clone();
        for row in data.chunks_mut(n) {
            for ((v, gv), bv) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gv + bv;
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        self.push("gelu", out, Op::Gelu(x))
    }

    /// Cross-correlation of `x[C×H×W]` or `x[N×C×H×W]` with `kernel[O×C×kh×kw]`,
    /// zero padding on all sides.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (batched, n, c, h, w) = match *self.shape(x) {
            [c, h, w] => (false, 1, c, h, w),
            [n, c, h, w] => (true, n, c, h, w),
            ref s => return Err(Error::dim("conv2d", format!("input must be rank 3 or 4, got {s:?}"))),
        };
        let (o, kc, kh, kw) = match *self.shape(kernel) {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            ref s => return Err(Error::dim("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kc != c {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {:?} expects {kc} channels, input {:?} has {c}", self.shape(kernel), self.shape(x)),
            ));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        if self.value(bias).numel() != o {
            return Err(Error::dim("conv2d", format!("bias {:?} for {o} filters", self.shape(bias))));
        }
        let geom = ConvGeom {
            batch: n,
            c_in: c,
            h,
            w,
            c_out: o,
            kh,
            kw,
            stride,
            pad,
        };
        let col = kernels::im2col(self.value(x).data(), &geom);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = n * oh * ow;
        let mut y = kernels::matmul(self.value(kernel).data(), &col, o, c * kh * kw, cols);
        for (row, &b) in y.chunks_mut(cols).zip(self.value(bias).data()) {
            for v in row {
                *v += b;
            }
        }
        let data = kernels::cols_to_nchw(&y, &geom);
        let shape = if batched { vec![n, o, oh, ow] } else { vec![o, oh, ow] };
        self.push(
            "conv2d",
            Tensor::from_parts(shape, data),
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                col,
            },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2("transpose", x)?;
        let data = kernels::transpose(self.value(x).data(), r, c);
        self.push("transpose", Tensor::from_parts(vec![c, r], data), Op::Transpose(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_cols", format!("columns {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in src.chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        self.push("slice_cols", Tensor::from_parts(vec![r, len], data), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (r, _) = self.dims2("concat_cols", first)?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims2("concat_cols", p)?;
            if pr != r {
                return Err(Error::dim("concat_cols", format!("row counts {r} and {pr} differ")));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let v = self.value(p);
                let pc = v.last_dim();
                data.extend_from_slice(&v.data()[i * pc..(i + 1) * pc]);
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, c) = self.dims2("concat_rows", first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims2("concat_rows", p)?;
            if pc != c {
                return Err(Error::dim("concat_rows", format!("column counts {c} and {pc} differ")));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            Tensor::from_parts(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Stacks equally shaped tensors along a new trailing axis:
    /// `out[.., k] = parts[k][..]`.
    pub fn stack_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("stack_last", "no inputs"))?;
        let shape = self.shape(first).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::dim("stack_last", format!("shapes {shape:?} and {:?} differ", self.shape(p))));
            }
        }
        let k = parts.len();
        let n = self.value(first).numel();
        let mut data = vec![0.0; n * k];
        for (j, &p) in parts.iter().enumerate() {
            for (i, &v) in self.value(p).data().iter().enumerate() {
                data[i * k + j] = v;
            }
        }
        let mut out_shape = shape;
        out_shape.push(k);
        self.push("stack_last", Tensor::from_parts(out_shape, data), Op::StackLast(parts.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// `logsumexp(logits) − logits[label]` for a single logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = self.value(logits);
        let k = v.numel();
        if label >= k {
            return Err(Error::Contract(format!("label {label} out of range for {k} classes")));
        }
        let probs = kernels::softmax_rows(v.data(), k);
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.data().iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - v.data()[label];
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
        )
    }

    /// Reverse sweep from a scalar `loss`; returns ∂loss/∂p for every
    /// parameter leaf reachable from it. Intermediate gradients are dropped
    /// as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    op: "backward",
                    scope: format!("node {i}"),
                });
            }
            if let Some(id) = node.param {
                out.add(id, g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let bt = kernels::transpose(vb.data(), k, n);
                let ga = kernels::matmul(gd, &bt, m, n, k);
                let at = kernels::transpose(va.data(), m, k);
                let gb = kernels::matmul(&at, gd, k, m, n);
                send(*a, Tensor::from_parts(vec![m, k], ga));
                send(*b, Tensor::from_parts(vec![k, n], gb));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddBias(x, bias) => {
                let n = g.last_dim();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*x, g.clone());
                send(*bias, Tensor::from_parts(self.shape(*bias).to_vec(), gb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(va.data()).map(|(g, x)| g * x).collect();
                send(*a, Tensor::from_parts(g.shape().to_vec(), ga));
                send(*b, Tensor::from_parts(g.shape().to_vec(), gb));
            }
            Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = g.last_dim();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), dst) in y.chunks(n).zip(gd.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                send(*x, Tensor::from_parts(g.shape().to_vec(), gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = g.last_dim();
                let nf = n as f64;
                let gam = self.value(*gamma).data();
                let mut gg = vec![0.0; n];
                let mut gbeta = vec![0.0; n];
                let mut gx = vec![0.0; gd.len()];
                for (r, ((gr, xr), dst)) in gd
                    .chunks(n)
                    .zip(xhat.chunks(n))
                    .zip(gx.chunks_mut(n))
                    .enumerate()
                {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        gg[j] += gr[j] * xr[j];
                        gbeta[j] += gr[j];
                        let d = gr[j] * gam[j];
                        mean_d += d;
                        mean_dx += d * xr[j];
                    }
                    mean_d /= nf;
                    mean_dx /= nf;
                    let is = inv_std[r];
                    for j in 0..n {
                        dst[j] = is * (gr[j] * gam[j] - mean_d - xr[j] * mean_dx);
                    }
                }
                send(*x, Tensor::from_parts(g.shape().to_vec(), gx));
                send(*gamma, Tensor::from_parts(self.shape(*gamma).to_vec(), gg));
                send(*beta, Tensor::from_parts(self.shape(*beta).to_vec(), gbeta));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                let gx = gd.iter().zip(vx).map(|(g, &v)| g * kernels::gelu_grad(v)).collect();
                send(*x, Tensor::from_parts(g.shape().to_vec(), gx));
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                col,
            } => {
                let gy = kernels::nchw_to_cols(gd, geom);
                let cols = geom.batch * geom.out_h() * geom.out_w();
                let kdim = geom.c_in * geom.kh * geom.kw;
                let gb: Vec<f64> = gy.chunks(cols).map(|r| r.iter().sum()).collect();
                let colt = kernels::transpose(col, kdim, cols);
                let gk = kernels::matmul(&gy, &colt, geom.c_out, cols, kdim);
                let kt = kernels::transpose(self.value(*kernel).data(), geom.c_out, kdim);
                let gcol = kernels::matmul(&kt, &gy, kdim, geom.c_out, cols);
                let gx = kernels::col2im(&gcol, geom);
                send(*x, Tensor::from_parts(self.shape(*x).to_vec(), gx));
                send(*kernel, Tensor::from_parts(self.shape(*kernel).to_vec(), gk));
                send(*bias, Tensor::from_parts(self.shape(*bias).to_vec(), gb));
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                send(*x, Tensor::from_parts(vec![c, r], kernels::transpose(gd, r, c)));
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let len = g.last_dim();
                let mut gx = vec![0.0; r * c];
                for (i, row) in gd.chunks(len).enumerate() {
                    gx[i * c + start..i * c + start + len].copy_from_slice(row);
                }
                send(*x, Tensor::from_parts(vec![r, c], gx));
            }
            Op::ConcatCols(parts) => {
                let total = g.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = (self.shape(p)[0], self.shape(p)[1]);
                    let mut gp = Vec::with_capacity(r * c);
                    for row in gd.chunks(total) {
                        gp.extend_from_slice(&row[offset..offset + c]);
                    }
                    offset += c;
                    send(p, Tensor::from_parts(vec![r, c], gp));
                }
            }
            Op::SliceRows { x, start } => {
                let xs = self.shape(*x).to_vec();
                let c = xs[1];
                let mut gx = vec![0.0; xs[0] * c];
                gx[start * c..start * c + gd.len()].copy_from_slice(gd);
                send(*x, Tensor::from_parts(xs, gx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    let gp = gd[offset..offset + n].to_vec();
                    offset += n;
                    send(p, Tensor::from_parts(self.shape(p).to_vec(), gp));
                }
            }
            Op::Reshape(x) => send(*x, Tensor::from_parts(self.shape(*x).to_vec(), gd.to_vec())),
            Op::StackLast(parts) => {
                let k = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    let gp = gd.iter().skip(j).step_by(k).copied().collect();
                    send(p, Tensor::from_parts(self.shape(p).to_vec(), gp));
                }
            }
            Op::Sum(x) => send(*x, Tensor::full(self.shape(*x), gd[0])),
            Op::CrossEntropy { logits, label, probs } => {
                let mut gl: Vec<f64> = probs.iter().map(|p| p * gd[0]).collect();
                gl[*label] -= gd[0];
                send(*logits, Tensor::from_parts(self.shape(*logits).to_vec(), gl));
            }
        }
    }
}
