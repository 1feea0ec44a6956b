use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::{Error, Result};

const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Gelu { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, normalized: Vec<f64>, rstd: Vec<f64> },
    Softmax { a: Var },
    Conv1d { x: Var, kernel: Var, bias: Var, stride: usize },
    Reshape { a: Var },
    TransposeLast2 { a: Var },
    SliceLast { a: Var, start: usize },
    ConcatLast { parts: Vec<Var> },
    Sum { a: Var },
    RowAffine { a: Var, scale: Vec<f64> },
    MseLoss { pred: Var, target: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed primitives.
///
/// Leaves are either constants or trainable parameters. Every op checks its
/// output for NaN/Inf and fails instead of recording a poisoned value.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` only if `var` is not a trainable leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var` with the same layout as its value.
    pub fn wrt(&self, var: Var) -> &[f64] {
        self.get(var).map(Tensor::data).unwrap_or(&[])
    }
}

fn suffix_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::shape(op, format!("{sb:?} is not a suffix of {sa:?}")));
    }
    Ok(())
}

fn transpose_last2(shape: &[usize], data: &[f64]) -> Vec<f64> {
    let r = shape[shape.len() - 2];
    let c = shape[shape.len() - 1];
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

fn patches(x: &[f64], batch: usize, len: usize, patch: usize, stride: usize) -> Vec<f64> {
    let tokens = len / stride;
    let mut out = Vec::with_capacity(batch * tokens * patch);
    for series in x.chunks_exact(len) {
        for n in 0..tokens {
            for p in 0..patch {
                // Positions past the end replicate the final value.
                out.push(series[(n * stride + p).min(len - 1)]);
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a[..×k] · b[k×n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.shape().len() != 2 || va.last_dim() != vb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.rows(), vb.shape()[0], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, va.data(), vb.data(), &mut out);
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(&[a, b]);
        self.push("matmul", Tensor::from_parts(shape, out), Op::MatMul { a, b }, needs)
    }

    /// Batched product of `[B×m×k]` with `[B×k×n]`, or with `[B×n×k]`
    /// transposed when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let bad = || Error::shape("bmm", format!("{sa:?} x {sb:?} (transpose_b={transpose_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        let kb = if transpose_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; batch * m * n];
        for ((ab, bb), cb) in va
            .data()
            .chunks_exact(m * k)
            .zip(vb.data().chunks_exact(k * n))
            .zip(out.chunks_exact_mut(m * n))
        {
            if transpose_b {
                gemm_nt(m, k, n, ab, bb, cb);
            } else {
                gemm_nn(m, k, n, ab, bb, cb);
            }
        }
        let needs = self.needs(&[a, b]);
        let value = Tensor::from_parts(vec![batch, m, n], out);
        self.push("bmm", value, Op::BatchMatMul { a, b, transpose_b }, needs)
    }

    /// Elementwise sum; `b` may be a suffix of `a`'s shape and is then
    /// repeated over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        suffix_broadcast("add", va, vb)?;
        let mut out = va.data().to_vec();
        for chunk in out.chunks_exact_mut(vb.len()) {
            for (o, &y) in chunk.iter_mut().zip(vb.data()) {
                *o += y;
            }
        }
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        let needs = self.needs(&[a, b]);
        self.push("add", value, Op::Add { a, b }, needs)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        suffix_broadcast("mul", va, vb)?;
        let mut out = va.data().to_vec();
        for chunk in out.chunks_exact_mut(vb.len()) {
            for (o, &y) in chunk.iter_mut().zip(vb.data()) {
                *o *= y;
            }
        }
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        let needs = self.needs(&[a, b]);
        self.push("mul", value, Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let va = self.value(a);
        let out = va.data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        let needs = self.needs(&[a]);
        self.push("scale", value, Op::Scale { a, factor }, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        let needs = self.needs(&[a]);
        self.push("gelu", value, Op::Gelu { a }, needs)
    }

    /// Standardizes the last axis (variance guarded by 1e-5), then applies
    /// `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::shape(
                "layernorm",
                format!("last axis {d}, gamma {:?}, beta {:?}", vg.shape(), vb.shape()),
            ));
        }
        let mut normalized = vec![0.0; vx.len()];
        let mut rstd = Vec::with_capacity(vx.rows());
        let mut out = vec![0.0; vx.len()];
        for ((row, nrow), orow) in vx
            .data()
            .chunks_exact(d)
            .zip(normalized.chunks_exact_mut(d))
            .zip(out.chunks_exact_mut(d))
        {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / libm::sqrt(var + LAYERNORM_EPS);
            rstd.push(r);
            for (i, (&v, nv)) in row.iter().zip(nrow.iter_mut()).enumerate() {
                *nv = (v - mean) * r;
                orow[i] = *nv * vg.data()[i] + vb.data()[i];
            }
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), out);
        let needs = self.needs(&[x, gamma, beta]);
        self.push("layernorm", value, Op::LayerNorm { x, gamma, beta, normalized, rstd }, needs)
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let d = va.last_dim();
        let mut out = va.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        let needs = self.needs(&[a]);
        self.push("softmax", value, Op::Softmax { a }, needs)
    }

    /// Strided 1-D convolution producing `floor(L / stride)` tokens.
    ///
    /// `x` is `[L]` or `[B×L]`, `kernel` is `[D×P]`, `bias` is `[D]`. The
    /// result is token-major, `[N×D]` or `[B×N×D]`. Windows that run past
    /// the end of the series read the final value repeatedly.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (vx, vk, vb) = (self.value(x), self.value(kernel), self.value(bias));
        if vk.shape().len() != 2 || vb.shape() != [vk.shape()[0]] || vx.shape().len() > 2 {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, kernel {:?}, bias {:?}", vx.shape(), vk.shape(), vb.shape()),
            ));
        }
        let (d, p) = (vk.shape()[0], vk.shape()[1]);
        let len = vx.last_dim();
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be at least 1".into()));
        }
        if len < p {
            return Err(Error::shape("conv1d", format!("series length {len} < kernel {p}")));
        }
        let batch = vx.rows();
        let tokens = len / stride;
        let cols = patches(vx.data(), batch, len, p, stride);
        let mut out = vec![0.0; batch * tokens * d];
        for row in out.chunks_exact_mut(d) {
            row.copy_from_slice(vb.data());
        }
        gemm_nt(batch * tokens, p, d, &cols, vk.data(), &mut out);
        let shape = if vx.shape().len() == 1 { vec![tokens, d] } else { vec![batch, tokens, d] };
        let needs = self.needs(&[x, kernel, bias]);
        let value = Tensor::from_parts(shape, out);
        self.push("conv1d", value, Op::Conv1d { x, kernel, bias, stride }, needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", va.shape())));
        }
        let value = Tensor::from_parts(shape.to_vec(), va.data().to_vec());
        let needs = self.needs(&[a]);
        self.push("reshape", value, Op::Reshape { a }, needs)
    }

    /// Row-major flatten to one axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.reshape(a, &[n])
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let s = va.shape();
        if s.len() < 2 {
            return Err(Error::shape("transpose", format!("{s:?}")));
        }
        let out = transpose_last2(s, va.data());
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        let needs = self.needs(&[a]);
        self.push("transpose", Tensor::from_parts(shape, out), Op::TransposeLast2 { a }, needs)
    }

    /// `a[..., start..start + len]`
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let d = va.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::shape("slice", format!("{start}+{len} of {d}")));
        }
        let mut out = Vec::with_capacity(va.rows() * len);
        for row in va.data().chunks_exact(d) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let needs = self.needs(&[a]);
        self.push("slice", Tensor::from_parts(shape, out), Op::SliceLast { a, start }, needs)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat"));
        };
        let lead = &self.value(first).shape()[..self.value(first).shape().len() - 1];
        let mut width = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != *lead {
                return Err(Error::shape("concat", format!("{s:?} vs leading {lead:?}")));
            }
            width += s[s.len() - 1];
        }
        let rows = self.value(first).rows();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let d = v.last_dim();
                out.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let needs = self.needs(parts);
        let op = Op::ConcatLast { parts: parts.to_vec() };
        self.push("concat", Tensor::from_parts(shape, out), op, needs)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(&[a]);
        self.push("sum", Tensor::scalar(total), Op::Sum { a }, needs)
    }

    /// `out[r, :] = a[r, :] * scale[r] + shift[r]` for every row `r` of the
    /// leading axes. `scale` and `shift` are constants.
    pub fn row_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let va = self.value(a);
        let (rows, d) = (va.rows(), va.last_dim());
        if scale.len() != rows || shift.len() != rows {
            return Err(Error::shape(
                "row_affine",
                format!("{rows} rows, {} scales, {} shifts", scale.len(), shift.len()),
            ));
        }
        let mut out = va.data().to_vec();
        for ((row, &s), &t) in out.chunks_exact_mut(d).zip(scale).zip(shift) {
            for v in row {
                *v = *v * s + t;
            }
        }
        let needs = self.needs(&[a]);
        let value = Tensor::from_parts(va.shape().to_vec(), out);
        self.push("row_affine", value, Op::RowAffine { a, scale: scale.to_vec() }, needs)
    }

    /// Squared error summed over the last axis and averaged over the rows.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", vp.shape(), vt.shape())));
        }
        let sse: f64 = vp.data().iter().zip(vt.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let loss = sse / vp.rows() as f64;
        let needs = self.needs(&[pred, target]);
        self.push("mse_loss", Tensor::scalar(loss), Op::MseLoss { pred, target }, needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let len = self.value(loss).len();
        if len != 1 {
            return Err(Error::NonScalarLoss { len });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let is_param = node.needs_grad && matches!(node.op, Op::Leaf);
            out.push(if is_param {
                let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                Some(Tensor::from_parts(node.value.shape().to_vec(), data))
            } else {
                None
            });
        }
        Ok(Gradients { grads: out })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[var.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), vb.shape()[0], vb.shape()[1]);
                acc(*a, &mut |da| gemm_nt(m, n, k, g, vb.data(), da));
                acc(*b, &mut |db| gemm_tn(m, k, n, va.data(), g, db));
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[1], va.shape()[2]);
                let n = node.value.shape()[2];
                let tb = *transpose_b;
                acc(*a, &mut |da| {
                    for ((gb, bb), dab) in g
                        .chunks_exact(m * n)
                        .zip(vb.data().chunks_exact(k * n))
                        .zip(da.chunks_exact_mut(m * k))
                    {
                        if tb {
                            gemm_nn(m, n, k, gb, bb, dab);
                        } else {
                            gemm_nt(m, n, k, gb, bb, dab);
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for ((gb, ab), dbb) in g
                        .chunks_exact(m * n)
                        .zip(va.data().chunks_exact(m * k))
                        .zip(db.chunks_exact_mut(k * n))
                    {
                        if tb {
                            gemm_tn(m, n, k, gb, ab, dbb);
                        } else {
                            gemm_tn(m, k, n, ab, gb, dbb);
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                let nb = self.value(*b).len();
                acc(*b, &mut |db| {
                    for chunk in g.chunks_exact(nb) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d += x);
                    }
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let nb = vb.len();
                acc(*a, &mut |da| {
                    for (dchunk, gchunk) in da.chunks_exact_mut(nb).zip(g.chunks_exact(nb)) {
                        for ((d, &x), &y) in dchunk.iter_mut().zip(gchunk).zip(vb.data()) {
                            *d += x * y;
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for (gchunk, achunk) in g.chunks_exact(nb).zip(va.data().chunks_exact(nb)) {
                        for ((d, &x), &y) in db.iter_mut().zip(gchunk).zip(achunk) {
                            *d += x * y;
                        }
                    }
                });
            }
            Op::Scale { a, factor } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += factor * x));
            }
            Op::Gelu { a } => {
                let va = self.value(*a);
                acc(*a, &mut |da| {
                    for ((d, &x), &gx) in da.iter_mut().zip(va.data()).zip(g) {
                        *d += gx * gelu_grad(x);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, normalized, rstd } => {
                let vg = self.value(*gamma);
                let d = vg.len();
                acc(*gamma, &mut |dg| {
                    for (grow, nrow) in g.chunks_exact(d).zip(normalized.chunks_exact(d)) {
                        for ((o, &gi), &ni) in dg.iter_mut().zip(grow).zip(nrow) {
                            *o += gi * ni;
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for grow in g.chunks_exact(d) {
                        db.iter_mut().zip(grow).for_each(|(o, &gi)| *o += gi);
                    }
                });
                acc(*x, &mut |dx| {
                    let mut dxhat = vec![0.0; d];
                    for (((dxrow, grow), nrow), &r) in dx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(normalized.chunks_exact(d))
                        .zip(rstd)
                    {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_n = 0.0;
                        for i in 0..d {
                            dxhat[i] = grow[i] * vg.data()[i];
                            mean_dxhat += dxhat[i];
                            mean_dxhat_n += dxhat[i] * nrow[i];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_n /= d as f64;
                        for i in 0..d {
                            dxrow[i] += r * (dxhat[i] - mean_dxhat - nrow[i] * mean_dxhat_n);
                        }
                    }
                });
            }
            Op::Softmax { a } => {
                let y = &node.value;
                let d = y.last_dim();
                acc(*a, &mut |da| {
                    for ((darow, grow), yrow) in
                        da.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(y.data().chunks_exact(d))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, &gi), &yi) in darow.iter_mut().zip(grow).zip(yrow) {
                            *o += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::Conv1d { x, kernel, bias, stride } => {
                let (vx, vk) = (self.value(*x), self.value(*kernel));
                let (d, p) = (vk.shape()[0], vk.shape()[1]);
                let len = vx.last_dim();
                let batch = vx.rows();
                let tokens = len / stride;
                let bn = batch * tokens;
                acc(*bias, &mut |db| {
                    for grow in g.chunks_exact(d) {
                        db.iter_mut().zip(grow).for_each(|(o, &gi)| *o += gi);
                    }
                });
                acc(*kernel, &mut |dk| {
                    let cols = patches(vx.data(), batch, len, p, *stride);
                    gemm_tn(bn, d, p, g, &cols, dk);
                });
                acc(*x, &mut |dx| {
                    let mut dcols = vec![0.0; bn * p];
                    gemm_nn(bn, d, p, g, vk.data(), &mut dcols);
                    for (dseries, dpatches) in
                        dx.chunks_exact_mut(len).zip(dcols.chunks_exact(tokens * p))
                    {
                        for n in 0..tokens {
                            for q in 0..p {
                                dseries[(n * stride + q).min(len - 1)] += dpatches[n * p + q];
                            }
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
            }
            Op::TransposeLast2 { a } => {
                let gt = transpose_last2(node.value.shape(), g);
                acc(*a, &mut |da| da.iter_mut().zip(&gt).for_each(|(d, &x)| *d += x));
            }
            Op::SliceLast { a, start } => {
                let d = self.value(*a).last_dim();
                let w = node.value.last_dim();
                acc(*a, &mut |da| {
                    for (darow, grow) in da.chunks_exact_mut(d).zip(g.chunks_exact(w)) {
                        darow[*start..*start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, &x)| *o += x);
                    }
                });
            }
            Op::ConcatLast { parts } => {
                let width = node.value.last_dim();
                let mut offset = 0;
                for &part in parts {
                    let w = self.value(part).last_dim();
                    acc(part, &mut |dp| {
                        for (dprow, grow) in dp.chunks_exact_mut(w).zip(g.chunks_exact(width)) {
                            dprow
                                .iter_mut()
                                .zip(&grow[offset..offset + w])
                                .for_each(|(o, &x)| *o += x);
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum { a } => {
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::RowAffine { a, scale } => {
                let d = node.value.last_dim();
                acc(*a, &mut |da| {
                    for ((darow, grow), &s) in da.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(scale) {
                        darow.iter_mut().zip(grow).for_each(|(o, &x)| *o += s * x);
                    }
                });
            }
            Op::MseLoss { pred, target } => {
                let (vp, vt) = (self.value(*pred), self.value(*target));
                let coef = 2.0 * g[0] / vp.rows() as f64;
                acc(*pred, &mut |dp| {
                    for ((o, &p), &t) in dp.iter_mut().zip(vp.data()).zip(vt.data()) {
                        *o += coef * (p - t);
                    }
                });
                acc(*target, &mut |dt| {
                    for ((o, &p), &t) in dt.iter_mut().zip(vp.data()).zip(vt.data()) {
                        *o -= coef * (p - t);
                    }
                });
            }
        }
    }
}
