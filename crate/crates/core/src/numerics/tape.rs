use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gelu_grad_scalar, gelu_scalar, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Square(Var),
    Abs(Var),
    SmoothL1(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Wengert list of recorded operations. Nodes are appended in evaluation
/// order, so inputs always precede outputs and a reverse sweep is a valid
/// topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to the tracked leaves of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` did not reach the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected rank 2, got {s:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tensor whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// Records a tensor that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, x: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let value = self.value(x).map(f);
        let tracked = self.tracked_any(&[x]);
        self.push(value, op, tracked, name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for l in 0..k {
                let av = ad[i * k + l];
                if av == T::zero() {
                    continue;
                }
                let brow = &bd[l * n..(l + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
        let tracked = self.tracked_any(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), tracked, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(d[i * c + j]);
            }
        }
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), tracked, "transpose")
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let tracked = self.tracked_any(&[a, b]);
        self.push(value, op, tracked, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `x[.., n] + row[n]`, broadcasting `row` over every leading index.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(row).numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("row of {} for width {n}", self.value(row).numel()),
            ));
        }
        let rd = self.value(row).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + rd[i % n]).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let tracked = self.tracked_any(&[x, row]);
        self.push(value, Op::AddRow(x, row), tracked, "add_row")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, Op::Scale(x, c), "scale", |v| v * c)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = super::tensor::softmax(self.value(x), axis)?;
        let tracked = self.tracked_any(&[x]);
        self.push(value, Op::Softmax { x, axis }, tracked, "softmax")
    }

    /// Normalizes over the last axis with population variance, then applies
    /// `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::invalid("eps", "layer_norm eps must be positive"));
        }
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::shape("layer_norm", format!("affine params do not match width {d}")));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let dn = T::from_usize(d);
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracked = self.tracked_any(&[x, gamma, beta]);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, tracked, "layer_norm")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), "gelu", gelu_scalar)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), "square", |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Abs(x), "abs", |v| v.abs())
    }

    /// Huber loss with threshold 1, elementwise.
    pub fn smooth_l1(&mut self, x: Var) -> Result<Var> {
        let half = T::from_f64(0.5);
        self.unary(x, Op::SmoothL1(x), "smooth_l1", move |v| {
            if v.abs() < T::one() {
                half * v * v
            } else {
                v.abs() - half
            }
        })
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = self.value(x).gather_rows(idx)?;
        let tracked = self.tracked_any(&[x]);
        self.push(value, Op::GatherRows { x, idx: idx.to_vec() }, tracked, "gather_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.cols() != c {
                return Err(Error::shape("concat_rows", format!("{:?} with width {c}", v.shape())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let tracked = self.tracked_any(parts);
        self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows(parts.to_vec()), tracked, "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of width {c}", start + len)));
        }
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }, tracked, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let (r, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2(self.value(p), "concat_cols")?;
            if pr != r {
                return Err(Error::shape("concat_cols", format!("{pr} rows vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let tracked = self.tracked_any(parts);
        self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), tracked, "concat_cols")
    }

    /// Column means of a 2-D tensor, shape `[1, cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "mean_rows")?;
        let d = self.value(x).data();
        let inv = T::one() / T::from_usize(r);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(x), tracked, "mean_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), tracked, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel());
        let tracked = self.tracked_any(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), tracked, "mean")
    }

    /// Mean cross-entropy of `logits: [B, C]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = dims2(self.value(logits), "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", format!("{} labels for {b} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid("label", format!("{bad} >= {c} classes")));
        }
        let probs = super::tensor::softmax(self.value(logits), 1)?.into_data();
        let mut loss = T::zero();
        let lv = self.value(logits).data();
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss = loss + (lse - row[y]);
        }
        loss = loss / T::from_usize(b);
        let tracked = self.tracked_any(&[logits]);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, tracked, "cross_entropy")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked_any(&[x]);
        self.push(value, Op::Reshape(x), tracked, "reshape")
    }

    /// Reverse sweep from a scalar `loss`. Contributions from several
    /// consumers of one node are summed in tape order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::NotScalar { numel: n });
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (&self.nodes[i].op, g) {
                (Op::Leaf, Some(g)) => Some(Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("gradient shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    let bd = bv.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let brow = &bd[l * n..(l + 1) * n];
                            let s: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            da[i * k + l] = da[i * k + l] + s;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let ad = av.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for l in 0..k {
                            let a_il = ad[i * k + l];
                            if a_il == T::zero() {
                                continue;
                            }
                            for (d, &gv) in db[l * n..(l + 1) * n].iter_mut().zip(grow) {
                                *d = *d + a_il * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                if let Some(dx) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = dx[i * c + j] + g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d - gv);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.slot(grads, *a) {
                    for ((d, &gv), &y) in d.iter_mut().zip(g).zip(bd) {
                        *d = *d + gv * y;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((d, &gv), &x) in d.iter_mut().zip(g).zip(ad) {
                        *d = *d + gv * x;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
                if let Some(d) = self.slot(grads, *row) {
                    let n = d.len();
                    for (i, &gv) in g.iter().enumerate() {
                        d[i % n] = d[i % n] + gv;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv * *c);
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(d) = self.slot(grads, *x) {
                    let shape = out.shape();
                    let len = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let y = out.data();
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: T = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..len {
                                let p = base + j * inner;
                                d[p] = d[p] + y[p] * (g[p] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let dcols = out.cols();
                let gam = self.value(*gamma).data();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (i, &gv) in g.iter().enumerate() {
                        dg[i % dcols] = dg[i % dcols] + gv * xhat[i];
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % dcols] = db[i % dcols] + gv;
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let dn = T::from_usize(dcols);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * dcols..(r + 1) * dcols;
                        let (grow, hrow) = (&g[span.clone()], &xhat[span.clone()]);
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..dcols {
                            let dh = grow[j] * gam[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hrow[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..dcols {
                            let dh = grow[j] * gam[j];
                            let p = r * dcols + j;
                            dx[p] = dx[p] + rs * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => self.elementwise_back(*x, g, grads, gelu_grad_scalar),
            Op::Square(x) => self.elementwise_back(*x, g, grads, |v| v + v),
            Op::Abs(x) => self.elementwise_back(*x, g, grads, sign),
            Op::SmoothL1(x) => self.elementwise_back(*x, g, grads, |v| if v.abs() < T::one() { v } else { sign(v) }),
            Op::GatherRows { x, idx } => {
                if let Some(d) = self.slot(grads, *x) {
                    let c = out.cols();
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            d[src * c + j] = d[src * c + j] + g[k * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(d) = self.slot(grads, p) {
                        d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, &gv)| *d = *d + gv);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let w = out.cols();
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..out.rows() {
                        for j in 0..w {
                            d[i * c + start + j] = d[i * c + start + j] + g[i * w + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.slot(grads, p) {
                        for i in 0..out.rows() {
                            for j in 0..w {
                                d[i * w + j] = d[i * w + j] + g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                let inv = T::one() / T::from_usize(r);
                if let Some(d) = self.slot(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] = d[i * c + j] + g[j] * inv;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(x) => {
                let inv = T::one() / T::from_usize(self.value(*x).numel());
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|d| *d = *d + g[0] * inv);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / T::from_usize(labels.len());
                if let Some(d) = self.slot(grads, *logits) {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { T::one() } else { T::zero() };
                            d[i * c + j] = d[i * c + j] + scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
            }
        }
    }

    fn elementwise_back(&self, x: Var, g: &[T], grads: &mut [Option<Vec<T>>], df: impl Fn(T) -> T) {
        let xd = self.value(x).data();
        if let Some(d) = self.slot(grads, x) {
            for ((d, &gv), &v) in d.iter_mut().zip(g).zip(xd) {
                *d = *d + gv * df(v);
            }
        }
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        // triple-loop oracle
        let (ad, bd) = ([1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]);
        let mut want = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    want[i * 2 + j] += ad[i * 2 + l] * bd[l * 2 + j];
                }
            }
        }
        assert_eq!(tape.value(c).data(), &want);
        assert_eq!(want, [19.0, 22.0, 43.0, 50.0]);

        let id = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let ai = tape.matmul(a, id).unwrap();
        assert_eq!(tape.value(ai).data(), tape.value(a).data());
        let z = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let az = tape.matmul(a, z).unwrap();
        assert!(tape.value(az).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let sq = tape.square(x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn independent_sums_get_unit_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.0, 4.0])).unwrap();
        let y = tape.leaf(t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        let sx = tape.sum(x).unwrap();
        let sy = tape.sum(y).unwrap();
        let loss = tape.add(sx, sy).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(y).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0])).unwrap();
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        assert_eq!(tape.backward(x).unwrap_err(), Error::NotScalar { numel: 2 });
        let c = tape.constant(t(&[2], &[1.0, 2.0])).unwrap();
        let s = tape.sum(c).unwrap();
        assert_eq!(tape.backward(s).unwrap_err(), Error::Detached);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[1e300])).unwrap();
        assert_eq!(tape.square(x).unwrap_err(), Error::NonFinite { op: "square" });
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::ones(&[2])).unwrap();
        let zero = tape.constant(Tensor::zeros(&[2])).unwrap();
        let x = tape.constant(t(&[2, 2], &[5.0, 5.0, -1.0, 1.0])).unwrap();
        let y = tape.layer_norm(x, one, zero, 1e-6).unwrap();
        let d = tape.value(y).data();
        assert_eq!(&d[..2], &[0.0, 0.0]);
        assert!((d[2] + 1.0).abs() < 1e-6 && (d[3] - 1.0).abs() < 1e-6);

        let b = tape.constant(t(&[2], &[0.3, 0.3])).unwrap();
        let xc = tape.constant(t(&[1, 2], &[2.0, 2.0])).unwrap();
        let y = tape.layer_norm(xc, one, b, 1e-6).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, 0.3]);

        let bad = tape.constant(Tensor::ones(&[3])).unwrap();
        assert!(tape.layer_norm(x, bad, zero, 1e-6).is_err());
        assert!(tape.layer_norm(x, one, zero, 0.0).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_classes() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[3, 5])).unwrap();
        let ce = tape.cross_entropy(logits, &[0, 2, 4]).unwrap();
        assert_eq!(tape.value(ce).data()[0], 5.0f64.ln());
    }
}
