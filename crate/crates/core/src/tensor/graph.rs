//! Recording graph over 2-D tensors.

use std::collections::HashMap;

use super::{softmax_in_place, ParamId, ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Affine(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Ln(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    ScatterCols(NodeId, Vec<usize>),
    PickRows(NodeId, Vec<usize>),
    Sum(NodeId),
    SumCols(NodeId),
    Min(NodeId, NodeId),
    LayerNorm(NodeId, NodeId, NodeId),
    MaskMul(NodeId, Vec<f64>),
}

enum Val {
    Owned(Tensor),
    Param(usize),
}

struct Node {
    val: Val,
    op: Op,
}

/// Gradients of a scalar output with respect to every parameter that took
/// part in the computation (`None` for untouched parameters).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adds `scale * self` into the store's accumulated gradients.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (p, g) in store.iter_mut().zip(&self.by_param) {
            if let Some(g) = g {
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    /// Dense form with zeros for untouched parameters.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Tensor> {
        self.by_param
            .into_iter()
            .zip(store.iter())
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape")
}

/// `a[m,k] * b[k,n]`
fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m,k] * b[n,k]^T`
fn mm_bt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k,m]^T * b[k,n]`
fn mm_at(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => t.add_assign(&delta),
        None => *slot = Some(delta),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].val {
            Val::Owned(t) => t,
            Val::Param(p) => &self.params.get(ParamId(*p)).value,
        }
    }

    fn push(&mut self, val: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            val: Val::Owned(val),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shaped = if t.shape().len() == 2 {
            t
        } else {
            let (r, c) = dims(&t);
            mat(r, c, t.into_data())
        };
        self.push(shaped, Op::Leaf)
    }

    /// Parameter reference. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id.0) {
            return n;
        }
        self.nodes.push(Node {
            val: Val::Param(id.0),
            op: Op::Param(id.0),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id.0, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims(av), dims(bv));
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let out = mat(m, n, mm(av.data(), m, k, bv.data(), n));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (m, n) = dims(av);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.data()[i * n + j];
            }
        }
        let t = mat(n, m, out);
        self.push(t, Op::Transpose(a))
    }

    fn zip_same(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if dims(av) != dims(bv) {
            return Err(shape_err(name, av, bv));
        }
        let (m, n) = dims(av);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(mat(m, n, data), op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same(a, b, "min", f64::min, Op::Min(a, b))
    }

    /// Broadcasts a `[1, n]` row over every row of `a[m, n]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        let (m, n) = dims(av);
        if dims(rv) != (1, n) {
            return Err(shape_err("add_row", av, rv));
        }
        let mut data = av.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(rv.data()) {
                *d += r;
            }
        }
        Ok(self.push(mat(m, n, data), Op::AddRow(a, row)))
    }

    /// Scales row `i` of `a[m, n]` by `s[i, 0]`.
    pub fn mul_col(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (av, sv) = (self.value(a), self.value(s));
        let (m, n) = dims(av);
        if dims(sv) != (m, 1) {
            return Err(shape_err("mul_col", av, sv));
        }
        let mut data = av.data().to_vec();
        for i in 0..m {
            let k = sv.data()[i];
            data[i * n..(i + 1) * n].iter_mut().for_each(|d| *d *= k);
        }
        Ok(self.push(mat(m, n, data), Op::MulCol(a, s)))
    }

    /// `alpha * a + beta` elementwise.
    pub fn affine(&mut self, a: NodeId, alpha: f64, beta: f64) -> NodeId {
        let v = self.value(a).map(|x| alpha * x + beta);
        self.push(v, Op::Affine(a, alpha))
    }

    pub fn scale(&mut self, a: NodeId, alpha: f64) -> NodeId {
        self.affine(a, alpha, 0.0)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.affine(a, -1.0, 1.0)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is excluded for `j > i`.
    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        let av = self.value(a);
        if av.data().iter().any(|x| x.is_nan()) {
            return Err(TensorError::NonFinite("softmax"));
        }
        let (m, n) = dims(av);
        let mut data = av.data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            if causal && i + 1 < n {
                softmax_in_place(&mut row[..=i]);
                row[i + 1..].iter_mut().for_each(|x| *x = 0.0);
            } else {
                softmax_in_place(row);
            }
        }
        Ok(self.push(mat(m, n, data), Op::Softmax(a)))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.data().iter().any(|x| x.is_nan()) {
            return Err(TensorError::NonFinite("log_softmax"));
        }
        let (m, n) = dims(av);
        let mut data = av.data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(mat(m, n, data), Op::LogSoftmax(a)))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(shape_err("concat_cols", self.value(parts[0]), v));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        Ok(self.push(mat(m, total, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != n {
                return Err(shape_err("concat_rows", self.value(parts[0]), v));
            }
            data.extend_from_slice(v.data());
            m += v.rows();
        }
        Ok(self.push(mat(m, n, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = dims(av);
        if start + len > n {
            return Err(shape_err("slice_cols", av, &Tensor::zeros(&[start, len])));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.row_slice(i)[start..start + len]);
        }
        Ok(self.push(mat(m, len, data), Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = dims(av);
        if start + len > m {
            return Err(shape_err("slice_rows", av, &Tensor::zeros(&[start, len])));
        }
        let data = av.data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(mat(len, n, data), Op::SliceRows(a, start)))
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.slice_rows(a, i, 1)
    }

    /// Embedding lookup: output row `r` is `table[ids[r]]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (m, n) = dims(tv);
        let mut data = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(TensorError::TargetRange { id, classes: m });
            }
            data.extend_from_slice(tv.row_slice(id));
        }
        Ok(self.push(mat(ids.len(), n, data), Op::GatherRows(table, ids.to_vec())))
    }

    /// `out[:, idx[j]] += x[:, j]` into `width` columns.
    pub fn scatter_cols(&mut self, x: NodeId, idx: &[usize], width: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (m, n) = dims(xv);
        if idx.len() != n || idx.iter().any(|&j| j >= width) {
            return Err(shape_err("scatter_cols", xv, &Tensor::zeros(&[idx.len(), width])));
        }
        let mut data = vec![0.0; m * width];
        for i in 0..m {
            for (j, &t) in idx.iter().enumerate() {
                data[i * width + t] += xv.data()[i * n + j];
            }
        }
        Ok(self.push(mat(m, width, data), Op::ScatterCols(x, idx.to_vec())))
    }

    /// Output `[m, 1]` with entry `i` equal to `x[i, targets[i]]`.
    pub fn pick_rows(&mut self, x: NodeId, targets: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let (m, n) = dims(xv);
        if targets.len() != m {
            return Err(shape_err("pick_rows", xv, &Tensor::zeros(&[targets.len()])));
        }
        let mut data = Vec::with_capacity(m);
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(TensorError::TargetRange { id: t, classes: n });
            }
            data.push(xv.data()[i * n + t]);
        }
        Ok(self.push(mat(m, 1, data), Op::PickRows(x, targets.to_vec())))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `[m, n] -> [m, 1]` row sums.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row_slice(i).iter().sum()).collect();
        let t = mat(av.rows(), 1, data);
        self.push(t, Op::SumCols(a))
    }

    /// Row-wise layer normalisation with `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (m, n) = dims(xv);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if dims(gv) != (1, n) || dims(bv) != (1, n) {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = xv.row_slice(i);
            let (mean, inv) = norm_stats(row);
            for j in 0..n {
                data.push((row[j] - mean) * inv * gv.data()[j] + bv.data()[j]);
            }
        }
        Ok(self.push(mat(m, n, data), Op::LayerNorm(x, gain, bias)))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(shape_err("mask_mul", av, &Tensor::zeros(&[mask.len()])));
        }
        let (m, n) = dims(av);
        let data = av.data().iter().zip(&mask).map(|(x, k)| x * k).collect();
        Ok(self.push(mat(m, n, data), Op::MaskMul(a, mask)))
    }

    /// `x W + b` with `W: [in, out]`, `b: [1, out]`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> Result<NodeId> {
        let wn = self.param(w);
        let y = self.matmul(x, wn)?;
        match b {
            Some(b) => {
                let bn = self.param(b);
                self.add_row(y, bn)
            }
            None => Ok(y),
        }
    }

    /// Reverse-mode pass from a `[1, 1]` output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let ov = self.value(output);
        if ov.len() != 1 {
            return Err(shape_err("backward", ov, &Tensor::scalar(0.0)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        let mut by_param: Vec<Option<Tensor>> = vec![None; self.params.len()];

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = self.value(NodeId(idx));
            let (m, n) = dims(out);
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => accumulate(&mut by_param[*p], g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = av.cols();
                    let da = mat(m, k, mm_bt(g.data(), m, n, bv.data(), k));
                    let db = mat(k, n, mm_at(av.data(), m, k, g.data(), n));
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Transpose(a) => {
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            d[j * m + i] = g.data()[i * n + j];
                        }
                    }
                    accumulate(&mut grads[a.0], mat(n, m, d));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], mat(m, n, da));
                    accumulate(&mut grads[b.0], mat(m, n, db));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = vec![0.0; m * n];
                    let mut db = vec![0.0; m * n];
                    for i in 0..m * n {
                        if av.data()[i] <= bv.data()[i] {
                            da[i] = g.data()[i];
                        } else {
                            db[i] = g.data()[i];
                        }
                    }
                    accumulate(&mut grads[a.0], mat(m, n, da));
                    accumulate(&mut grads[b.0], mat(m, n, db));
                }
                Op::AddRow(a, r) => {
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for (d, x) in dr.iter_mut().zip(g.row_slice(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                    accumulate(&mut grads[r.0], mat(1, n, dr));
                }
                Op::MulCol(a, s) => {
                    let (av, sv) = (self.value(*a), self.value(*s));
                    let mut da = g.data().to_vec();
                    let mut ds = vec![0.0; m];
                    for i in 0..m {
                        let k = sv.data()[i];
                        for j in 0..n {
                            ds[i] += g.data()[i * n + j] * av.data()[i * n + j];
                            da[i * n + j] *= k;
                        }
                    }
                    accumulate(&mut grads[a.0], mat(m, n, da));
                    accumulate(&mut grads[s.0], mat(m, 1, ds));
                }
                Op::Affine(a, alpha) => {
                    let alpha = *alpha;
                    accumulate(&mut grads[a.0], g.map(|x| alpha * x));
                }
                Op::Tanh(a) => {
                    let d = g.data().iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)).collect();
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::Sigmoid(a) => {
                    let d = g.data().iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }).collect();
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::Ln(a) => {
                    let av = self.value(*a);
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| if *x == 0.0 { 0.0 } else { x / y }).collect();
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::Softmax(a) => {
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gy = g.row_slice(i);
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            d[i * n + j] = y[j] * (gy[j] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::LogSoftmax(a) => {
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let y = out.row_slice(i);
                        let gy = g.row_slice(i);
                        let total: f64 = gy.iter().sum();
                        for j in 0..n {
                            d[i * n + j] = gy[j] - y[j].exp() * total;
                        }
                    }
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                        }
                        accumulate(&mut grads[p.0], mat(m, w, d));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        let d = g.data()[offset * n..(offset + r) * n].to_vec();
                        accumulate(&mut grads[p.0], mat(r, n, d));
                        offset += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (am, an) = dims(self.value(*a));
                    let mut d = vec![0.0; am * an];
                    for i in 0..m {
                        d[i * an + start..i * an + start + n].copy_from_slice(g.row_slice(i));
                    }
                    accumulate(&mut grads[a.0], mat(am, an, d));
                }
                Op::SliceRows(a, start) => {
                    let (am, an) = dims(self.value(*a));
                    let mut d = vec![0.0; am * an];
                    d[start * an..(start + m) * an].copy_from_slice(g.data());
                    accumulate(&mut grads[a.0], mat(am, an, d));
                }
                Op::GatherRows(t, ids) => {
                    let (tm, tn) = dims(self.value(*t));
                    let mut d = vec![0.0; tm * tn];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..tn {
                            d[id * tn + j] += g.data()[r * tn + j];
                        }
                    }
                    accumulate(&mut grads[t.0], mat(tm, tn, d));
                }
                Op::ScatterCols(x, idx) => {
                    let xn = idx.len();
                    let mut d = vec![0.0; m * xn];
                    for i in 0..m {
                        for (j, &t) in idx.iter().enumerate() {
                            d[i * xn + j] = g.data()[i * n + t];
                        }
                    }
                    accumulate(&mut grads[x.0], mat(m, xn, d));
                }
                Op::PickRows(x, targets) => {
                    let (xm, xn) = dims(self.value(*x));
                    let mut d = vec![0.0; xm * xn];
                    for (i, &t) in targets.iter().enumerate() {
                        d[i * xn + t] = g.data()[i];
                    }
                    accumulate(&mut grads[x.0], mat(xm, xn, d));
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let (am, an) = dims(av);
                    accumulate(&mut grads[a.0], Tensor::filled(&[am, an], g.data()[0]));
                }
                Op::SumCols(a) => {
                    let (am, an) = dims(self.value(*a));
                    let mut d = vec![0.0; am * an];
                    for i in 0..am {
                        d[i * an..(i + 1) * an].iter_mut().for_each(|x| *x = g.data()[i]);
                    }
                    accumulate(&mut grads[a.0], mat(am, an, d));
                }
                Op::LayerNorm(x, gain, bias) => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let mut dx = vec![0.0; m * n];
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        let row = xv.row_slice(i);
                        let gy = g.row_slice(i);
                        let (mean, inv) = norm_stats(row);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = (0..n).map(|j| gy[j] * gv.data()[j]).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dg[j] += gy[j] * xhat[j];
                            db[j] += gy[j];
                            dx[i * n + j] = inv / n as f64 * (n as f64 * dxhat[j] - s1 - xhat[j] * s2);
                        }
                    }
                    accumulate(&mut grads[x.0], mat(m, n, dx));
                    accumulate(&mut grads[gain.0], mat(1, n, dg));
                    accumulate(&mut grads[bias.0], mat(1, n, db));
                }
                Op::MaskMul(a, mask) => {
                    let d = g.data().iter().zip(mask).map(|(x, k)| x * k).collect();
                    accumulate(&mut grads[a.0], mat(m, n, d));
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            s.add(name, Tensor::uniform(&[r, c], 1.0, &mut rng));
        }
        s
    }

    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Result<NodeId>) {
        let report = grad_check(
            store,
            |s| {
                let mut g = Graph::new(s);
                let out = f(&mut g)?;
                let loss = g.value(out).data()[0];
                let grads = g.backward(out)?.into_dense(s);
                Ok((loss, grads))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn elementwise_and_matmul_ops() {
        let mut s = store(&[("a", 3, 4), ("b", 4, 2), ("c", 3, 2), ("r", 1, 2)], 1);
        check(&mut s, |g| {
            let ids: Vec<ParamId> = g.params().ids().collect();
            let a = g.param(ids[0]);
            let b = g.param(ids[1]);
            let c = g.param(ids[2]);
            let r = g.param(ids[3]);
            let ab = g.matmul(a, b)?;
            let t = g.tanh(ab);
            let sg = g.sigmoid(c);
            let m = g.mul(t, sg)?;
            let mc = g.min(m, c)?;
            let x = g.add_row(mc, r)?;
            let y = g.sub(x, c)?;
            let tr = g.transpose(y);
            let z = g.affine(tr, 0.5, 2.0);
            let l = g.ln(z);
            Ok(g.sum(l))
        });
    }

    #[test]
    fn softmax_layernorm_and_indexing_ops() {
        let mut s = store(&[("x", 3, 5), ("w", 5, 5), ("gain", 1, 5), ("bias", 1, 5), ("s", 3, 1)], 2);
        check(&mut s, |g| {
            let ids: Vec<ParamId> = g.params().ids().collect();
            let x = g.param(ids[0]);
            let w = g.param(ids[1]);
            let gain = g.param(ids[2]);
            let bias = g.param(ids[3]);
            let ln = g.layer_norm(x, gain, bias)?;
            let h = g.matmul(ln, w)?;
            let sm = g.softmax_rows(h, true)?;
            let cols = g.slice_cols(sm, 1, 3)?;
            let rows = g.slice_rows(h, 1, 2)?;
            let ls = g.log_softmax_rows(rows)?;
            let picked = g.pick_rows(ls, &[0, 4])?;
            let gathered = g.gather_rows(w, &[1, 1, 3])?;
            let sc = g.scatter_cols(cols, &[2, 0, 2], 4)?;
            let s_ = g.param(ids[4]);
            let mcol = g.mul_col(sc, s_)?;
            let cc = g.concat_cols(&[mcol, gathered])?;
            let sc2 = g.sum_cols(cc);
            let r = g.relu(sc2);
            let cr = g.concat_rows(&[r, picked])?;
            let a = g.mask_mul(cr, vec![1.0, 2.0, 0.0, -1.0, 0.5])?;
            Ok(g.sum(a))
        });
    }

    #[test]
    fn causal_softmax_ignores_future_columns() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, 5.0, 9.0, 1.0, 1.0, 9.0]).unwrap());
        let y = g.softmax_rows(x, true).unwrap();
        let v = g.value(y);
        assert_eq!(v.row_slice(0), &[1.0, 0.0, 0.0]);
        assert!((v.get(1, 0) - 0.5).abs() < 1e-15);
        assert_eq!(v.get(1, 2), 0.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
    }
}
